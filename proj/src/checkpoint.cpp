#include "spine/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

#include "spine/errors.hpp"

namespace spine {

namespace {

using nlohmann::json;

void append(std::vector<float>& payload, const std::vector<float>& values) {
  payload.insert(payload.end(), values.begin(), values.end());
}

void write_atomic(const std::filesystem::path& path, const void* bytes, std::size_t n) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(IoError::Kind::write_failure, "cannot write " + tmp.string());
    out.write(static_cast<const char*>(bytes), std::streamsize(n));
    if (!out) throw IoError(IoError::Kind::write_failure, "short write on " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError(IoError::Kind::write_failure, "cannot rename " + tmp.string());
}

}  // namespace

void save_checkpoint(UNet3D& net, const std::filesystem::path& manifest_path) {
  const NetConfig& cfg = net.config();
  json manifest;
  manifest["format"] = 1;
  manifest["net"] = {{"in_channels", cfg.in_channels},   {"out_channels", cfg.out_channels},
                     {"depth", cfg.depth},               {"base_width", cfg.base_width},
                     {"width_growth", cfg.width_growth}};
  const std::filesystem::path bin_name = manifest_path.stem().string() + ".bin";
  manifest["data"] = bin_name.string();

  std::vector<float> payload;
  json tensors = json::array();
  for (auto& np : net.named_parameters()) {
    json e;
    e["name"] = np.name;
    e["kind"] = "param";
    e["shape"] = np.param->value.shape();
    e["count"] = np.param->value.numel();
    e["step_count"] = np.param->step_count;
    e["offset_value"] = payload.size();
    append(payload, np.param->value.data());
    e["offset_m"] = payload.size();
    append(payload, np.param->adam_m);
    e["offset_v"] = payload.size();
    append(payload, np.param->adam_v);
    tensors.push_back(std::move(e));
  }
  for (auto& ns : net.named_state()) {
    json e;
    e["name"] = ns.name;
    e["kind"] = "state";
    e["count"] = ns.values->size();
    e["offset"] = payload.size();
    append(payload, *ns.values);
    tensors.push_back(std::move(e));
  }
  manifest["tensors"] = std::move(tensors);

  write_atomic(manifest_path.parent_path() / bin_name, payload.data(),
               payload.size() * sizeof(float));
  const std::string text = manifest.dump(2) + "\n";
  write_atomic(manifest_path, text.data(), text.size());
}

UNet3D load_checkpoint(const std::filesystem::path& manifest_path) {
  if (!std::filesystem::exists(manifest_path))
    throw IoError(IoError::Kind::missing_file, "no such checkpoint: " + manifest_path.string());
  std::ifstream in(manifest_path);
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw IoError(IoError::Kind::bad_header,
                  "malformed checkpoint manifest " + manifest_path.string() + ": " + e.what());
  }

  NetConfig cfg;
  std::vector<float> payload;
  try {
    const auto& n = manifest.at("net");
    cfg.in_channels = n.at("in_channels").get<int>();
    cfg.out_channels = n.at("out_channels").get<int>();
    cfg.depth = n.at("depth").get<int>();
    cfg.base_width = n.at("base_width").get<int>();
    cfg.width_growth = n.at("width_growth").get<int>();

    const std::filesystem::path bin =
        manifest_path.parent_path() / manifest.at("data").get<std::string>();
    std::ifstream raw(bin, std::ios::binary);
    if (!raw)
      throw IoError(IoError::Kind::missing_file, "missing checkpoint payload: " + bin.string());
    raw.seekg(0, std::ios::end);
    const std::int64_t bytes = raw.tellg();
    raw.seekg(0);
    payload.resize(std::size_t(bytes) / sizeof(float));
    raw.read(reinterpret_cast<char*>(payload.data()), bytes);
    if (!raw) throw IoError(IoError::Kind::payload_mismatch, "short read on " + bin.string());
  } catch (const json::exception& e) {
    throw IoError(IoError::Kind::bad_header,
                  "malformed checkpoint manifest " + manifest_path.string() + ": " + e.what());
  }

  Rng scratch(0);
  UNet3D net(cfg, scratch);

  auto take = [&payload, &manifest_path](std::vector<float>& dst, std::size_t offset,
                                         std::size_t count) {
    if (offset + count > payload.size())
      throw IoError(IoError::Kind::payload_mismatch,
                    "checkpoint payload too short: " + manifest_path.string());
    std::copy(payload.begin() + std::ptrdiff_t(offset),
              payload.begin() + std::ptrdiff_t(offset + count), dst.begin());
  };

  try {
    auto params = net.named_parameters();
    auto states = net.named_state();
    for (const auto& e : manifest.at("tensors")) {
      const std::string name = e.at("name").get<std::string>();
      const std::string kind = e.at("kind").get<std::string>();
      if (kind == "param") {
        Parameter* p = nullptr;
        for (auto& np : params)
          if (np.name == name) p = np.param;
        if (!p) throw ShapeError("checkpoint names unknown parameter " + name);
        const auto shape = e.at("shape").get<std::vector<std::int64_t>>();
        if (shape != p->value.shape())
          throw ShapeError("checkpoint shape mismatch for " + name);
        const std::size_t count = e.at("count").get<std::size_t>();
        if (count != p->value.data().size())
          throw ShapeError("checkpoint count mismatch for " + name);
        take(p->value.data(), e.at("offset_value").get<std::size_t>(), count);
        take(p->adam_m, e.at("offset_m").get<std::size_t>(), count);
        take(p->adam_v, e.at("offset_v").get<std::size_t>(), count);
        p->step_count = e.at("step_count").get<std::int64_t>();
      } else if (kind == "state") {
        std::vector<float>* s = nullptr;
        for (auto& ns : states)
          if (ns.name == name) s = ns.values;
        if (!s) throw ShapeError("checkpoint names unknown state " + name);
        const std::size_t count = e.at("count").get<std::size_t>();
        if (count != s->size()) throw ShapeError("checkpoint count mismatch for " + name);
        take(*s, e.at("offset").get<std::size_t>(), count);
      } else {
        throw IoError(IoError::Kind::bad_header, "unknown tensor kind in checkpoint: " + kind);
      }
    }
  } catch (const json::exception& e) {
    throw IoError(IoError::Kind::bad_header,
                  "malformed checkpoint manifest " + manifest_path.string() + ": " + e.what());
  }
  return net;
}

}  // namespace spine
