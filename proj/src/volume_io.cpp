#include "spine/volume_io.hpp"

#include <bit>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "spine/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "raw payloads are little-endian; big-endian hosts are unsupported");

namespace spine {

namespace {

using nlohmann::json;

struct HeaderInfo {
  Int3 dims;
  Double3 spacing, origin;
  std::string dtype;
  std::filesystem::path raw_path;
};

HeaderInfo read_header(const std::filesystem::path& header_path) {
  if (!std::filesystem::exists(header_path))
    throw IoError(IoError::Kind::missing_file, "no such volume file: " + header_path.string());
  std::ifstream in(header_path);
  if (!in)
    throw IoError(IoError::Kind::missing_file, "cannot open volume file: " + header_path.string());

  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError(IoError::Kind::bad_header,
                  "malformed volume header " + header_path.string() + ": " + e.what());
  }

  HeaderInfo h;
  try {
    const auto d = j.at("dims");
    const auto s = j.at("spacing");
    const auto o = j.at("origin");
    if (d.size() != 3 || s.size() != 3 || o.size() != 3)
      throw IoError(IoError::Kind::bad_header,
                    "volume header fields must have 3 components: " + header_path.string());
    h.dims = {d[0].get<int>(), d[1].get<int>(), d[2].get<int>()};
    h.spacing = {s[0].get<double>(), s[1].get<double>(), s[2].get<double>()};
    h.origin = {o[0].get<double>(), o[1].get<double>(), o[2].get<double>()};
    h.dtype = j.at("dtype").get<std::string>();
    h.raw_path = header_path.parent_path() / j.at("data").get<std::string>();
  } catch (const json::exception& e) {
    throw IoError(IoError::Kind::bad_header,
                  "malformed volume header " + header_path.string() + ": " + e.what());
  }
  if (h.dims.x < 1 || h.dims.y < 1 || h.dims.z < 1 || !(h.spacing.x > 0) || !(h.spacing.y > 0) ||
      !(h.spacing.z > 0))
    throw IoError(IoError::Kind::bad_header,
                  "volume header has invalid dims/spacing: " + header_path.string());
  if (h.dtype != "f32" && h.dtype != "u16")
    throw IoError(IoError::Kind::bad_header,
                  "volume header dtype must be f32 or u16: " + header_path.string());
  return h;
}

template <class T>
std::vector<T> read_payload(const HeaderInfo& h) {
  std::ifstream raw(h.raw_path, std::ios::binary);
  if (!raw)
    throw IoError(IoError::Kind::missing_file, "missing raw payload: " + h.raw_path.string());
  raw.seekg(0, std::ios::end);
  const std::int64_t bytes = raw.tellg();
  raw.seekg(0);
  const std::int64_t expect = std::int64_t(h.dims.x) * h.dims.y * h.dims.z * sizeof(T);
  if (bytes != expect)
    throw IoError(IoError::Kind::payload_mismatch,
                  "payload length mismatch for " + h.raw_path.string() + ": got " +
                      std::to_string(bytes) + " bytes, expected " + std::to_string(expect));
  std::vector<T> data(std::size_t(expect / sizeof(T)));
  raw.read(reinterpret_cast<char*>(data.data()), expect);
  if (!raw)
    throw IoError(IoError::Kind::payload_mismatch, "short read on " + h.raw_path.string());
  return data;
}

// Write to a temp name and rename so partially written outputs never shadow
// good files.
void write_file_atomic(const std::filesystem::path& path, const void* bytes, std::size_t n) {
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

template <class V, class T>
void write_any(const V& v, const std::filesystem::path& header_path, const char* dtype) {
  validate(v);
  const std::filesystem::path raw_name = header_path.stem().string() + ".raw";
  json j;
  j["dims"] = {v.dims.x, v.dims.y, v.dims.z};
  j["spacing"] = {v.spacing.x, v.spacing.y, v.spacing.z};
  j["origin"] = {v.origin.x, v.origin.y, v.origin.z};
  j["dtype"] = dtype;
  j["data"] = raw_name.string();
  const std::string text = j.dump(2) + "\n";
  write_file_atomic(header_path.parent_path() / raw_name, v.data.data(),
                    v.data.size() * sizeof(T));
  write_file_atomic(header_path, text.data(), text.size());
}

}  // namespace

Volume read_volume(const std::filesystem::path& header_path) {
  const HeaderInfo h = read_header(header_path);
  if (h.dtype != "f32")
    throw IoError(IoError::Kind::bad_header,
                  "expected dtype f32 in " + header_path.string() + ", got " + h.dtype);
  Volume v;
  v.dims = h.dims;
  v.spacing = h.spacing;
  v.origin = h.origin;
  v.data = read_payload<float>(h);
  validate(v);
  return v;
}

LabelVolume read_label_volume(const std::filesystem::path& header_path) {
  const HeaderInfo h = read_header(header_path);
  if (h.dtype != "u16")
    throw IoError(IoError::Kind::bad_header,
                  "expected dtype u16 in " + header_path.string() + ", got " + h.dtype);
  LabelVolume v;
  v.dims = h.dims;
  v.spacing = h.spacing;
  v.origin = h.origin;
  v.data = read_payload<std::uint16_t>(h);
  validate(v);
  return v;
}

void write_volume(const Volume& v, const std::filesystem::path& header_path) {
  write_any<Volume, float>(v, header_path, "f32");
}

void write_label_volume(const LabelVolume& v, const std::filesystem::path& header_path) {
  write_any<LabelVolume, std::uint16_t>(v, header_path, "u16");
}

}  // namespace spine
