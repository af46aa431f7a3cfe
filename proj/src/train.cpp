#include "spine/train.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "spine/checkpoint.hpp"
#include "spine/errors.hpp"
#include "spine/metrics.hpp"

namespace spine {

void validate(const TrainConfig& cfg) {
  validate(cfg.net);
  validate(cfg.augment);
  if (!(cfg.lr > 0)) throw ConfigError("lr must be > 0");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cfg.iterations < 1) throw ConfigError("iterations must be >= 1");
  if (!(cfg.bootstrap_keep > 0) || cfg.bootstrap_keep > 1)
    throw ConfigError("bootstrap_keep must be in (0, 1]");
  if (cfg.patch_dims.x < 1 || cfg.patch_dims.y < 1 || cfg.patch_dims.z < 1)
    throw ConfigError("patch_dims must be positive");
  if (cfg.jitter_vox < 0) throw ConfigError("jitter_vox must be >= 0");
  if (cfg.dataset_dir.empty()) throw ConfigError("dataset path missing");
  if (cfg.checkpoint_path.empty()) throw ConfigError("checkpoint path missing");
}

namespace {

using nlohmann::json;

Int3 int3_of(const json& j) {
  if (!j.is_array() || j.size() != 3) throw ConfigError("expected a 3-element array");
  return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
}

}  // namespace

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoError::Kind::missing_file, "no such config: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }

  static const std::set<std::string> known{
      "net",           "augment",   "lr",         "batch_size", "iterations",
      "seed",          "bootstrap_keep", "patch_dims", "jitter_vox", "dataset",
      "checkpoint",    "loss_csv"};
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
  }

  TrainConfig cfg;
  const std::filesystem::path base = path.parent_path();
  try {
    if (j.contains("net")) {
      const auto& n = j["net"];
      if (n.contains("in_channels")) cfg.net.in_channels = n["in_channels"].get<int>();
      if (n.contains("out_channels")) cfg.net.out_channels = n["out_channels"].get<int>();
      if (n.contains("depth")) cfg.net.depth = n["depth"].get<int>();
      if (n.contains("base_width")) cfg.net.base_width = n["base_width"].get<int>();
      if (n.contains("width_growth")) cfg.net.width_growth = n["width_growth"].get<int>();
    }
    if (j.contains("augment")) {
      const auto& a = j["augment"];
      if (a.contains("rotation_deg")) {
        cfg.augment.rotation_deg_min = a["rotation_deg"][0].get<double>();
        cfg.augment.rotation_deg_max = a["rotation_deg"][1].get<double>();
      }
      if (a.contains("scale")) {
        cfg.augment.scale_min = a["scale"][0].get<double>();
        cfg.augment.scale_max = a["scale"][1].get<double>();
      }
      if (a.contains("noise_sigma")) {
        cfg.augment.noise_sigma_min = a["noise_sigma"][0].get<double>();
        cfg.augment.noise_sigma_max = a["noise_sigma"][1].get<double>();
      }
      if (a.contains("crop_dims")) cfg.augment.crop_dims = int3_of(a["crop_dims"]);
    }
    if (j.contains("lr")) cfg.lr = j["lr"].get<double>();
    if (j.contains("batch_size")) cfg.batch_size = j["batch_size"].get<int>();
    if (j.contains("iterations")) cfg.iterations = j["iterations"].get<int>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("bootstrap_keep")) cfg.bootstrap_keep = j["bootstrap_keep"].get<double>();
    if (j.contains("patch_dims")) cfg.patch_dims = int3_of(j["patch_dims"]);
    if (j.contains("jitter_vox")) cfg.jitter_vox = j["jitter_vox"].get<int>();
    if (j.contains("dataset")) cfg.dataset_dir = base / j["dataset"].get<std::string>();
    if (j.contains("checkpoint")) cfg.checkpoint_path = base / j["checkpoint"].get<std::string>();
    if (j.contains("loss_csv")) cfg.loss_csv_path = base / j["loss_csv"].get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  return cfg;
}

DatasetCase prepare_case(const std::string& name, const PhantomTruth& truth) {
  DatasetCase c;
  c.name = name;
  c.normalized = resample_isotropic(clip_normalize(truth.image), 1.0, Interp::linear);
  c.class_labels = resample_labels_to(truth.class_labels, c.normalized.dims,
                                      c.normalized.spacing, c.normalized.origin);
  c.instance_labels = resample_labels_to(truth.instance_labels, c.normalized.dims,
                                         c.normalized.spacing, c.normalized.origin);
  c.anatomical = truth.anatomical;
  c.centroids_mm = truth.centroids_mm;

  const int n = truth.instance_count();
  std::vector<double> sx(std::size_t(n), 0), sy(std::size_t(n), 0), sz(std::size_t(n), 0);
  std::vector<std::int64_t> cnt(std::size_t(n), 0);
  std::vector<int> zlo(std::size_t(n), 1 << 30), zhi(std::size_t(n), 0);
  for (int z = 0; z < c.instance_labels.dims.z; ++z)
    for (int y = 0; y < c.instance_labels.dims.y; ++y)
      for (int x = 0; x < c.instance_labels.dims.x; ++x) {
        const std::uint16_t id = c.instance_labels.at(x, y, z);
        if (!id || id > n) continue;
        sx[id - 1] += x;
        sy[id - 1] += y;
        sz[id - 1] += z;
        cnt[id - 1] += 1;
        zlo[id - 1] = std::min(zlo[id - 1], z);
        zhi[id - 1] = std::max(zhi[id - 1], z + 1);
      }
  for (int i = 0; i < n; ++i) {
    if (cnt[std::size_t(i)] == 0)
      throw DataError("case " + name + ": instance " + std::to_string(i + 1) +
                      " has no voxels in the working grid");
    c.centroids_idx.push_back({sx[std::size_t(i)] / double(cnt[std::size_t(i)]),
                               sy[std::size_t(i)] / double(cnt[std::size_t(i)]),
                               sz[std::size_t(i)] / double(cnt[std::size_t(i)])});
    c.z_extent.push_back(zhi[std::size_t(i)] - zlo[std::size_t(i)]);
  }
  return c;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in)
    throw IoError(IoError::Kind::missing_file, "no manifest.json in " + dir.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError(IoError::Kind::bad_header, "malformed manifest.json: " + std::string(e.what()));
  }
  Dataset ds;
  try {
    for (const auto& name : j.at("cases")) {
      const std::string case_name = name.get<std::string>();
      ds.cases.push_back(prepare_case(case_name, load_phantom_case(dir / case_name)));
    }
  } catch (const json::exception& e) {
    throw IoError(IoError::Kind::bad_header, "malformed manifest.json: " + std::string(e.what()));
  }
  if (ds.cases.empty()) throw DataError("dataset " + dir.string() + " lists no cases");
  return ds;
}

Stage1Sample make_stage1_sample(const DatasetCase& c, const AugmentSpec& spec, Rng& rng) {
  auto [cv, cl] = random_crop(c.normalized, c.class_labels, spec.crop_dims, rng);
  auto [av, al] = random_affine(cv, cl, spec, rng);
  const Volume nv = add_gaussian_noise(av, spec, rng);

  Stage1Sample s;
  s.input = volume_patch_to_tensor(nv, {{0, 0, 0}, nv.dims});
  s.target.reserve(al.data.size());
  // tensor layout (z,y,x) matches the label volume's linear order
  for (auto v : al.data) s.target.push_back(v);
  return s;
}

Stage2Sample make_stage2_sample(const DatasetCase& c, int k, Int3 patch_dims, int jitter_vox,
                                const AugmentSpec& spec, Rng& rng, bool augment) {
  const int n = c.instance_count();
  if (k < 1 || k > n + 1) throw DataError("stage-2 target index out of range");
  const Int3 d = c.normalized.dims;
  if (patch_dims.x > d.x || patch_dims.y > d.y || patch_dims.z > d.z)
    throw DataError("stage-2 patch does not fit the working volume");

  Double3 center;
  if (k <= n) {
    center = c.centroids_idx[std::size_t(k - 1)];
  } else {  // termination sample: one step past the caudal-most instance
    center = c.centroids_idx[std::size_t(n - 1)];
    center.z += c.z_extent[std::size_t(n - 1)];
  }
  Int3 ci{int(std::llround(center.x)), int(std::llround(center.y)),
          int(std::llround(center.z))};
  if (augment && jitter_vox > 0) {
    ci.z += int(rng.uniform_int(2 * jitter_vox + 1)) - jitter_vox;
    ci.x += int(rng.uniform_int(5)) - 2;
    ci.y += int(rng.uniform_int(5)) - 2;
  }
  Int3 lo{std::clamp(ci.x - patch_dims.x / 2, 0, d.x - patch_dims.x),
          std::clamp(ci.y - patch_dims.y / 2, 0, d.y - patch_dims.y),
          std::clamp(ci.z - patch_dims.z / 2, 0, d.z - patch_dims.z)};
  const VoxelBox box{lo, {lo.x + patch_dims.x, lo.y + patch_dims.y, lo.z + patch_dims.z}};

  Volume img = crop(c.normalized, box);
  LabelVolume ids = crop(c.instance_labels, box);
  if (augment) {
    auto [av, al] = random_affine(img, ids, spec, rng);
    img = add_gaussian_noise(av, spec, rng);
    ids = std::move(al);
  }

  Stage2Sample s;
  s.ct = volume_patch_to_tensor(img, {{0, 0, 0}, img.dims});
  s.memory = Tensor::zeros({1, 1, patch_dims.z, patch_dims.y, patch_dims.x});
  s.target = Tensor::zeros({1, 1, patch_dims.z, patch_dims.y, patch_dims.x});
  float* mp = s.memory.data().data();
  float* tp = s.target.data().data();
  for (std::size_t i = 0; i < ids.data.size(); ++i) {
    const std::uint16_t id = ids.data[i];
    if (id == 0) continue;
    if (int(id) < k) mp[i] = 1.0f;
    if (int(id) == k) tp[i] = 1.0f;
  }
  return s;
}

namespace {

Tensor stack_batch(const std::vector<Tensor>& items) {
  const auto& s = items.front().shape();
  Tensor out = Tensor::zeros({std::int64_t(items.size()), s[1], s[2], s[3], s[4]});
  const std::int64_t per = items.front().numel();
  for (std::size_t b = 0; b < items.size(); ++b)
    std::copy(items[b].data().begin(), items[b].data().end(),
              out.data().begin() + std::int64_t(b) * per);
  return out;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<double>& losses) {
  if (path.empty()) return;
  std::ostringstream os;
  os << "iteration,loss\n";
  os.precision(9);
  for (std::size_t i = 0; i < losses.size(); ++i) os << (i + 1) << "," << losses[i] << "\n";
  const std::filesystem::path tmp = path.string() + ".tmp";
  std::ofstream out(tmp, std::ios::trunc);
  out << os.str();
  if (!out) throw IoError(IoError::Kind::write_failure, "cannot write " + path.string());
  out.close();
  std::filesystem::rename(tmp, path);
}

}  // namespace

void train_stage1(const TrainConfig& cfg) {
  validate(cfg);
  if (cfg.net.in_channels != 1 || cfg.net.out_channels != 4)
    throw ConfigError("stage-1 net must have in_channels=1, out_channels=4");
  tune_allocator();
  const Dataset ds = load_dataset(cfg.dataset_dir);

  Rng master(cfg.seed);
  Rng init_rng = master.split(0);
  UNet3D net = build_net(cfg.net, init_rng);
  auto params = net.parameters();

  std::vector<double> losses;
  for (int iter = 1; iter <= cfg.iterations; ++iter) {
    Rng it_rng = master.split(std::uint64_t(iter));
    std::vector<Tensor> inputs;
    std::vector<std::uint16_t> targets;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto& c = ds.cases[std::size_t(it_rng.uniform_int(std::int64_t(ds.cases.size())))];
      Stage1Sample s = make_stage1_sample(c, cfg.augment, it_rng);
      inputs.push_back(std::move(s.input));
      targets.insert(targets.end(), s.target.begin(), s.target.end());
    }
    for (auto* p : params) {
      p->value.impl()->ensure_grad();
      p->zero_grad();
    }
    const Tensor logits = net.forward_logits(stack_batch(inputs), true);
    const Tensor loss = bootstrapped_ce(logits, targets, cfg.bootstrap_keep);
    loss.backward();
    adam_step(params, cfg.lr);
    losses.push_back(double(loss.item()));
  }
  write_loss_csv(cfg.loss_csv_path, losses);
  save_checkpoint(net, cfg.checkpoint_path);
}

void train_stage2(const TrainConfig& cfg) {
  validate(cfg);
  if (cfg.net.in_channels != 2 || cfg.net.out_channels != 1)
    throw ConfigError("stage-2 net must have in_channels=2, out_channels=1");
  tune_allocator();
  const Dataset ds = load_dataset(cfg.dataset_dir);

  Rng master(cfg.seed);
  Rng init_rng = master.split(0);
  UNet3D net = build_net(cfg.net, init_rng);
  auto params = net.parameters();

  std::vector<double> losses;
  for (int iter = 1; iter <= cfg.iterations; ++iter) {
    Rng it_rng = master.split(std::uint64_t(iter));
    std::vector<Tensor> cts, mems, tgts;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto& c = ds.cases[std::size_t(it_rng.uniform_int(std::int64_t(ds.cases.size())))];
      const int k = 1 + int(it_rng.uniform_int(c.instance_count() + 1));
      Stage2Sample s =
          make_stage2_sample(c, k, cfg.patch_dims, cfg.jitter_vox, cfg.augment, it_rng, true);
      cts.push_back(std::move(s.ct));
      mems.push_back(std::move(s.memory));
      tgts.push_back(std::move(s.target));
    }
    for (auto* p : params) {
      p->value.impl()->ensure_grad();
      p->zero_grad();
    }
    const Tensor prob = forward_instance(net, stack_batch(cts), stack_batch(mems), true);
    const Tensor loss = dice_loss(prob, stack_batch(tgts));
    loss.backward();
    adam_step(params, cfg.lr);
    losses.push_back(double(loss.item()));
  }
  write_loss_csv(cfg.loss_csv_path, losses);
  save_checkpoint(net, cfg.checkpoint_path);
}

double eval_stage1_mean_dice(UNet3D& net, const Dataset& val, Int3 window,
                             double overlap_fraction) {
  const SemanticLogitsFn fn = make_semantic_fn(net);
  double sum = 0;
  int count = 0;
  for (const DatasetCase& c : val.cases) {
    const LabelVolume pred = stage1_infer(fn, c.normalized, window, overlap_fraction);
    for (std::uint16_t cls = 1; cls <= 3; ++cls) {
      bool present = false;
      for (auto v : c.class_labels.data)
        if (v == cls) {
          present = true;
          break;
        }
      if (!present) continue;
      LabelVolume a = make_label_volume(pred.dims, pred.spacing, pred.origin);
      LabelVolume b = make_label_volume(pred.dims, pred.spacing, pred.origin);
      for (std::size_t i = 0; i < pred.data.size(); ++i) {
        a.data[i] = pred.data[i] == cls;
        b.data[i] = c.class_labels.data[i] == cls;
      }
      sum += dice(a, b);
      ++count;
    }
  }
  if (count == 0) throw DataError("eval_stage1_mean_dice: no foreground classes in dataset");
  return sum / double(count);
}

double eval_stage2_mean_dice(UNet3D& net, const Dataset& val, Int3 patch_dims) {
  AugmentSpec no_aug;
  Rng dummy(0);
  double sum = 0;
  int count = 0;
  NoGradGuard no_grad;
  for (const DatasetCase& c : val.cases) {
    for (int k = 1; k <= c.instance_count(); ++k) {
      const Stage2Sample s = make_stage2_sample(c, k, patch_dims, 0, no_aug, dummy, false);
      const Tensor prob = forward_instance(net, s.ct, s.memory, false);
      std::int64_t inter = 0, np = 0, nt = 0;
      for (std::size_t i = 0; i < prob.data().size(); ++i) {
        const bool p = prob.data()[i] >= 0.5f;
        const bool t = s.target.data()[i] >= 0.5f;
        inter += p && t;
        np += p;
        nt += t;
      }
      sum += (np + nt) == 0 ? 1.0 : 2.0 * double(inter) / double(np + nt);
      ++count;
    }
  }
  if (count == 0) throw DataError("eval_stage2_mean_dice: dataset has no instances");
  return sum / double(count);
}

}  // namespace spine
