#include "spine/cli.hpp"

#include <fstream>
#include <iostream>
#include <set>

#include <json.hpp>

#include "spine/checkpoint.hpp"
#include "spine/errors.hpp"
#include "spine/metrics.hpp"
#include "spine/train.hpp"
#include "spine/volume_io.hpp"

namespace spine::cli {

namespace {

using nlohmann::json;

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  std::ofstream out(tmp, std::ios::trunc);
  out << text;
  if (!out) throw IoError(IoError::Kind::write_failure, "cannot write " + path.string());
  out.close();
  std::filesystem::rename(tmp, path);
}

}  // namespace

int guarded(const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const NoSpineFound& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

PhantomGenConfig load_phantom_gen_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoError::Kind::missing_file, "no such config: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  static const std::set<std::string> known{
      "dims",          "spacing",        "vertebra_size_vox", "gap_vox",
      "curvature_amp_vox", "rib_length_vox", "intensity_bone",    "intensity_soft",
      "intensity_air", "noise_sigma_hu", "min_instances",     "max_instances",
      "require_class_boundary"};
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!known.count(key)) throw ConfigError("unknown phantom config key '" + key + "'");
  }
  PhantomGenConfig cfg;
  try {
    auto int3_of = [](const json& a) {
      return Int3{a.at(0).get<int>(), a.at(1).get<int>(), a.at(2).get<int>()};
    };
    if (j.contains("dims")) cfg.base.dims = int3_of(j["dims"]);
    if (j.contains("spacing"))
      cfg.base.spacing = {j["spacing"][0].get<double>(), j["spacing"][1].get<double>(),
                          j["spacing"][2].get<double>()};
    if (j.contains("vertebra_size_vox")) cfg.base.vertebra_size_vox = int3_of(j["vertebra_size_vox"]);
    if (j.contains("gap_vox")) cfg.base.gap_vox = j["gap_vox"].get<int>();
    if (j.contains("curvature_amp_vox"))
      cfg.base.curvature_amp_vox = j["curvature_amp_vox"].get<double>();
    if (j.contains("rib_length_vox")) cfg.base.rib_length_vox = j["rib_length_vox"].get<int>();
    if (j.contains("intensity_bone")) cfg.base.intensity_bone = j["intensity_bone"].get<double>();
    if (j.contains("intensity_soft")) cfg.base.intensity_soft = j["intensity_soft"].get<double>();
    if (j.contains("intensity_air")) cfg.base.intensity_air = j["intensity_air"].get<double>();
    if (j.contains("noise_sigma_hu")) cfg.base.noise_sigma_hu = j["noise_sigma_hu"].get<double>();
    if (j.contains("min_instances")) cfg.min_instances = j["min_instances"].get<int>();
    if (j.contains("max_instances")) cfg.max_instances = j["max_instances"].get<int>();
    if (j.contains("require_class_boundary"))
      cfg.require_class_boundary = j["require_class_boundary"].get<bool>();
  } catch (const json::exception& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  if (cfg.min_instances < 1 || cfg.max_instances < cfg.min_instances)
    throw ConfigError("instance count range invalid");
  return cfg;
}

namespace {

// contiguous label windows of length n, optionally containing the C/T or T/L
// boundary
std::vector<int> window_candidates(int n, bool require_boundary) {
  std::vector<int> firsts;
  for (int first = 1; first + n - 1 <= AnatomicalLabel::kCount; ++first) {
    const int last = first + n - 1;
    const bool crosses_ct = first <= 7 && last >= 8;
    const bool crosses_tl = first <= 19 && last >= 20;
    if (!require_boundary || crosses_ct || crosses_tl) firsts.push_back(first);
  }
  return firsts;
}

}  // namespace

void cmd_phantom_gen(const PhantomGenArgs& args) {
  if (args.count < 1) throw ConfigError("count must be >= 1");
  PhantomGenConfig cfg;
  if (!args.config_path.empty()) cfg = load_phantom_gen_config(args.config_path);

  std::filesystem::create_directories(args.out_dir);
  Rng master(args.seed);
  json manifest;
  manifest["seed"] = args.seed;
  auto cases = json::array();
  for (int i = 0; i < args.count; ++i) {
    Rng case_rng = master.split(std::uint64_t(i) + 1);
    const int span = cfg.max_instances - cfg.min_instances + 1;
    const int n = cfg.min_instances + int(case_rng.uniform_int(span));
    const auto firsts = window_candidates(n, cfg.require_class_boundary);
    if (firsts.empty())
      throw DataError("no label window of length " + std::to_string(n) +
                      " satisfies the boundary requirement");
    PhantomSpec spec = cfg.base;
    spec.first_ordinal = firsts[std::size_t(case_rng.uniform_int(std::int64_t(firsts.size())))];
    spec.last_ordinal = spec.first_ordinal + n - 1;
    spec.seed = case_rng.next_u64();

    char name[32];
    std::snprintf(name, sizeof name, "case_%03d", i);
    save_phantom_case(generate_phantom(spec), args.out_dir / name);
    cases.push_back(name);
  }
  manifest["cases"] = std::move(cases);
  write_text_atomic(args.out_dir / "manifest.json", manifest.dump(2) + "\n");
}

void cmd_train_stage1(const TrainArgs& args) {
  TrainConfig cfg = load_train_config(args.config_path);
  if (args.seed_override) cfg.seed = *args.seed_override;
  train_stage1(cfg);
}

void cmd_train_stage2(const TrainArgs& args) {
  TrainConfig cfg = load_train_config(args.config_path);
  if (args.seed_override) cfg.seed = *args.seed_override;
  train_stage2(cfg);
}

namespace {

void write_pgm(const std::filesystem::path& path, int width, int height,
               const std::vector<std::uint8_t>& pixels) {
  std::ostringstream os;
  os << "P5\n" << width << " " << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(pixels.data()), std::streamsize(pixels.size()));
  write_text_atomic(path, os.str());
}

std::uint8_t hu_gray(float hu) {
  const float t = std::clamp((hu + 512.0f) / 1536.0f, 0.0f, 1.0f);
  return std::uint8_t(10.0f + 180.0f * t);
}

std::uint8_t instance_tint(std::uint16_t id) {
  return std::uint8_t(210 + (std::uint32_t(id) * 13) % 46);
}

void dump_slices(const Volume& hu, const CascadeResult& result,
                 const std::filesystem::path& dir) {
  const Int3 d = hu.dims;
  // mid-axial: x-y plane at z = nz/2
  {
    const int z = d.z / 2;
    std::vector<std::uint8_t> px(std::size_t(d.x) * d.y);
    for (int y = 0; y < d.y; ++y)
      for (int x = 0; x < d.x; ++x) {
        const std::uint16_t id = result.instance_labels.at(x, y, z);
        px[std::size_t(y) * d.x + x] = id ? instance_tint(id) : hu_gray(hu.at(x, y, z));
      }
    write_pgm(dir / "slice_axial.pgm", d.x, d.y, px);
  }
  // mid-sagittal: y-z plane at x = nx/2
  {
    const int x = d.x / 2;
    std::vector<std::uint8_t> px(std::size_t(d.y) * d.z);
    for (int z = 0; z < d.z; ++z)
      for (int y = 0; y < d.y; ++y) {
        const std::uint16_t id = result.instance_labels.at(x, y, z);
        px[std::size_t(z) * d.y + y] = id ? instance_tint(id) : hu_gray(hu.at(x, y, z));
      }
    write_pgm(dir / "slice_sagittal.pgm", d.y, d.z, px);
  }
}

}  // namespace

void cmd_infer(const InferArgs& args) {
  tune_allocator();
  const Volume input = read_volume(args.volume_path);
  UNet3D stage1 = load_checkpoint(args.stage1_checkpoint);
  UNet3D stage2 = load_checkpoint(args.stage2_checkpoint);
  if (stage1.config().in_channels != 1 || stage1.config().out_channels != 4)
    throw ConfigError("stage-1 checkpoint is not a 1-in/4-out net");
  if (stage2.config().in_channels != 2 || stage2.config().out_channels != 1)
    throw ConfigError("stage-2 checkpoint is not a 2-in/1-out net");

  const CascadeResult result =
      run_cascade(make_semantic_fn(stage1), make_instance_fn(stage2), input, args.params);
  write_result_bundle(result, args.out_dir);
  if (args.dump_slices) dump_slices(input, result, args.out_dir);

  std::cout << "instances: " << result.instances.size() << "\n";
  for (const VertebraInstance& inst : result.instances)
    std::cout << "  #" << inst.id << " " << to_string(inst.coarse_class) << " "
              << (inst.anatomical ? inst.anatomical->name() : std::string("?")) << " centroid ("
              << inst.centroid_mm.x << ", " << inst.centroid_mm.y << ", " << inst.centroid_mm.z
              << ") mm, " << inst.voxels << " voxels\n";
  for (const std::string& w : result.warnings) std::cout << "warning: " << w << "\n";
}

namespace {

struct CaseSegRow {
  std::string name;
  double dice_mean = 0.0;
  bool has_distances = false;
  double assd_mean = 0.0, hd_mean = 0.0;
};

LabelVolume binary_of(const LabelVolume& ids, std::uint16_t id) {
  LabelVolume m = make_label_volume(ids.dims, ids.spacing, ids.origin);
  for (std::size_t i = 0; i < ids.data.size(); ++i) m.data[i] = ids.data[i] == id;
  return m;
}

}  // namespace

void cmd_eval(const EvalArgs& args) {
  if (args.pred_dirs.size() != args.truth_cases.size() || args.pred_dirs.empty())
    throw DataError("eval needs matching, nonempty prediction and truth case lists");
  std::filesystem::create_directories(args.out_dir);

  std::vector<CaseSegRow> seg_rows;
  std::vector<LocIdCase> loc_cases;
  for (std::size_t ci = 0; ci < args.pred_dirs.size(); ++ci) {
    std::filesystem::path truth_dir = args.truth_cases[ci];
    if (truth_dir.extension() == ".json") truth_dir = truth_dir.parent_path();
    const PhantomTruth truth = load_phantom_case(truth_dir);
    const CascadeResult pred = read_result_bundle(args.pred_dirs[ci]);
    if (pred.instance_labels.dims != truth.instance_labels.dims)
      throw DataError("prediction and truth grids disagree for case " + truth_dir.string());

    CaseSegRow row;
    row.name = truth_dir.filename().string();
    LocIdCase loc;
    double assd_sum = 0, hd_sum = 0;
    int matched = 0;

    for (int i = 0; i < truth.instance_count(); ++i) {
      loc.truth.push_back({truth.anatomical[std::size_t(i)], truth.centroids_mm[std::size_t(i)]});
      const VertebraInstance* match = nullptr;
      for (const VertebraInstance& inst : pred.instances)
        if (inst.anatomical && *inst.anatomical == truth.anatomical[std::size_t(i)]) match = &inst;
      if (!match) continue;  // counts as dice 0 and an id miss
      const LabelVolume pm = binary_of(pred.instance_labels, std::uint16_t(match->id));
      const LabelVolume tm = binary_of(truth.instance_labels, std::uint16_t(i + 1));
      row.dice_mean += dice(pm, tm);
      assd_sum += assd(pm, tm);
      hd_sum += hausdorff(pm, tm);
      ++matched;
    }
    for (const VertebraInstance& inst : pred.instances)
      if (inst.anatomical) loc.pred.push_back({*inst.anatomical, inst.centroid_mm});

    row.dice_mean /= std::max(1, truth.instance_count());
    if (matched > 0) {
      row.has_distances = true;
      row.assd_mean = assd_sum / matched;
      row.hd_mean = hd_sum / matched;
    }
    seg_rows.push_back(row);
    loc_cases.push_back(std::move(loc));
  }

  std::ostringstream seg;
  seg << "case,dice,assd_mm,hd_mm\n";
  seg.precision(6);
  for (const CaseSegRow& r : seg_rows) {
    seg << r.name << "," << r.dice_mean << ",";
    if (r.has_distances)
      seg << r.assd_mean << "," << r.hd_mean;
    else
      seg << ",";
    seg << "\n";
  }
  write_text_atomic(args.out_dir / "segmentation.csv", seg.str());

  const LocIdMetrics loc = aggregate_loc_id(loc_cases, args.id_radius_mm);
  write_text_atomic(args.out_dir / "localization.csv", loc_id_csv(loc));
  std::cout << loc_id_text(loc);
}

}  // namespace spine::cli
