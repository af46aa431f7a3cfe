#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "spine/phantom.hpp"
#include "spine/pipeline.hpp"

namespace spine::cli {

// Command implementations throw on failure; guarded() maps exceptions onto
// the process exit codes: 0 success, 2 usage error, 3 data error,
// 4 no spine found.
int guarded(const std::function<void()>& body);

// Dataset generation settings: each case draws a contiguous label window and
// a seed from the master seed.
struct PhantomGenConfig {
  PhantomSpec base;  // dims, sizes, intensities; label range is re-drawn per case
  int min_instances = 6;
  int max_instances = 8;
  bool require_class_boundary = true;
};

PhantomGenConfig load_phantom_gen_config(const std::filesystem::path& path);

struct PhantomGenArgs {
  std::filesystem::path out_dir;
  int count = 1;
  std::uint64_t seed = 1;
  std::filesystem::path config_path;  // optional JSON overriding the defaults
};
void cmd_phantom_gen(const PhantomGenArgs& args);

struct TrainArgs {
  std::filesystem::path config_path;
  std::optional<std::uint64_t> seed_override;
};
void cmd_train_stage1(const TrainArgs& args);
void cmd_train_stage2(const TrainArgs& args);

struct InferArgs {
  std::filesystem::path volume_path;
  std::filesystem::path stage1_checkpoint;
  std::filesystem::path stage2_checkpoint;
  std::filesystem::path out_dir;
  CascadeParams params;
  bool dump_slices = false;
};
void cmd_infer(const InferArgs& args);

struct EvalArgs {
  std::vector<std::filesystem::path> pred_dirs;
  std::vector<std::filesystem::path> truth_cases;  // case dir or its truth.json
  std::filesystem::path out_dir;
  double id_radius_mm = 20.0;
};
void cmd_eval(const EvalArgs& args);

}  // namespace spine::cli
