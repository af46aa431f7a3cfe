#pragma once

#include <filesystem>
#include <vector>

#include "spine/augment.hpp"
#include "spine/nets.hpp"
#include "spine/phantom.hpp"
#include "spine/pipeline.hpp"

namespace spine {

struct TrainConfig {
  NetConfig net;
  AugmentSpec augment;
  double lr = 0.001;
  int batch_size = 1;
  int iterations = 1;
  std::uint64_t seed = 1;
  double bootstrap_keep = 0.10;     // stage 1
  Int3 patch_dims{40, 40, 32};      // stage 2
  int jitter_vox = 4;               // stage 2
  std::filesystem::path dataset_dir;
  std::filesystem::path checkpoint_path;
  std::filesystem::path loss_csv_path;  // optional; empty disables
};

void validate(const TrainConfig& cfg);

// JSON config file; relative paths resolve against the config file location.
TrainConfig load_train_config(const std::filesystem::path& path);

// One phantom case resampled into the 1 mm working space, with per-instance
// index-space centroids and z extents precomputed for patch placement.
struct DatasetCase {
  std::string name;
  Volume normalized;            // clip-normalized, 1 mm isotropic
  LabelVolume class_labels;     // working grid
  LabelVolume instance_labels;  // working grid
  std::vector<AnatomicalLabel> anatomical;
  std::vector<Double3> centroids_mm;   // truth, input space
  std::vector<Double3> centroids_idx;  // working grid, index space
  std::vector<int> z_extent;           // working grid
  int instance_count() const { return int(anatomical.size()); }
};

struct Dataset {
  std::vector<DatasetCase> cases;
};

// Reads manifest.json {"cases":[dir,...]} and prepares every case.
Dataset load_dataset(const std::filesystem::path& dir);
DatasetCase prepare_case(const std::string& name, const PhantomTruth& truth);

struct Stage1Sample {
  Tensor input;                       // [1,1,D,H,W]
  std::vector<std::uint16_t> target;  // class per voxel, [D*H*W]
};

Stage1Sample make_stage1_sample(const DatasetCase& c, const AugmentSpec& spec, Rng& rng);

// Teacher-forced stage-2 sample for target instance k in [1, n+1]: memory
// holds exactly the truth masks of instances 1..k-1 inside the patch; k = n+1
// is the termination sample (memory = all instances, empty target, patch
// placed one step past the caudal end).
struct Stage2Sample {
  Tensor ct, memory, target;  // [1,1,D,H,W] each
};

Stage2Sample make_stage2_sample(const DatasetCase& c, int k, Int3 patch_dims, int jitter_vox,
                                const AugmentSpec& spec, Rng& rng, bool augment);

void train_stage1(const TrainConfig& cfg);
void train_stage2(const TrainConfig& cfg);

// Mean foreground per-class Dice of sliding-window stage-1 inference.
double eval_stage1_mean_dice(UNet3D& net, const Dataset& val, Int3 window,
                             double overlap_fraction);

// Mean teacher-forced target-vertebra Dice over all instances of all cases.
double eval_stage2_mean_dice(UNet3D& net, const Dataset& val, Int3 patch_dims);

}  // namespace spine
