#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spine/labels.hpp"
#include "spine/nets.hpp"
#include "spine/volume.hpp"

namespace spine {

// The cascade works in a 1 mm isotropic "working" space. The cranio-caudal
// axis is z: z grows caudally, so "cranial" means lower z index. Volumes are
// converted to tensors as (D,H,W) = (z,y,x).

// Stage-1 forward: (normalized CT patch [1,1,D,H,W], window box) -> class
// logits [1,4,D,H,W]. Net-backed implementations ignore the box; test oracles
// use it to look up ground truth. The box lives in the working grid (padded
// grid when the volume is smaller than the window).
using SemanticLogitsFn = std::function<Tensor(const Tensor&, const VoxelBox&)>;

// Stage-2 forward: (CT patch, memory patch, patch box in working space) ->
// next-vertebra probabilities [1,1,D,H,W]. Net-backed implementations ignore
// the box; test oracles use it to look up ground truth.
using InstanceProbFn = std::function<Tensor(const Tensor&, const Tensor&, const VoxelBox&)>;

SemanticLogitsFn make_semantic_fn(UNet3D& net);
InstanceProbFn make_instance_fn(UNet3D& net);

// Sliding-window semantic inference: logits are averaged over overlapping
// windows (stride = window*(1-overlap), edge windows clamped inward; volumes
// smaller than the window are zero-padded and cropped back), then argmaxed
// into classes {0..3}.
LabelVolume stage1_infer(const SemanticLogitsFn& fn, const Volume& working, Int3 window,
                         double overlap_fraction);

struct SpineRoi {
  VoxelBox union_box;
  std::map<std::uint16_t, VoxelBox> class_boxes;
};

// Largest-component cleanup per class, per-class boxes, and their union
// expanded by margin_vox. Throws NoSpineFound when stage1 is all background.
SpineRoi spine_roi(const LabelVolume& stage1, int margin_vox = 8);

struct VertebraInstance {
  int id = 0;                 // value in the instance label volume
  std::int64_t voxels = 0;    // final-mask voxel count
  SpineClass coarse_class = SpineClass::thoracic;
  std::optional<AnatomicalLabel> anatomical;
  Double3 centroid_mm{};      // voxel-mean of the final mask, in mm
  bool anchored = false;      // label counted from a visible class boundary
  bool truncated = false;     // mask touches the volume edge
  VoxelBox bbox{};            // in the volume the mask currently lives in
};

struct Stage2Params {
  Int3 patch_dims{40, 40, 32};
  double prob_threshold = 0.5;
  int min_voxels = 30;
  int max_instances = 25;
};

struct Stage2Output {
  LabelVolume instance_labels;  // working space, value = instance id
  std::vector<VertebraInstance> instances;
};

// Iterative instance loop: memory starts empty (or from initial_memory, whose
// nonzero voxels block re-segmentation); the first patch sits at the cranial
// end of the ROI, later patches at the previous centroid shifted caudally by
// the previous cranio-caudal extent. Each prediction is binarized at
// prob_threshold, already-segmented voxels are removed, and the remainder is
// accepted if it has at least min_voxels voxels. Stops on a small prediction,
// on the patch center leaving the ROI, or at max_instances.
Stage2Output stage2_iterate(const InstanceProbFn& fn, const Volume& working,
                            const VoxelBox& roi, const Stage2Params& params,
                            const LabelVolume* initial_memory = nullptr);

// Majority vote of stage-1 classes over each instance mask. Ties take the
// previous (more cranial) instance's class when it is among the tied set,
// else the most cranial tied class; instances with no overlap inherit the
// nearest classified neighbor's class, with a warning.
void assign_classes(std::vector<VertebraInstance>& instances,
                    const LabelVolume& instance_labels, const LabelVolume& stage1,
                    std::vector<std::string>& warnings);

// Counting rule anchored at class boundaries: a visible C->T boundary sets
// the first thoracic instance to T1 (preferred when both boundaries are
// visible; the thoracic count is then checked against 12), a T->L boundary
// sets the first lumbar to L1. Without any boundary the cranial-most instance
// is assumed to be the first vertebra of its class and anchored=false.
// Ordinals counted past C1/L6 or into a different class leave the instance
// unlabeled, with a warning.
void assign_anatomical_labels(std::vector<VertebraInstance>& instances,
                              std::vector<std::string>& warnings);

struct CascadeResult {
  std::vector<VertebraInstance> instances;  // cranial to caudal
  LabelVolume stage1_labels;                // at input resolution
  LabelVolume instance_labels;              // at input resolution, value = id
  std::vector<std::string> warnings;
};

// Map working-space results back onto the input geometry (nearest neighbor),
// recompute centroids/voxel counts from the final masks, order instances
// cranial to caudal, and renumber ids accordingly.
CascadeResult finalize(const LabelVolume& stage1_working, Stage2Output&& stage2,
                       std::vector<std::string>&& warnings, Int3 dims, Double3 spacing,
                       Double3 origin);

struct CascadeParams {
  Int3 window{32, 32, 32};
  double overlap_fraction = 0.5;
  int roi_margin_vox = 8;
  Stage2Params stage2;
  double working_spacing_mm = 1.0;
};

// preprocess (clip_normalize + isotropic resample) -> stage1_infer ->
// spine_roi -> stage2_iterate -> assign_classes -> assign_anatomical_labels
// -> finalize.
CascadeResult run_cascade(const SemanticLogitsFn& semantic, const InstanceProbFn& instance,
                          const Volume& input_hu, const CascadeParams& params);

// Result bundle: stage1_labels.json/.raw, instance_labels.json/.raw,
// report.json, centroids.json.
void write_result_bundle(const CascadeResult& result, const std::filesystem::path& dir);
CascadeResult read_result_bundle(const std::filesystem::path& dir);

// Helpers shared with training and tests.
Tensor volume_patch_to_tensor(const Volume& v, const VoxelBox& box);
Tensor mask_patch_to_tensor(const LabelVolume& labels, const VoxelBox& box,
                            std::uint32_t id_below);  // 1.0 where 0 < id < id_below

}  // namespace spine
