#pragma once

#include <filesystem>
#include <vector>

#include "spine/geometry.hpp"
#include "spine/labels.hpp"
#include "spine/rng.hpp"
#include "spine/volume.hpp"

namespace spine {

// Synthetic spine phantom: a stack of ellipsoidal vertebra bodies along a
// laterally curved cranio-caudal axis (z grows caudally). Thoracic bodies
// carry bilateral rib rods - the class-discriminative cue. Consecutive
// same-class bodies are linked by thin bony bridges that carry a class label
// but belong to no instance, so each class region is one connected component.
struct PhantomSpec {
  Int3 dims{48, 48, 96};
  Double3 spacing{1.0, 1.0, 1.0};
  int first_ordinal = 17;  // T10
  int last_ordinal = 22;   // L3
  Int3 vertebra_size_vox{14, 14, 8};
  int gap_vox = 2;
  double curvature_amp_vox = 3.0;
  int rib_length_vox = 8;
  double intensity_bone = 400.0;
  double intensity_soft = 40.0;
  double intensity_air = -1000.0;
  double noise_sigma_hu = 20.0;
  std::uint64_t seed = 1;
};

void validate(const PhantomSpec& spec);

struct PhantomTruth {
  Volume image;                 // HU intensities
  LabelVolume class_labels;     // 0=bg, 1=cervical, 2=thoracic, 3=lumbar
  LabelVolume instance_labels;  // 1..n cranial to caudal
  std::vector<AnatomicalLabel> anatomical;
  std::vector<Double3> centroids_mm;
  std::vector<std::uint8_t> truncated;

  int instance_count() const { return int(anatomical.size()); }
};

PhantomTruth generate_phantom(const PhantomSpec& spec);

// Crop every field to box. Instances left without voxels are removed (ids
// renumbered), partially visible ones keep their anatomical label and are
// flagged truncated; centroids are recomputed from the cropped masks.
PhantomTruth crop_phantom_fov(const PhantomTruth& t, const VoxelBox& box);

// Case directory layout: image.json/.raw, class_labels.json/.raw,
// instance_labels.json/.raw, truth.json, centroids.json.
void save_phantom_case(const PhantomTruth& t, const std::filesystem::path& dir);
PhantomTruth load_phantom_case(const std::filesystem::path& dir);

}  // namespace spine
