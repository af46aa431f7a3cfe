#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "spine/geometry.hpp"

namespace spine {

// Dense 3D scalar grid. Data is stored x-fastest: index = x + nx*(y + ny*z).
// Voxel centers sit at origin + (index + 0.5) * spacing, per axis.
struct Volume {
  Int3 dims;
  Double3 spacing{1.0, 1.0, 1.0};
  Double3 origin{0.0, 0.0, 0.0};
  std::vector<float> data;

  std::int64_t voxel_count() const { return std::int64_t(dims.x) * dims.y * dims.z; }
  std::int64_t index(int x, int y, int z) const {
    return x + std::int64_t(dims.x) * (y + std::int64_t(dims.y) * z);
  }
  float& at(int x, int y, int z) { return data[index(x, y, z)]; }
  float at(int x, int y, int z) const { return data[index(x, y, z)]; }
  Double3 voxel_center_mm(int x, int y, int z) const {
    return {origin.x + (x + 0.5) * spacing.x, origin.y + (y + 0.5) * spacing.y,
            origin.z + (z + 0.5) * spacing.z};
  }
};

// Same geometry as Volume but integer labels (class ids, instance ids).
struct LabelVolume {
  Int3 dims;
  Double3 spacing{1.0, 1.0, 1.0};
  Double3 origin{0.0, 0.0, 0.0};
  std::vector<std::uint16_t> data;

  std::int64_t voxel_count() const { return std::int64_t(dims.x) * dims.y * dims.z; }
  std::int64_t index(int x, int y, int z) const {
    return x + std::int64_t(dims.x) * (y + std::int64_t(dims.y) * z);
  }
  std::uint16_t& at(int x, int y, int z) { return data[index(x, y, z)]; }
  std::uint16_t at(int x, int y, int z) const { return data[index(x, y, z)]; }
  Double3 voxel_center_mm(int x, int y, int z) const {
    return {origin.x + (x + 0.5) * spacing.x, origin.y + (y + 0.5) * spacing.y,
            origin.z + (z + 0.5) * spacing.z};
  }
};

Volume make_volume(Int3 dims, Double3 spacing = {1, 1, 1}, Double3 origin = {0, 0, 0},
                   float fill = 0.0f);
LabelVolume make_label_volume(Int3 dims, Double3 spacing = {1, 1, 1}, Double3 origin = {0, 0, 0},
                              std::uint16_t fill = 0);

// Throws DataError if dims/spacing/payload-size invariants are broken or data
// contains non-finite values.
void validate(const Volume& v);
void validate(const LabelVolume& v);

// Clip HU to [-512, 1024], then map affinely onto [-1, 1]: (x - 256) / 768.
Volume clip_normalize(const Volume& v);

enum class Interp { linear, nearest };

// Resample onto isotropic spacing target_mm. Output dims are
// round(dim * spacing / target) (half away from zero), clamped to >= 1; the
// origin is preserved. Linear mode is trilinear with clamp-to-edge.
Volume resample_isotropic(const Volume& v, double target_mm, Interp mode);

// Nearest-neighbor label resampling onto an explicit target geometry.
LabelVolume resample_labels_to(const LabelVolume& src, Int3 dims, Double3 spacing,
                               Double3 origin);

// Tight per-class bounding boxes (absent classes omitted), expanded by
// margin_vox and clamped to the volume. Background is label 0.
std::map<std::uint16_t, VoxelBox> class_bounding_boxes(const LabelVolume& labels, int margin_vox);

// Axis-aligned crop; the origin shifts so physical positions are preserved.
Volume crop(const Volume& v, const VoxelBox& box);
LabelVolume crop(const LabelVolume& v, const VoxelBox& box);

// Keep only the largest connected component of a binary mask (values 0/1).
// connectivity is 6 or 26. Ties keep the component whose seed has the smallest
// linear index.
LabelVolume largest_component(const LabelVolume& mask, int connectivity);

}  // namespace spine
