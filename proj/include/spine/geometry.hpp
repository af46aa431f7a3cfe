#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace spine {

struct Int3 {
  int x = 0, y = 0, z = 0;

  friend bool operator==(const Int3&, const Int3&) = default;
  int& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
  int operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

struct Double3 {
  double x = 0, y = 0, z = 0;

  friend bool operator==(const Double3&, const Double3&) = default;
  double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

inline double distance(const Double3& a, const Double3& b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

// Axis-aligned voxel box, lo inclusive, hi exclusive.
struct VoxelBox {
  Int3 lo, hi;

  friend bool operator==(const VoxelBox&, const VoxelBox&) = default;
  bool valid() const { return lo.x < hi.x && lo.y < hi.y && lo.z < hi.z; }
  Int3 extent() const { return {hi.x - lo.x, hi.y - lo.y, hi.z - lo.z}; }
  std::int64_t volume() const {
    const Int3 e = extent();
    return std::int64_t(e.x) * e.y * e.z;
  }
  bool contains(const Int3& p) const {
    return p.x >= lo.x && p.x < hi.x && p.y >= lo.y && p.y < hi.y && p.z >= lo.z && p.z < hi.z;
  }
  bool contains(const VoxelBox& other) const {
    return other.lo.x >= lo.x && other.lo.y >= lo.y && other.lo.z >= lo.z &&
           other.hi.x <= hi.x && other.hi.y <= hi.y && other.hi.z <= hi.z;
  }
  VoxelBox expanded(int margin, const Int3& dims) const {
    VoxelBox b;
    b.lo = {std::max(0, lo.x - margin), std::max(0, lo.y - margin), std::max(0, lo.z - margin)};
    b.hi = {std::min(dims.x, hi.x + margin), std::min(dims.y, hi.y + margin),
            std::min(dims.z, hi.z + margin)};
    return b;
  }
  VoxelBox united(const VoxelBox& other) const {
    VoxelBox b;
    b.lo = {std::min(lo.x, other.lo.x), std::min(lo.y, other.lo.y), std::min(lo.z, other.lo.z)};
    b.hi = {std::max(hi.x, other.hi.x), std::max(hi.y, other.hi.y), std::max(hi.z, other.hi.z)};
    return b;
  }
};

}  // namespace spine
