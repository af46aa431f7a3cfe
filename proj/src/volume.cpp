#include "spine/volume.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "spine/errors.hpp"

namespace spine {

Volume make_volume(Int3 dims, Double3 spacing, Double3 origin, float fill) {
  Volume v;
  v.dims = dims;
  v.spacing = spacing;
  v.origin = origin;
  v.data.assign(std::size_t(std::int64_t(dims.x) * dims.y * dims.z), fill);
  return v;
}

LabelVolume make_label_volume(Int3 dims, Double3 spacing, Double3 origin, std::uint16_t fill) {
  LabelVolume v;
  v.dims = dims;
  v.spacing = spacing;
  v.origin = origin;
  v.data.assign(std::size_t(std::int64_t(dims.x) * dims.y * dims.z), fill);
  return v;
}

namespace {

template <class V>
void validate_geometry(const V& v) {
  if (v.dims.x < 1 || v.dims.y < 1 || v.dims.z < 1)
    throw DataError("volume dims must be >= 1 per axis");
  if (!(v.spacing.x > 0.0) || !(v.spacing.y > 0.0) || !(v.spacing.z > 0.0))
    throw DataError("volume spacing must be > 0 per axis");
  if (std::int64_t(v.data.size()) != v.voxel_count())
    throw DataError("volume payload length does not match dims");
}

}  // namespace

void validate(const Volume& v) {
  validate_geometry(v);
  for (float f : v.data)
    if (!std::isfinite(f)) throw DataError("volume contains non-finite values");
}

void validate(const LabelVolume& v) { validate_geometry(v); }

Volume clip_normalize(const Volume& v) {
  Volume out = v;
  for (float& f : out.data) {
    const float c = std::min(std::max(f, -512.0f), 1024.0f);
    f = (c - 256.0f) / 768.0f;
  }
  return out;
}

namespace {

int round_dim(double value) {
  const long long r = std::llround(value);  // half away from zero
  return int(std::max(1ll, r));
}

// Continuous source index for a physical coordinate under the voxel-center
// convention. Index i covers position origin + (i + 0.5) * spacing.
inline double to_index(double pos_mm, double origin, double spacing) {
  return (pos_mm - origin) / spacing - 0.5;
}

}  // namespace

Volume resample_isotropic(const Volume& v, double target_mm, Interp mode) {
  if (!(target_mm > 0.0)) throw DataError("resample target spacing must be > 0");
  Int3 od{round_dim(v.dims.x * v.spacing.x / target_mm),
          round_dim(v.dims.y * v.spacing.y / target_mm),
          round_dim(v.dims.z * v.spacing.z / target_mm)};
  Volume out = make_volume(od, {target_mm, target_mm, target_mm}, v.origin);

  const int nx = v.dims.x, ny = v.dims.y, nz = v.dims.z;
  std::int64_t o = 0;
  for (int z = 0; z < od.z; ++z) {
    const double sz = to_index(out.origin.z + (z + 0.5) * target_mm, v.origin.z, v.spacing.z);
    for (int y = 0; y < od.y; ++y) {
      const double sy = to_index(out.origin.y + (y + 0.5) * target_mm, v.origin.y, v.spacing.y);
      for (int x = 0; x < od.x; ++x, ++o) {
        const double sx = to_index(out.origin.x + (x + 0.5) * target_mm, v.origin.x, v.spacing.x);
        if (mode == Interp::nearest) {
          const int ix = std::clamp(int(std::llround(sx)), 0, nx - 1);
          const int iy = std::clamp(int(std::llround(sy)), 0, ny - 1);
          const int iz = std::clamp(int(std::llround(sz)), 0, nz - 1);
          out.data[o] = v.at(ix, iy, iz);
        } else {
          // clamp-to-edge trilinear
          const double cx = std::clamp(sx, 0.0, double(nx - 1));
          const double cy = std::clamp(sy, 0.0, double(ny - 1));
          const double cz = std::clamp(sz, 0.0, double(nz - 1));
          const int x0 = std::min(int(cx), nx - 1), y0 = std::min(int(cy), ny - 1),
                    z0 = std::min(int(cz), nz - 1);
          const int x1 = std::min(x0 + 1, nx - 1), y1 = std::min(y0 + 1, ny - 1),
                    z1 = std::min(z0 + 1, nz - 1);
          const double fx = cx - x0, fy = cy - y0, fz = cz - z0;
          const double c00 = v.at(x0, y0, z0) * (1 - fx) + v.at(x1, y0, z0) * fx;
          const double c10 = v.at(x0, y1, z0) * (1 - fx) + v.at(x1, y1, z0) * fx;
          const double c01 = v.at(x0, y0, z1) * (1 - fx) + v.at(x1, y0, z1) * fx;
          const double c11 = v.at(x0, y1, z1) * (1 - fx) + v.at(x1, y1, z1) * fx;
          const double c0 = c00 * (1 - fy) + c10 * fy;
          const double c1 = c01 * (1 - fy) + c11 * fy;
          out.data[o] = float(c0 * (1 - fz) + c1 * fz);
        }
      }
    }
  }
  return out;
}

LabelVolume resample_labels_to(const LabelVolume& src, Int3 dims, Double3 spacing,
                               Double3 origin) {
  LabelVolume out = make_label_volume(dims, spacing, origin);
  const int nx = src.dims.x, ny = src.dims.y, nz = src.dims.z;
  std::int64_t o = 0;
  for (int z = 0; z < dims.z; ++z) {
    const int iz = std::clamp(
        int(std::llround(to_index(origin.z + (z + 0.5) * spacing.z, src.origin.z, src.spacing.z))),
        0, nz - 1);
    for (int y = 0; y < dims.y; ++y) {
      const int iy = std::clamp(
          int(std::llround(to_index(origin.y + (y + 0.5) * spacing.y, src.origin.y, src.spacing.y))),
          0, ny - 1);
      for (int x = 0; x < dims.x; ++x, ++o) {
        const int ix = std::clamp(
            int(std::llround(to_index(origin.x + (x + 0.5) * spacing.x, src.origin.x, src.spacing.x))),
            0, nx - 1);
        out.data[o] = src.at(ix, iy, iz);
      }
    }
  }
  return out;
}

namespace {

template <class V>
V crop_impl(const V& v, const VoxelBox& box) {
  if (!box.valid() || !VoxelBox{{0, 0, 0}, v.dims}.contains(box))
    throw DataError("crop box not inside the volume");
  const Int3 e = box.extent();
  V out;
  out.dims = e;
  out.spacing = v.spacing;
  out.origin = {v.origin.x + box.lo.x * v.spacing.x, v.origin.y + box.lo.y * v.spacing.y,
                v.origin.z + box.lo.z * v.spacing.z};
  out.data.resize(std::size_t(out.voxel_count()));
  for (int z = 0; z < e.z; ++z)
    for (int y = 0; y < e.y; ++y)
      for (int x = 0; x < e.x; ++x)
        out.at(x, y, z) = v.at(x + box.lo.x, y + box.lo.y, z + box.lo.z);
  return out;
}

}  // namespace

Volume crop(const Volume& v, const VoxelBox& box) { return crop_impl(v, box); }
LabelVolume crop(const LabelVolume& v, const VoxelBox& box) { return crop_impl(v, box); }

std::map<std::uint16_t, VoxelBox> class_bounding_boxes(const LabelVolume& labels, int margin_vox) {
  std::map<std::uint16_t, VoxelBox> boxes;
  std::int64_t i = 0;
  for (int z = 0; z < labels.dims.z; ++z)
    for (int y = 0; y < labels.dims.y; ++y)
      for (int x = 0; x < labels.dims.x; ++x, ++i) {
        const std::uint16_t c = labels.data[i];
        if (c == 0) continue;
        auto it = boxes.find(c);
        if (it == boxes.end()) {
          boxes.emplace(c, VoxelBox{{x, y, z}, {x + 1, y + 1, z + 1}});
        } else {
          VoxelBox& b = it->second;
          b.lo = {std::min(b.lo.x, x), std::min(b.lo.y, y), std::min(b.lo.z, z)};
          b.hi = {std::max(b.hi.x, x + 1), std::max(b.hi.y, y + 1), std::max(b.hi.z, z + 1)};
        }
      }
  for (auto& [c, b] : boxes) b = b.expanded(margin_vox, labels.dims);
  return boxes;
}

LabelVolume largest_component(const LabelVolume& mask, int connectivity) {
  if (connectivity != 6 && connectivity != 26)
    throw DataError("connectivity must be 6 or 26");
  const Int3 d = mask.dims;
  const std::int64_t n = mask.voxel_count();
  std::vector<std::int32_t> comp(n, -1);
  std::vector<std::int64_t> stack;

  std::int64_t best_size = 0, best_seed = -1;
  std::int32_t best_id = -1, next_id = 0;

  std::vector<Int3> offsets;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (dx == 0 && dy == 0 && dz == 0) continue;
        if (connectivity == 6 && std::abs(dx) + std::abs(dy) + std::abs(dz) != 1) continue;
        offsets.push_back({dx, dy, dz});
      }

  for (std::int64_t seed = 0; seed < n; ++seed) {
    if (mask.data[seed] == 0 || comp[seed] >= 0) continue;
    const std::int32_t id = next_id++;
    std::int64_t size = 0;
    stack.push_back(seed);
    comp[seed] = id;
    while (!stack.empty()) {
      const std::int64_t cur = stack.back();
      stack.pop_back();
      ++size;
      const int x = int(cur % d.x);
      const int y = int((cur / d.x) % d.y);
      const int z = int(cur / (std::int64_t(d.x) * d.y));
      for (const Int3& off : offsets) {
        const int nx2 = x + off.x, ny2 = y + off.y, nz2 = z + off.z;
        if (nx2 < 0 || ny2 < 0 || nz2 < 0 || nx2 >= d.x || ny2 >= d.y || nz2 >= d.z) continue;
        const std::int64_t ni = mask.index(nx2, ny2, nz2);
        if (mask.data[ni] != 0 && comp[ni] < 0) {
          comp[ni] = id;
          stack.push_back(ni);
        }
      }
    }
    if (size > best_size) {  // strict: ties keep the earlier seed
      best_size = size;
      best_id = id;
      best_seed = seed;
    }
  }
  (void)best_seed;

  LabelVolume out = make_label_volume(d, mask.spacing, mask.origin);
  if (best_id >= 0)
    for (std::int64_t i = 0; i < n; ++i)
      if (comp[i] == best_id) out.data[i] = 1;
  return out;
}

}  // namespace spine
