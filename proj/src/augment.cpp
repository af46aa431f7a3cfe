#include "spine/augment.hpp"

#include <cmath>

#include "spine/errors.hpp"

namespace spine {

void validate(const AugmentSpec& spec) {
  if (spec.rotation_deg_min > spec.rotation_deg_max || spec.scale_min > spec.scale_max ||
      spec.noise_sigma_min > spec.noise_sigma_max)
    throw ConfigError("augment ranges must have min <= max");
  if (!(spec.scale_min > 0)) throw ConfigError("augment scale must be positive");
  if (spec.crop_dims.x < 1 || spec.crop_dims.y < 1 || spec.crop_dims.z < 1)
    throw ConfigError("augment crop_dims must be positive");
}

namespace {

template <class V, class Fill>
V pad_to(const V& v, Int3 dims, Fill fill) {
  if (v.dims.x >= dims.x && v.dims.y >= dims.y && v.dims.z >= dims.z) return v;
  V out = v;
  out.dims = {std::max(dims.x, v.dims.x), std::max(dims.y, v.dims.y), std::max(dims.z, v.dims.z)};
  out.data.assign(std::size_t(out.voxel_count()), fill);
  for (int z = 0; z < v.dims.z; ++z)
    for (int y = 0; y < v.dims.y; ++y)
      for (int x = 0; x < v.dims.x; ++x) out.at(x, y, z) = v.at(x, y, z);
  return out;
}

}  // namespace

std::pair<Volume, LabelVolume> random_crop(const Volume& v, const LabelVolume& labels, Int3 dims,
                                           Rng& rng, float fill_image) {
  if (v.dims != labels.dims) throw ShapeError("random_crop: image/label dims differ");
  const Volume vp = pad_to(v, dims, fill_image);
  const LabelVolume lp = pad_to(labels, dims, std::uint16_t(0));

  const int ox = int(rng.uniform_int(vp.dims.x - dims.x + 1));
  const int oy = int(rng.uniform_int(vp.dims.y - dims.y + 1));
  const int oz = int(rng.uniform_int(vp.dims.z - dims.z + 1));

  Volume cv = make_volume(dims, vp.spacing,
                          {vp.origin.x + ox * vp.spacing.x, vp.origin.y + oy * vp.spacing.y,
                           vp.origin.z + oz * vp.spacing.z});
  LabelVolume cl = make_label_volume(dims, cv.spacing, cv.origin);
  for (int z = 0; z < dims.z; ++z)
    for (int y = 0; y < dims.y; ++y)
      for (int x = 0; x < dims.x; ++x) {
        cv.at(x, y, z) = vp.at(x + ox, y + oy, z + oz);
        cl.at(x, y, z) = lp.at(x + ox, y + oy, z + oz);
      }
  return {std::move(cv), std::move(cl)};
}

std::pair<Volume, LabelVolume> apply_affine(const Volume& v, const LabelVolume& labels,
                                            const Double3& angles_deg, double scale,
                                            float fill_image) {
  if (v.dims != labels.dims) throw ShapeError("apply_affine: image/label dims differ");
  const double dr = 3.14159265358979323846 / 180.0;
  const double ax = angles_deg.x * dr, ay = angles_deg.y * dr, az = angles_deg.z * dr;
  const double cx = std::cos(ax), sx = std::sin(ax);
  const double cy = std::cos(ay), sy = std::sin(ay);
  const double cz = std::cos(az), sz = std::sin(az);
  // R = Rz * Ry * Rx
  const double r00 = cz * cy, r01 = cz * sy * sx - sz * cx, r02 = cz * sy * cx + sz * sx;
  const double r10 = sz * cy, r11 = sz * sy * sx + cz * cx, r12 = sz * sy * cx - cz * sx;
  const double r20 = -sy, r21 = cy * sx, r22 = cy * cx;
  // inverse: x_src = c + (1/s) * R^T (x_out - c), center in index space
  const double inv = 1.0 / scale;
  const double ccx = 0.5 * (v.dims.x - 1), ccy = 0.5 * (v.dims.y - 1), ccz = 0.5 * (v.dims.z - 1);

  Volume ov = make_volume(v.dims, v.spacing, v.origin, fill_image);
  LabelVolume ol = make_label_volume(labels.dims, labels.spacing, labels.origin);
  const int nx = v.dims.x, ny = v.dims.y, nz = v.dims.z;

  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        const double dx = x - ccx, dy = y - ccy, dz = z - ccz;
        const double sxp = ccx + inv * (r00 * dx + r10 * dy + r20 * dz);
        const double syp = ccy + inv * (r01 * dx + r11 * dy + r21 * dz);
        const double szp = ccz + inv * (r02 * dx + r12 * dy + r22 * dz);
        if (sxp < 0.0 || syp < 0.0 || szp < 0.0 || sxp > nx - 1 || syp > ny - 1 || szp > nz - 1)
          continue;  // fill values already in place
        const int ix = std::min(int(sxp), nx - 1), iy = std::min(int(syp), ny - 1),
                  iz = std::min(int(szp), nz - 1);
        const int jx = std::min(ix + 1, nx - 1), jy = std::min(iy + 1, ny - 1),
                  jz = std::min(iz + 1, nz - 1);
        const double fx = sxp - ix, fy = syp - iy, fz = szp - iz;
        const double c00 = v.at(ix, iy, iz) * (1 - fx) + v.at(jx, iy, iz) * fx;
        const double c10 = v.at(ix, jy, iz) * (1 - fx) + v.at(jx, jy, iz) * fx;
        const double c01 = v.at(ix, iy, jz) * (1 - fx) + v.at(jx, iy, jz) * fx;
        const double c11 = v.at(ix, jy, jz) * (1 - fx) + v.at(jx, jy, jz) * fx;
        ov.at(x, y, z) = float((c00 * (1 - fy) + c10 * fy) * (1 - fz) +
                               (c01 * (1 - fy) + c11 * fy) * fz);
        ol.at(x, y, z) = labels.at(int(std::llround(sxp)), int(std::llround(syp)),
                                   int(std::llround(szp)));
      }
  return {std::move(ov), std::move(ol)};
}

std::pair<Volume, LabelVolume> random_affine(const Volume& v, const LabelVolume& labels,
                                             const AugmentSpec& spec, Rng& rng) {
  validate(spec);
  const Double3 angles{rng.uniform(spec.rotation_deg_min, spec.rotation_deg_max),
                       rng.uniform(spec.rotation_deg_min, spec.rotation_deg_max),
                       rng.uniform(spec.rotation_deg_min, spec.rotation_deg_max)};
  const double scale = rng.uniform(spec.scale_min, spec.scale_max);
  return apply_affine(v, labels, angles, scale);
}

Volume add_gaussian_noise(const Volume& v, const AugmentSpec& spec, Rng& rng) {
  validate(spec);
  const double sigma = rng.uniform(spec.noise_sigma_min, spec.noise_sigma_max);
  Volume out = v;
  if (sigma > 0.0)
    for (float& f : out.data) f += float(rng.normal() * sigma);
  return out;
}

}  // namespace spine
