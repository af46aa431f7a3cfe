#pragma once

// Test-only oracles, deliberately written as brute force / naive enumerations,
// independent of the library's implementation paths.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "spine/tensor.hpp"
#include "spine/volume.hpp"

namespace oracle {

using spine::DTensor;

// Scalar probe for gradient checks: sum_i weights[i] * t[i].
inline DTensor weighted_sum(const DTensor& t, const std::vector<double>& weights) {
  if (weights.size() != t.data().size()) throw spine::ShapeError("weighted_sum size mismatch");
  auto w = std::make_shared<std::vector<double>>(weights);
  DTensor out = spine::detail::op_output<double>({1}, {t}, [w](spine::TensorImpl<double>& self) {
    auto* ti = self.parents[0].impl();
    if (!ti->requires_grad) return;
    const double g = self.grad[0];
    for (std::size_t i = 0; i < w->size(); ++i) ti->grad[i] += g * (*w)[i];
  });
  double s = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * t.data()[i];
  out.data()[0] = s;
  return out;
}

// Central finite differences against analytic gradients. loss_fn must rebuild
// the graph from `inputs` on every call. Returns the max relative error over
// all elements of all inputs, with rel = |a-f| / max(1, |a|, |f|).
inline double grad_check(std::vector<DTensor> inputs, const std::function<DTensor()>& loss_fn,
                         double h = 1e-4) {
  DTensor loss = loss_fn();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& in : inputs) analytic.push_back(in.grad());

  double max_rel = 0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto& x = inputs[t].data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double keep = x[i];
      double fp, fm;
      {
        spine::NoGradGuard no_grad;
        x[i] = keep + h;
        fp = loss_fn().item();
        x[i] = keep - h;
        fm = loss_fn().item();
        x[i] = keep;
      }
      const double fd = (fp - fm) / (2 * h);
      const double a = analytic[t][i];
      const double rel = std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

// Naive direct convolution, gather form, 3x3x3 stride 1 pad 1.
inline DTensor conv3d_naive(const DTensor& x, const DTensor& w, const DTensor& b) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  const std::int64_t N = xs[0], C = xs[1], D = xs[2], H = xs[3], W = xs[4], K = ws[0];
  DTensor out = DTensor::zeros({N, K, D, H, W});
  auto X = [&](std::int64_t n, std::int64_t c, std::int64_t z, std::int64_t y, std::int64_t xx) {
    return x.data()[(((n * C + c) * D + z) * H + y) * W + xx];
  };
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t k = 0; k < K; ++k)
      for (std::int64_t z = 0; z < D; ++z)
        for (std::int64_t y = 0; y < H; ++y)
          for (std::int64_t xx = 0; xx < W; ++xx) {
            double s = b.data()[k];
            for (std::int64_t c = 0; c < C; ++c)
              for (int kz = 0; kz < 3; ++kz)
                for (int ky = 0; ky < 3; ++ky)
                  for (int kx = 0; kx < 3; ++kx) {
                    const std::int64_t sz = z + kz - 1, sy = y + ky - 1, sx = xx + kx - 1;
                    if (sz < 0 || sy < 0 || sx < 0 || sz >= D || sy >= H || sx >= W) continue;
                    s += w.data()[(((k * C + c) * 3 + kz) * 3 + ky) * 3 + kx] * X(n, c, sz, sy, sx);
                  }
            out.data()[(((n * K + k) * D + z) * H + y) * W + xx] = s;
          }
  return out;
}

// Naive transposed convolution, gather form: out[o] sums x[i]*w[k] over all
// (i, k) with o = 2i + k - 1 per axis. Kernel [C,K,4,4,4].
inline DTensor deconv3d_naive(const DTensor& x, const DTensor& w, const DTensor& b) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  const std::int64_t N = xs[0], C = xs[1], D = xs[2], H = xs[3], W = xs[4], K = ws[1];
  const std::int64_t OD = 2 * D, OH = 2 * H, OW = 2 * W;
  DTensor out = DTensor::zeros({N, K, OD, OH, OW});
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t k = 0; k < K; ++k)
      for (std::int64_t oz = 0; oz < OD; ++oz)
        for (std::int64_t oy = 0; oy < OH; ++oy)
          for (std::int64_t ox = 0; ox < OW; ++ox) {
            double s = b.data()[k];
            for (std::int64_t c = 0; c < C; ++c)
              for (int kz = 0; kz < 4; ++kz)
                for (int ky = 0; ky < 4; ++ky)
                  for (int kx = 0; kx < 4; ++kx) {
                    const std::int64_t iz2 = oz + 1 - kz, iy2 = oy + 1 - ky, ix2 = ox + 1 - kx;
                    if (iz2 % 2 || iy2 % 2 || ix2 % 2) continue;
                    const std::int64_t iz = iz2 / 2, iy = iy2 / 2, ix = ix2 / 2;
                    if (iz < 0 || iy < 0 || ix < 0 || iz >= D || iy >= H || ix >= W) continue;
                    s += w.data()[(((c * K + k) * 4 + kz) * 4 + ky) * 4 + kx] *
                         x.data()[(((n * C + c) * D + iz) * H + iy) * W + ix];
                  }
            out.data()[(((n * K + k) * OD + oz) * OH + oy) * OW + ox] = s;
          }
  return out;
}

// Brute-force nearest-neighbor label lookup in physical coordinates.
inline std::uint16_t nearest_label_brute(const spine::LabelVolume& src, double px, double py,
                                         double pz) {
  double best = 1e300;
  std::uint16_t val = 0;
  for (int z = 0; z < src.dims.z; ++z)
    for (int y = 0; y < src.dims.y; ++y)
      for (int x = 0; x < src.dims.x; ++x) {
        const spine::Double3 c = src.voxel_center_mm(x, y, z);
        const double d2 = (c.x - px) * (c.x - px) + (c.y - py) * (c.y - py) +
                          (c.z - pz) * (c.z - pz);
        if (d2 < best - 1e-12) {
          best = d2;
          val = src.at(x, y, z);
        }
      }
  return val;
}

// Recursive-style flood fill oracle for connected components (6-connectivity).
// Returns sizes of all components and the mask of the largest one.
inline std::vector<std::int64_t> component_sizes_6(const spine::LabelVolume& mask) {
  const auto d = mask.dims;
  std::vector<char> seen(std::size_t(mask.voxel_count()), 0);
  std::vector<std::int64_t> sizes;
  for (std::int64_t seed = 0; seed < mask.voxel_count(); ++seed) {
    if (!mask.data[seed] || seen[seed]) continue;
    std::int64_t count = 0;
    std::vector<std::int64_t> queue{seed};
    seen[seed] = 1;
    while (!queue.empty()) {
      const std::int64_t cur = queue.back();
      queue.pop_back();
      ++count;
      const int x = int(cur % d.x), y = int((cur / d.x) % d.y),
                z = int(cur / (std::int64_t(d.x) * d.y));
      const int nb[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
      for (auto& o : nb) {
        const int nx = x + o[0], ny = y + o[1], nz = z + o[2];
        if (nx < 0 || ny < 0 || nz < 0 || nx >= d.x || ny >= d.y || nz >= d.z) continue;
        const std::int64_t ni = mask.index(nx, ny, nz);
        if (mask.data[ni] && !seen[ni]) {
          seen[ni] = 1;
          queue.push_back(ni);
        }
      }
    }
    sizes.push_back(count);
  }
  return sizes;
}

// Brute-force O(n^2) surface-distance oracle: direct pairwise scan over
// independently extracted 6-neighbor surfaces.
struct SurfDistBrute {
  double assd, hausdorff;
};

inline SurfDistBrute assd_hd_brute(const spine::LabelVolume& a, const spine::LabelVolume& b) {
  auto surface = [](const spine::LabelVolume& m) {
    std::vector<spine::Int3> s;
    for (int z = 0; z < m.dims.z; ++z)
      for (int y = 0; y < m.dims.y; ++y)
        for (int x = 0; x < m.dims.x; ++x) {
          if (!m.at(x, y, z)) continue;
          bool on_edge = false;
          const int nb[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0},
                                {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
          for (auto& o : nb) {
            const int nx = x + o[0], ny = y + o[1], nz = z + o[2];
            if (nx < 0 || ny < 0 || nz < 0 || nx >= m.dims.x || ny >= m.dims.y ||
                nz >= m.dims.z || !m.at(nx, ny, nz)) {
              on_edge = true;
              break;
            }
          }
          if (on_edge) s.push_back({x, y, z});
        }
    return s;
  };
  const auto sa = surface(a);
  const auto sb = surface(b);
  auto nearest = [&](const spine::Int3& p, const std::vector<spine::Int3>& set,
                     const spine::Double3& sp) {
    double best = 1e300;
    for (const auto& q : set) {
      const double dx = (p.x - q.x) * sp.x, dy = (p.y - q.y) * sp.y, dz = (p.z - q.z) * sp.z;
      best = std::min(best, dx * dx + dy * dy + dz * dz);
    }
    return std::sqrt(best);
  };
  double sum = 0, mx = 0;
  for (const auto& p : sa) {
    const double d = nearest(p, sb, a.spacing);
    sum += d;
    mx = std::max(mx, d);
  }
  for (const auto& p : sb) {
    const double d = nearest(p, sa, a.spacing);
    sum += d;
    mx = std::max(mx, d);
  }
  return {sum / double(sa.size() + sb.size()), mx};
}

inline spine::LabelVolume random_mask(spine::Int3 dims, spine::Double3 spacing, double density,
                                      spine::Rng& rng) {
  spine::LabelVolume m = spine::make_label_volume(dims, spacing);
  for (auto& v : m.data) v = rng.uniform() < density ? 1 : 0;
  return m;
}

}  // namespace oracle
