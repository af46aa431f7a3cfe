#pragma once

// Reverse-mode autodiff over dense N-d tensors, with exactly the layer set the
// two segmentation nets need. Templated on the scalar type: float for training
// and inference, double for finite-difference gradient verification.
//
// Layout for 5-d activations is [N, C, D, H, W] with W fastest, which matches
// the x-fastest Volume layout (W=x, H=y, D=z).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "spine/errors.hpp"
#include "spine/rng.hpp"

namespace spine {

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

// Keeps big short-lived activation buffers on the heap instead of bouncing
// them through mmap/munmap on every graph rebuild. Call once before training
// or batch inference.
void tune_allocator();

// Disables graph construction in scope (inference).
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev; }
};

template <class T>
class TensorT;

template <class T>
struct TensorImpl {
  std::vector<std::int64_t> shape;
  std::vector<T> data;
  std::vector<T> grad;  // same length as data once touched by backward()
  bool requires_grad = false;
  std::vector<TensorT<T>> parents;
  std::function<void(TensorImpl<T>&)> backward_fn;

  std::int64_t numel() const { return std::int64_t(data.size()); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

template <class T>
class TensorT {
 public:
  TensorT() = default;

  static TensorT zeros(std::vector<std::int64_t> shape, bool requires_grad = false) {
    TensorT t;
    t.impl_ = std::make_shared<TensorImpl<T>>();
    t.impl_->shape = std::move(shape);
    t.impl_->data.assign(std::size_t(product(t.impl_->shape)), T(0));
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  static TensorT full(std::vector<std::int64_t> shape, T value, bool requires_grad = false) {
    TensorT t = zeros(std::move(shape), requires_grad);
    std::fill(t.data().begin(), t.data().end(), value);
    return t;
  }

  static TensorT from_data(std::vector<std::int64_t> shape, std::vector<T> values,
                           bool requires_grad = false) {
    TensorT t;
    t.impl_ = std::make_shared<TensorImpl<T>>();
    t.impl_->shape = std::move(shape);
    if (std::int64_t(values.size()) != product(t.impl_->shape))
      throw ShapeError("tensor data length does not match shape");
    t.impl_->data = std::move(values);
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  static TensorT randn(std::vector<std::int64_t> shape, double stddev, Rng& rng,
                       bool requires_grad = false) {
    TensorT t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.data()) v = T(rng.normal() * stddev);
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const std::vector<std::int64_t>& shape() const { return impl_->shape; }
  std::int64_t numel() const { return impl_->numel(); }
  std::vector<T>& data() { return impl_->data; }
  const std::vector<T>& data() const { return impl_->data; }
  std::vector<T>& grad() { return impl_->grad; }
  const std::vector<T>& grad() const { return impl_->grad; }
  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  TensorImpl<T>* impl() const { return impl_.get(); }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor");
    return impl_->data[0];
  }

  void zero_grad() {
    if (impl_) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
  }

  // Reverse pass from a scalar output. Deterministic: topological order is a
  // function of graph construction order only.
  void backward() const {
    if (!impl_ || impl_->numel() != 1) throw ShapeError("backward() requires a scalar tensor");
    std::vector<TensorImpl<T>*> order;
    std::unordered_set<TensorImpl<T>*> seen;
    struct Frame {
      TensorImpl<T>* node;
      std::size_t next;
    };
    std::vector<Frame> stack{{impl_.get(), 0}};
    seen.insert(impl_.get());
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next < f.node->parents.size()) {
        TensorImpl<T>* p = f.node->parents[f.next++].impl();
        if (p && !seen.count(p)) {
          seen.insert(p);
          stack.push_back({p, 0});
        }
      } else {
        order.push_back(f.node);
        stack.pop_back();
      }
    }
    impl_->ensure_grad();
    impl_->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      TensorImpl<T>* node = *it;
      if (!node->backward_fn) continue;
      for (auto& p : node->parents)
        if (p.requires_grad()) p.impl()->ensure_grad();
      node->backward_fn(*node);
    }
  }

  static std::int64_t product(const std::vector<std::int64_t>& s) {
    std::int64_t p = 1;
    for (auto v : s) p *= v;
    return p;
  }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

using Tensor = TensorT<float>;
using DTensor = TensorT<double>;

namespace detail {

template <class T>
TensorT<T> op_output(std::vector<std::int64_t> shape, std::vector<TensorT<T>> parents,
                     std::function<void(TensorImpl<T>&)> bw) {
  bool needs = false;
  if (grad_mode())
    for (auto& p : parents) needs |= p.requires_grad();
  TensorT<T> out = TensorT<T>::zeros(std::move(shape), needs);
  if (needs) {
    out.impl()->parents = std::move(parents);
    out.impl()->backward_fn = std::move(bw);
  }
  return out;
}

struct Shape5 {
  std::int64_t n, c, d, h, w;
  std::int64_t spatial() const { return d * h * w; }
};

template <class T>
Shape5 as5(const TensorT<T>& t, const char* what) {
  if (t.shape().size() != 5) throw ShapeError(std::string(what) + " must be a 5-d tensor");
  const auto& s = t.shape();
  return {s[0], s[1], s[2], s[3], s[4]};
}

// --- row kernels -----------------------------------------------------------

// acc[x] += w0*row[x-1] + w1*row[x] + w2*row[x+1], zero-padded at both ends.
template <class T>
inline void fma_row_3tap(T* acc, const T* row, T w0, T w1, T w2, std::int64_t width) {
  if (width == 1) {
    acc[0] += w1 * row[0];
    return;
  }
  acc[0] += w1 * row[0] + w2 * row[1];
  for (std::int64_t x = 1; x < width - 1; ++x)
    acc[x] += w0 * row[x - 1] + w1 * row[x] + w2 * row[x + 1];
  acc[width - 1] += w0 * row[width - 2] + w1 * row[width - 1];
}

// partial sums of a[x] * b[x + dx] into 16 lanes; reduce with reduce16 once
// all rows have been accumulated. The fixed tree keeps the reduction
// vectorizable without relaxed FP flags and bitwise reproducible.
template <class T>
inline void dot_row_shifted_acc(const T* a, const T* b, std::int64_t width, int dx, T* acc) {
  const std::int64_t x0 = dx < 0 ? -dx : 0;
  const std::int64_t x1 = dx > 0 ? width - dx : width;
  const T* bp = b + dx;
  std::int64_t x = x0;
  for (; x + 16 <= x1; x += 16)
    for (int j = 0; j < 16; ++j) acc[j] += a[x + j] * bp[x + j];
  if (x + 8 <= x1) {
    for (int j = 0; j < 8; ++j) acc[j] += a[x + j] * bp[x + j];
    x += 8;
  }
  if (x + 4 <= x1) {
    for (int j = 0; j < 4; ++j) acc[j] += a[x + j] * bp[x + j];
    x += 4;
  }
  for (int j = 0; x < x1; ++x, ++j) acc[j] += a[x] * bp[x];
}

template <class T>
inline T reduce16(const T* acc) {
  T s01 = (acc[0] + acc[1]) + (acc[2] + acc[3]);
  T s23 = (acc[4] + acc[5]) + (acc[6] + acc[7]);
  T s45 = (acc[8] + acc[9]) + (acc[10] + acc[11]);
  T s67 = (acc[12] + acc[13]) + (acc[14] + acc[15]);
  return (s01 + s23) + (s45 + s67);
}

template <class T>
inline T dot_row_shifted(const T* a, const T* b, std::int64_t width, int dx) {
  T acc[16] = {};
  dot_row_shifted_acc(a, b, width, dx, acc);
  return reduce16(acc);
}

// Stride-2 rows decompose into even/odd output phases. With the kernel taps
// w[0..3] and mapping o = 2i + k - 1:
//   even  E[j] = out[2j]   += w1*x[j] + w3*x[j-1]
//   odd   O[j] = out[2j+1] += w2*x[j] + w0*x[j+1]
// which keeps every loop contiguous.
template <class T>
inline void upsample_row_phases(T* E, T* O, const T* x, const T* w4, std::int64_t W) {
  const T w0 = w4[0], w1 = w4[1], w2 = w4[2], w3 = w4[3];
  E[0] += w1 * x[0];
  for (std::int64_t j = 1; j < W; ++j) E[j] += w1 * x[j] + w3 * x[j - 1];
  for (std::int64_t j = 0; j < W - 1; ++j) O[j] += w2 * x[j] + w0 * x[j + 1];
  O[W - 1] += w2 * x[W - 1];
}

// transpose of the above: dx[i] += w1*gE[i] + w2*gO[i] + w3*gE[i+1] + w0*gO[i-1]
template <class T>
inline void upsample_row_phases_bwd(T* dx, const T* gE, const T* gO, const T* w4,
                                    std::int64_t W) {
  const T w0 = w4[0], w1 = w4[1], w2 = w4[2], w3 = w4[3];
  dx[0] += w1 * gE[0] + w2 * gO[0] + (W > 1 ? w3 * gE[1] : T(0));
  for (std::int64_t i = 1; i < W - 1; ++i)
    dx[i] += w1 * gE[i] + w2 * gO[i] + w3 * gE[i + 1] + w0 * gO[i - 1];
  if (W > 1) dx[W - 1] += w1 * gE[W - 1] + w2 * gO[W - 1] + w0 * gO[W - 2];
}

template <class T>
inline void deinterleave_row(const T* row, T* E, T* O, std::int64_t W) {
  for (std::int64_t j = 0; j < W; ++j) {
    E[j] = row[2 * j];
    O[j] = row[2 * j + 1];
  }
}

// valid (kernel z-tap, input z) pairs for an output plane index.
inline int upsample_pairs(std::int64_t o, std::int64_t n_in, int* ks, std::int64_t* is) {
  int cnt = 0;
  for (int k = int((o + 1) & 1); k < 4; k += 2) {
    const std::int64_t i2 = o + 1 - k;
    const std::int64_t i = i2 / 2;
    if (i >= 0 && i < n_in) {
      ks[cnt] = k;
      is[cnt] = i;
      ++cnt;
    }
  }
  return cnt;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv3d: 3x3x3, stride 1, zero padding 1; spatial shape preserved.
// x[N,C,D,H,W], w[K,C,3,3,3], b[K] -> out[N,K,D,H,W]
// ---------------------------------------------------------------------------
template <class T>
TensorT<T> conv3d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
  using namespace detail;
  const Shape5 xs = as5(x, "conv3d input");
  const Shape5 ws = as5(w, "conv3d weight");
  if (ws.d != 3 || ws.h != 3 || ws.w != 3) throw ShapeError("conv3d kernel must be 3x3x3");
  if (ws.c != xs.c) throw ShapeError("conv3d channel mismatch");
  if (b.shape() != std::vector<std::int64_t>{ws.n}) throw ShapeError("conv3d bias shape mismatch");
  const std::int64_t N = xs.n, C = xs.c, D = xs.d, H = xs.h, W = xs.w, K = ws.n;

  auto forward = [=](const T* xp, const T* wp, const T* bp, T* op) {
    const std::int64_t xcs = D * H * W;
    std::vector<T> acc(static_cast<std::size_t>(W));
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t k = 0; k < K; ++k) {
        T* ochan = op + (n * K + k) * xcs;
        for (std::int64_t z = 0; z < D; ++z)
          for (std::int64_t y = 0; y < H; ++y) {
            std::fill(acc.begin(), acc.end(), bp[k]);
            for (std::int64_t c = 0; c < C; ++c) {
              const T* xchan = xp + (n * C + c) * xcs;
              const T* wk = wp + (k * C + c) * 27;
              const std::int64_t zin0 = std::max<std::int64_t>(0, z - 1);
              const std::int64_t zin1 = std::min<std::int64_t>(D - 1, z + 1);
              const std::int64_t yin0 = std::max<std::int64_t>(0, y - 1);
              const std::int64_t yin1 = std::min<std::int64_t>(H - 1, y + 1);
              for (std::int64_t zin = zin0; zin <= zin1; ++zin) {
                const std::int64_t kz = zin - z + 1;
                for (std::int64_t yin = yin0; yin <= yin1; ++yin) {
                  const std::int64_t ky = yin - y + 1;
                  const T* wrow = wk + (kz * 3 + ky) * 3;
                  fma_row_3tap(acc.data(), xchan + (zin * H + yin) * W, wrow[0], wrow[1],
                               wrow[2], W);
                }
              }
            }
            std::copy(acc.begin(), acc.end(), ochan + (z * H + y) * W);
          }
      }
  };

  TensorT<T> out = op_output<T>(
      {N, K, D, H, W}, {x, w, b}, [=](TensorImpl<T>& self) {
        const T* gout = self.grad.data();
        TensorImpl<T>* xi = self.parents[0].impl();
        TensorImpl<T>* wi = self.parents[1].impl();
        TensorImpl<T>* bi = self.parents[2].impl();
        const std::int64_t cs = D * H * W;
        if (xi->requires_grad) {
          // dx[zin,yin,x] += sum over taps of w[kz,ky,kx] * dout[zin-kz+1, yin-ky+1, x-kx+1],
          // i.e. correlation with the flipped kernel.
          T* gx = xi->grad.data();
          const T* wp = wi->data.data();
          std::vector<T> acc(static_cast<std::size_t>(W));
          for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t c = 0; c < C; ++c) {
              T* gxchan = gx + (n * C + c) * cs;
              for (std::int64_t zin = 0; zin < D; ++zin)
                for (std::int64_t yin = 0; yin < H; ++yin) {
                  std::fill(acc.begin(), acc.end(), T(0));
                  for (std::int64_t k = 0; k < K; ++k) {
                    const T* gochan = gout + (n * K + k) * cs;
                    const T* wk = wp + (k * C + c) * 27;
                    const std::int64_t z0 = std::max<std::int64_t>(0, zin - 1);
                    const std::int64_t z1 = std::min<std::int64_t>(D - 1, zin + 1);
                    const std::int64_t y0 = std::max<std::int64_t>(0, yin - 1);
                    const std::int64_t y1 = std::min<std::int64_t>(H - 1, yin + 1);
                    for (std::int64_t z = z0; z <= z1; ++z) {
                      const std::int64_t kz = zin - z + 1;
                      for (std::int64_t y = y0; y <= y1; ++y) {
                        const std::int64_t ky = yin - y + 1;
                        const T* wrow = wk + (kz * 3 + ky) * 3;
                        fma_row_3tap(acc.data(), gochan + (z * H + y) * W, wrow[2], wrow[1],
                                     wrow[0], W);
                      }
                    }
                  }
                  T* gxrow = gxchan + (zin * H + yin) * W;
                  for (std::int64_t i = 0; i < W; ++i) gxrow[i] += acc[std::size_t(i)];
                }
            }
        }
        if (wi->requires_grad) {
          T* gw = wi->grad.data();
          const T* xp = xi->data.data();
          for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t k = 0; k < K; ++k) {
              const T* gochan = gout + (n * K + k) * cs;
              for (std::int64_t c = 0; c < C; ++c) {
                const T* xchan = xp + (n * C + c) * cs;
                T* gwk = gw + (k * C + c) * 27;
                for (int kz = 0; kz < 3; ++kz) {
                  const std::int64_t z0 = std::max<std::int64_t>(0, 1 - kz);
                  const std::int64_t z1 = std::min<std::int64_t>(D, D + 1 - kz);
                  for (int ky = 0; ky < 3; ++ky) {
                    const std::int64_t y0 = std::max<std::int64_t>(0, 1 - ky);
                    const std::int64_t y1 = std::min<std::int64_t>(H, H + 1 - ky);
                    T* gwrow = gwk + (kz * 3 + ky) * 3;
                    T acc0[16] = {}, acc1[16] = {}, acc2[16] = {};
                    for (std::int64_t z = z0; z < z1; ++z)
                      for (std::int64_t y = y0; y < y1; ++y) {
                        const T* gorow = gochan + (z * H + y) * W;
                        const T* xrow = xchan + ((z + kz - 1) * H + (y + ky - 1)) * W;
                        dot_row_shifted_acc(gorow, xrow, W, -1, acc0);
                        dot_row_shifted_acc(gorow, xrow, W, 0, acc1);
                        dot_row_shifted_acc(gorow, xrow, W, 1, acc2);
                      }
                    gwrow[0] += reduce16(acc0);
                    gwrow[1] += reduce16(acc1);
                    gwrow[2] += reduce16(acc2);
                  }
                }
              }
            }
        }
        if (bi->requires_grad) {
          T* gb = bi->grad.data();
          for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t k = 0; k < K; ++k) {
              const T* gochan = gout + (n * K + k) * cs;
              T s = 0;
              for (std::int64_t i = 0; i < cs; ++i) s += gochan[i];
              gb[k] += s;
            }
        }
      });
  forward(x.data().data(), w.data().data(), b.data().data(), out.data().data());
  return out;
}

// ---------------------------------------------------------------------------
// deconv3d: transposed convolution, 4x4x4 kernel, stride 2, padding 1;
// doubles every spatial extent. x[N,C,D,H,W], w[C,K,4,4,4], b[K].
// ---------------------------------------------------------------------------
template <class T>
TensorT<T> deconv3d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
  using namespace detail;
  const Shape5 xs = as5(x, "deconv3d input");
  const Shape5 ws = as5(w, "deconv3d weight");
  if (ws.d != 4 || ws.h != 4 || ws.w != 4) throw ShapeError("deconv3d kernel must be 4x4x4");
  if (ws.n != xs.c) throw ShapeError("deconv3d channel mismatch");
  const std::int64_t N = xs.n, C = xs.c, D = xs.d, H = xs.h, W = xs.w, K = ws.c;
  if (b.shape() != std::vector<std::int64_t>{K}) throw ShapeError("deconv3d bias shape mismatch");
  const std::int64_t OD = 2 * D, OH = 2 * H, OW = 2 * W;
  const std::int64_t ics = D * H * W, ocs = OD * OH * OW;

  TensorT<T> out = op_output<T>(
      {N, K, OD, OH, OW}, {x, w, b}, [=](TensorImpl<T>& self) {
        using namespace detail;
        const T* gout = self.grad.data();
        TensorImpl<T>* xi = self.parents[0].impl();
        TensorImpl<T>* wi = self.parents[1].impl();
        TensorImpl<T>* bi = self.parents[2].impl();
        const bool need_x = xi->requires_grad, need_w = wi->requires_grad;
        std::vector<T> gE, gO;
        if (need_x || need_w) {
          gE.resize(std::size_t(K * OD * OH * W));
          gO.resize(std::size_t(K * OD * OH * W));
        }
        for (std::int64_t n = 0; n < N; ++n) {
          if (need_x || need_w) {
            for (std::int64_t k = 0; k < K; ++k)
              for (std::int64_t oz = 0; oz < OD; ++oz)
                for (std::int64_t oy = 0; oy < OH; ++oy) {
                  const std::int64_t r = (k * OD + oz) * OH + oy;
                  deinterleave_row(gout + (n * K + k) * ocs + (oz * OH + oy) * OW,
                                   gE.data() + r * W, gO.data() + r * W, W);
                }
          }
          if (need_x) {
            const T* wp = wi->data.data();
            std::vector<T> acc(static_cast<std::size_t>(W));
            for (std::int64_t c = 0; c < C; ++c) {
              T* gxchan = xi->grad.data() + (n * C + c) * ics;
              for (std::int64_t iz = 0; iz < D; ++iz)
                for (std::int64_t iy = 0; iy < H; ++iy) {
                  std::fill(acc.begin(), acc.end(), T(0));
                  for (std::int64_t k = 0; k < K; ++k) {
                    const T* wk = wp + (c * K + k) * 64;
                    for (int kz = 0; kz < 4; ++kz) {
                      const std::int64_t oz = 2 * iz + kz - 1;
                      if (oz < 0 || oz >= OD) continue;
                      for (int ky = 0; ky < 4; ++ky) {
                        const std::int64_t oy = 2 * iy + ky - 1;
                        if (oy < 0 || oy >= OH) continue;
                        const std::int64_t r = (k * OD + oz) * OH + oy;
                        upsample_row_phases_bwd(acc.data(), gE.data() + r * W, gO.data() + r * W,
                                                wk + (kz * 4 + ky) * 4, W);
                      }
                    }
                  }
                  T* gxrow = gxchan + (iz * H + iy) * W;
                  for (std::int64_t i = 0; i < W; ++i) gxrow[i] += acc[std::size_t(i)];
                }
            }
          }
          if (need_w) {
            T* gw = wi->grad.data();
            const T* xp = xi->data.data();
            for (std::int64_t c = 0; c < C; ++c) {
              const T* xchan = xp + (n * C + c) * ics;
              for (std::int64_t k = 0; k < K; ++k) {
                T* gwk = gw + (c * K + k) * 64;
                for (int kz = 0; kz < 4; ++kz)
                  for (int ky = 0; ky < 4; ++ky) {
                    T a0[16] = {}, a1[16] = {}, a2[16] = {}, a3[16] = {};
                    for (std::int64_t iz = 0; iz < D; ++iz) {
                      const std::int64_t oz = 2 * iz + kz - 1;
                      if (oz < 0 || oz >= OD) continue;
                      for (std::int64_t iy = 0; iy < H; ++iy) {
                        const std::int64_t oy = 2 * iy + ky - 1;
                        if (oy < 0 || oy >= OH) continue;
                        const T* xrow = xchan + (iz * H + iy) * W;
                        const std::int64_t r = (k * OD + oz) * OH + oy;
                        const T* e = gE.data() + r * W;
                        const T* o = gO.data() + r * W;
                        dot_row_shifted_acc(o, xrow, W, 1, a0);   // w0: x[j+1]*gO[j]
                        dot_row_shifted_acc(e, xrow, W, 0, a1);   // w1: x[j]*gE[j]
                        dot_row_shifted_acc(o, xrow, W, 0, a2);   // w2: x[j]*gO[j]
                        dot_row_shifted_acc(e, xrow, W, -1, a3);  // w3: x[j-1]*gE[j]
                      }
                    }
                    T* gwrow = gwk + (kz * 4 + ky) * 4;
                    gwrow[0] += reduce16(a0);
                    gwrow[1] += reduce16(a1);
                    gwrow[2] += reduce16(a2);
                    gwrow[3] += reduce16(a3);
                  }
              }
            }
          }
        }
        if (bi->requires_grad) {
          T* gb = bi->grad.data();
          for (std::int64_t n = 0; n < N; ++n)
            for (std::int64_t k = 0; k < K; ++k) {
              const T* gochan = gout + (n * K + k) * ocs;
              T s = 0;
              for (std::int64_t i = 0; i < ocs; ++i) s += gochan[i];
              gb[k] += s;
            }
        }
      });

  const T* xp = x.data().data();
  const T* wp = w.data().data();
  const T* bp = b.data().data();
  T* op = out.data().data();
  std::vector<T> E(static_cast<std::size_t>(W)), O(static_cast<std::size_t>(W));
  int ks[2];
  std::int64_t is[2];
  int kys[2];
  std::int64_t iys[2];
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t k = 0; k < K; ++k) {
      T* ochan = op + (n * K + k) * ocs;
      for (std::int64_t oz = 0; oz < OD; ++oz) {
        const int nz = detail::upsample_pairs(oz, D, ks, is);
        for (std::int64_t oy = 0; oy < OH; ++oy) {
          const int ny = detail::upsample_pairs(oy, H, kys, iys);
          std::fill(E.begin(), E.end(), bp[k]);
          std::fill(O.begin(), O.end(), T(0));
          for (std::int64_t c = 0; c < C; ++c) {
            const T* xchan = xp + (n * C + c) * ics;
            const T* wk = wp + (c * K + k) * 64;
            for (int a = 0; a < nz; ++a)
              for (int bq = 0; bq < ny; ++bq) {
                const T* xrow = xchan + (is[a] * H + iys[bq]) * W;
                // the x-phase helper applies kx taps; kz/ky select the plane
                detail::upsample_row_phases(E.data(), O.data(), xrow,
                                            wk + (ks[a] * 4 + kys[bq]) * 4, W);
              }
          }
          T* orow = ochan + (oz * OH + oy) * OW;
          for (std::int64_t j = 0; j < W; ++j) {
            orow[2 * j] = E[std::size_t(j)];
            orow[2 * j + 1] = O[std::size_t(j)] + bp[k];
          }
        }
      }
    }
  return out;
}

// ---------------------------------------------------------------------------
// maxpool3d: 2x2x2, stride 2. Gradient routes to the argmax voxel; ties pick
// the first voxel in scan order.
// ---------------------------------------------------------------------------
template <class T>
TensorT<T> maxpool3d(const TensorT<T>& x) {
  using namespace detail;
  const Shape5 xs = as5(x, "maxpool3d input");
  if (xs.d % 2 || xs.h % 2 || xs.w % 2)
    throw ShapeError("maxpool3d requires even spatial extents");
  const std::int64_t N = xs.n, C = xs.c, D = xs.d, H = xs.h, W = xs.w;
  const std::int64_t OD = D / 2, OH = H / 2, OW = W / 2;
  const std::int64_t ics = D * H * W, ocs = OD * OH * OW;

  auto argmax = std::make_shared<std::vector<std::int64_t>>(std::size_t(N * C * ocs));

  TensorT<T> out = op_output<T>(
      {N, C, OD, OH, OW}, {x}, [=](TensorImpl<T>& self) {
        TensorImpl<T>* xi = self.parents[0].impl();
        if (!xi->requires_grad) return;
        T* gx = xi->grad.data();
        const T* go = self.grad.data();
        const auto& am = *argmax;
        for (std::size_t i = 0; i < am.size(); ++i) gx[am[i]] += go[i];
      });

  const T* xp = x.data().data();
  T* op = out.data().data();
  std::int64_t o = 0;
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const T* xchan = xp + (n * C + c) * ics;
      const std::int64_t chan_base = (n * C + c) * ics;
      for (std::int64_t z = 0; z < OD; ++z)
        for (std::int64_t y = 0; y < OH; ++y)
          for (std::int64_t xq = 0; xq < OW; ++xq, ++o) {
            T best = -std::numeric_limits<T>::infinity();
            std::int64_t besti = 0;
            for (int dz = 0; dz < 2; ++dz)
              for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                  const std::int64_t idx = ((2 * z + dz) * H + 2 * y + dy) * W + 2 * xq + dx;
                  const T v = xchan[idx];
                  if (v > best) {
                    best = v;
                    besti = idx;
                  }
                }
            op[o] = best;
            (*argmax)[std::size_t(o)] = chan_base + besti;
          }
    }
  return out;
}

// ---------------------------------------------------------------------------
// batch normalization over all axes but the channel axis.
// ---------------------------------------------------------------------------
template <class T>
struct BNState {
  std::vector<T> running_mean, running_var;
  explicit BNState(std::int64_t channels = 0)
      : running_mean(std::size_t(channels), T(0)), running_var(std::size_t(channels), T(1)) {}
};

template <class T>
TensorT<T> batchnorm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                     BNState<T>& state, bool training, double momentum = 0.1,
                     double eps = 1e-5) {
  if (x.shape().size() < 2) throw ShapeError("batchnorm input must have N,C leading axes");
  const std::int64_t N = x.shape()[0], C = x.shape()[1];
  std::int64_t S = 1;
  for (std::size_t i = 2; i < x.shape().size(); ++i) S *= x.shape()[i];
  if (gamma.shape() != std::vector<std::int64_t>{C} || beta.shape() != std::vector<std::int64_t>{C})
    throw ShapeError("batchnorm gamma/beta must have shape [C]");
  if (std::int64_t(state.running_mean.size()) != C)
    throw ShapeError("batchnorm state channel mismatch");

  auto mean = std::make_shared<std::vector<T>>(std::size_t(C));
  auto invstd = std::make_shared<std::vector<T>>(std::size_t(C));
  const std::int64_t M = N * S;

  const T* xp = x.data().data();
  if (training) {
    for (std::int64_t c = 0; c < C; ++c) {
      double sum = 0, sq = 0;
      for (std::int64_t n = 0; n < N; ++n) {
        const T* row = xp + (n * C + c) * S;
        for (std::int64_t s = 0; s < S; ++s) {
          sum += row[s];
          sq += double(row[s]) * row[s];
        }
      }
      const double mu = sum / double(M);
      const double var = std::max(0.0, sq / double(M) - mu * mu);
      (*mean)[c] = T(mu);
      (*invstd)[c] = T(1.0 / std::sqrt(var + eps));
      state.running_mean[c] = T((1.0 - momentum) * state.running_mean[c] + momentum * mu);
      state.running_var[c] = T((1.0 - momentum) * state.running_var[c] + momentum * var);
    }
  } else {
    for (std::int64_t c = 0; c < C; ++c) {
      (*mean)[c] = state.running_mean[c];
      (*invstd)[c] = T(1.0 / std::sqrt(double(state.running_var[c]) + eps));
    }
  }

  TensorT<T> out = detail::op_output<T>(
      std::vector<std::int64_t>(x.shape()), {x, gamma, beta}, [=](TensorImpl<T>& self) {
        TensorImpl<T>* xi = self.parents[0].impl();
        TensorImpl<T>* gi = self.parents[1].impl();
        TensorImpl<T>* bi = self.parents[2].impl();
        const T* go = self.grad.data();
        const T* xd = xi->data.data();
        const T* gm = gi->data.data();
        for (std::int64_t c = 0; c < C; ++c) {
          const T mu = (*mean)[c], is = (*invstd)[c];
          double sum_dy = 0, sum_dy_xhat = 0;
          for (std::int64_t n = 0; n < N; ++n) {
            const T* grow = go + (n * C + c) * S;
            const T* xrow = xd + (n * C + c) * S;
            for (std::int64_t s = 0; s < S; ++s) {
              sum_dy += grow[s];
              sum_dy_xhat += double(grow[s]) * (double(xrow[s]) - mu) * is;
            }
          }
          if (bi->requires_grad) bi->grad[c] += T(sum_dy);
          if (gi->requires_grad) gi->grad[c] += T(sum_dy_xhat);
          if (xi->requires_grad) {
            T* gxd = xi->grad.data();
            if (training) {
              const double inv_m = 1.0 / double(M);
              for (std::int64_t n = 0; n < N; ++n) {
                const T* grow = go + (n * C + c) * S;
                const T* xrow = xd + (n * C + c) * S;
                T* gxrow = gxd + (n * C + c) * S;
                for (std::int64_t s = 0; s < S; ++s) {
                  const double xhat = (double(xrow[s]) - mu) * is;
                  gxrow[s] += T(double(gm[c]) * is *
                                (double(grow[s]) - sum_dy * inv_m - xhat * sum_dy_xhat * inv_m));
                }
              }
            } else {
              for (std::int64_t n = 0; n < N; ++n) {
                const T* grow = go + (n * C + c) * S;
                T* gxrow = gxd + (n * C + c) * S;
                for (std::int64_t s = 0; s < S; ++s) gxrow[s] += T(double(grow[s]) * gm[c] * is);
              }
            }
          }
        }
      });

  T* op = out.data().data();
  const T* gm = gamma.data().data();
  const T* bt = beta.data().data();
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const T mu = (*mean)[c], is = (*invstd)[c];
      const T g = gm[c], be = bt[c];
      const T* xrow = xp + (n * C + c) * S;
      T* orow = op + (n * C + c) * S;
      for (std::int64_t s = 0; s < S; ++s) orow[s] = (xrow[s] - mu) * is * g + be;
    }
  return out;
}

// ---------------------------------------------------------------------------
// elementwise activations
// ---------------------------------------------------------------------------
template <class T>
TensorT<T> relu(const TensorT<T>& x) {
  TensorT<T> out = detail::op_output<T>(
      std::vector<std::int64_t>(x.shape()), {x}, [](TensorImpl<T>& self) {
        TensorImpl<T>* xi = self.parents[0].impl();
        if (!xi->requires_grad) return;
        const T* xd = xi->data.data();
        const T* go = self.grad.data();
        T* gx = xi->grad.data();
        for (std::size_t i = 0; i < self.data.size(); ++i)
          gx[i] += xd[i] > T(0) ? go[i] : T(0);
      });
  const T* xd = x.data().data();
  T* od = out.data().data();
  for (std::size_t i = 0; i < out.data().size(); ++i) od[i] = xd[i] > T(0) ? xd[i] : T(0);
  return out;
}

template <class T>
TensorT<T> sigmoid(const TensorT<T>& x) {
  TensorT<T> out = detail::op_output<T>(
      std::vector<std::int64_t>(x.shape()), {x}, [](TensorImpl<T>& self) {
        TensorImpl<T>* xi = self.parents[0].impl();
        if (!xi->requires_grad) return;
        const T* y = self.data.data();
        const T* go = self.grad.data();
        T* gx = xi->grad.data();
        for (std::size_t i = 0; i < self.data.size(); ++i) gx[i] += go[i] * y[i] * (T(1) - y[i]);
      });
  const T* xd = x.data().data();
  T* od = out.data().data();
  for (std::size_t i = 0; i < out.data().size(); ++i) od[i] = T(1) / (T(1) + std::exp(-xd[i]));
  return out;
}

// softmax over the channel axis of an [N,C,...] tensor.
template <class T>
TensorT<T> softmax_channels(const TensorT<T>& x) {
  if (x.shape().size() < 2) throw ShapeError("softmax_channels input must have N,C leading axes");
  const std::int64_t N = x.shape()[0], C = x.shape()[1];
  std::int64_t S = 1;
  for (std::size_t i = 2; i < x.shape().size(); ++i) S *= x.shape()[i];

  TensorT<T> out = detail::op_output<T>(
      std::vector<std::int64_t>(x.shape()), {x}, [=](TensorImpl<T>& self) {
        TensorImpl<T>* xi = self.parents[0].impl();
        if (!xi->requires_grad) return;
        const T* y = self.data.data();
        const T* go = self.grad.data();
        T* gx = xi->grad.data();
        for (std::int64_t n = 0; n < N; ++n)
          for (std::int64_t s = 0; s < S; ++s) {
            const std::int64_t base = n * C * S + s;
            double dot = 0;
            for (std::int64_t c = 0; c < C; ++c)
              dot += double(go[base + c * S]) * y[base + c * S];
            for (std::int64_t c = 0; c < C; ++c)
              gx[base + c * S] += T(double(y[base + c * S]) * (double(go[base + c * S]) - dot));
          }
      });

  const T* xd = x.data().data();
  T* od = out.data().data();
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t s = 0; s < S; ++s) {
      const std::int64_t base = n * C * S + s;
      T mx = xd[base];
      for (std::int64_t c = 1; c < C; ++c) mx = std::max(mx, xd[base + c * S]);
      double sum = 0;
      for (std::int64_t c = 0; c < C; ++c) {
        const T e = std::exp(xd[base + c * S] - mx);
        od[base + c * S] = e;
        sum += e;
      }
      const T inv = T(1.0 / sum);
      for (std::int64_t c = 0; c < C; ++c) od[base + c * S] *= inv;
    }
  return out;
}

// concatenate along the channel axis; shapes must agree elsewhere.
template <class T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b) {
  using namespace detail;
  const Shape5 as = as5(a, "concat input a");
  const Shape5 bs = as5(b, "concat input b");
  if (as.n != bs.n || as.d != bs.d || as.h != bs.h || as.w != bs.w)
    throw ShapeError("concat_channels spatial/batch mismatch");
  const std::int64_t S = as.spatial();
  const std::int64_t Ca = as.c, Cb = bs.c;

  TensorT<T> out = op_output<T>(
      {as.n, Ca + Cb, as.d, as.h, as.w}, {a, b}, [=](TensorImpl<T>& self) {
        TensorImpl<T>* ai = self.parents[0].impl();
        TensorImpl<T>* bi = self.parents[1].impl();
        const T* go = self.grad.data();
        for (std::int64_t n = 0; n < as.n; ++n) {
          if (ai->requires_grad) {
            T* ga = ai->grad.data() + n * Ca * S;
            const T* src = go + n * (Ca + Cb) * S;
            for (std::int64_t i = 0; i < Ca * S; ++i) ga[i] += src[i];
          }
          if (bi->requires_grad) {
            T* gb = bi->grad.data() + n * Cb * S;
            const T* src = go + n * (Ca + Cb) * S + Ca * S;
            for (std::int64_t i = 0; i < Cb * S; ++i) gb[i] += src[i];
          }
        }
      });
  T* od = out.data().data();
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  for (std::int64_t n = 0; n < as.n; ++n) {
    std::copy(ad + n * Ca * S, ad + (n + 1) * Ca * S, od + n * (Ca + Cb) * S);
    std::copy(bd + n * Cb * S, bd + (n + 1) * Cb * S, od + n * (Ca + Cb) * S + Ca * S);
  }
  return out;
}

// ---------------------------------------------------------------------------
// bootstrapped cross entropy over channel softmax: only the ceil(keep * V)
// hardest voxels contribute to the (averaged) loss and to the gradient.
// targets is one class id per voxel, laid out [N,D,H,W].
// ---------------------------------------------------------------------------
template <class T>
TensorT<T> bootstrapped_ce(const TensorT<T>& logits, const std::vector<std::uint16_t>& targets,
                           double keep_fraction) {
  using namespace detail;
  const Shape5 ls = as5(logits, "bootstrapped_ce logits");
  if (!(keep_fraction > 0.0) || keep_fraction > 1.0)
    throw DataError("keep_fraction must be in (0, 1]");
  const std::int64_t N = ls.n, C = ls.c, S = ls.spatial();
  const std::int64_t V = N * S;
  if (std::int64_t(targets.size()) != V) throw ShapeError("bootstrapped_ce target length mismatch");
  for (auto t : targets)
    if (t >= C) throw DataError("bootstrapped_ce target class out of range");

  const std::int64_t k = std::int64_t(std::ceil(keep_fraction * double(V)));

  auto lse = std::make_shared<std::vector<double>>(std::size_t(V));
  std::vector<double> ce(static_cast<std::size_t>(V));
  const T* lp = logits.data().data();
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t s = 0; s < S; ++s) {
      const std::int64_t v = n * S + s;
      const std::int64_t base = n * C * S + s;
      double mx = lp[base];
      for (std::int64_t c = 1; c < C; ++c) mx = std::max(mx, double(lp[base + c * S]));
      double sum = 0;
      for (std::int64_t c = 0; c < C; ++c) sum += std::exp(double(lp[base + c * S]) - mx);
      (*lse)[v] = mx + std::log(sum);
      ce[v] = (*lse)[v] - double(lp[base + std::int64_t(targets[v]) * S]);
    }

  // top-k by (loss desc, index asc): a strict ordering, so membership is pinned
  auto selected = std::make_shared<std::vector<std::int64_t>>();
  selected->resize(std::size_t(V));
  std::iota(selected->begin(), selected->end(), std::int64_t(0));
  auto harder = [&ce](std::int64_t a, std::int64_t b) {
    if (ce[a] != ce[b]) return ce[a] > ce[b];
    return a < b;
  };
  if (k < V) {
    std::nth_element(selected->begin(), selected->begin() + k - 1, selected->end(), harder);
    selected->resize(std::size_t(k));
  }
  std::sort(selected->begin(), selected->end());
  double loss = 0;
  for (auto v : *selected) loss += ce[v];
  loss /= double(k);

  auto tgt = std::make_shared<std::vector<std::uint16_t>>(targets);
  TensorT<T> out = op_output<T>({1}, {logits}, [=](TensorImpl<T>& self) {
    TensorImpl<T>* li = self.parents[0].impl();
    if (!li->requires_grad) return;
    const double g = double(self.grad[0]) / double(k);
    const T* lp2 = li->data.data();
    T* gl = li->grad.data();
    for (auto v : *selected) {
      const std::int64_t n = v / S, s = v % S;
      const std::int64_t base = n * C * S + s;
      const double l = (*lse)[v];
      for (std::int64_t c = 0; c < C; ++c) {
        const double p = std::exp(double(lp2[base + c * S]) - l);
        const double delta = (c == std::int64_t((*tgt)[v])) ? 1.0 : 0.0;
        gl[base + c * S] += T(g * (p - delta));
      }
    }
  });
  out.data()[0] = T(loss);
  return out;
}

// ---------------------------------------------------------------------------
// soft Dice loss: 1 - (2*sum(p*t) + eps) / (sum(p) + sum(t) + eps).
// target carries no gradient.
// ---------------------------------------------------------------------------
template <class T>
TensorT<T> dice_loss(const TensorT<T>& prob, const TensorT<T>& target, double eps = 1e-5) {
  if (prob.shape() != target.shape()) throw ShapeError("dice_loss shape mismatch");
  const std::int64_t n = prob.numel();
  const T* p = prob.data().data();
  const T* t = target.data().data();
  double sp = 0, st = 0, si = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    sp += p[i];
    st += t[i];
    si += double(p[i]) * t[i];
  }
  const double denom = sp + st + eps;
  const double loss = 1.0 - (2.0 * si + eps) / denom;

  TensorT<T> out = detail::op_output<T>({1}, {prob, target}, [=](TensorImpl<T>& self) {
    TensorImpl<T>* pi = self.parents[0].impl();
    TensorImpl<T>* ti = self.parents[1].impl();
    if (!pi->requires_grad) return;
    const double g = double(self.grad[0]);
    const double num = 2.0 * si + eps;
    const T* td = ti->data.data();
    T* gp = pi->grad.data();
    for (std::int64_t i = 0; i < n; ++i)
      gp[i] += T(g * (num - 2.0 * double(td[i]) * denom) / (denom * denom));
  });
  out.data()[0] = T(loss);
  return out;
}

}  // namespace spine
