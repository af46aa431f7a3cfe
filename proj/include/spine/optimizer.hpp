#pragma once

#include <span>

#include "spine/tensor.hpp"

namespace spine {

// A trainable tensor plus its Adam moment buffers.
template <class T>
struct ParameterT {
  TensorT<T> value;
  std::vector<T> adam_m, adam_v;
  std::int64_t step_count = 0;

  ParameterT() = default;
  explicit ParameterT(TensorT<T> v)
      : value(std::move(v)),
        adam_m(value.data().size(), T(0)),
        adam_v(value.data().size(), T(0)) {}

  void zero_grad() { value.zero_grad(); }
};

using Parameter = ParameterT<float>;

// Standard bias-corrected Adam, applied in place.
template <class T>
void adam_step(std::span<ParameterT<T>* const> params, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8) {
  for (ParameterT<T>* p : params) {
    if (p->value.grad().size() != p->value.data().size())
      throw DataError("adam_step: parameter has no gradient");
    p->step_count += 1;
    const double bc1 = 1.0 - std::pow(beta1, double(p->step_count));
    const double bc2 = 1.0 - std::pow(beta2, double(p->step_count));
    T* v = p->value.data().data();
    const T* g = p->value.grad().data();
    T* m = p->adam_m.data();
    T* s = p->adam_v.data();
    const std::int64_t n = p->value.numel();
    for (std::int64_t i = 0; i < n; ++i) {
      m[i] = T(beta1 * m[i] + (1.0 - beta1) * g[i]);
      s[i] = T(beta2 * s[i] + (1.0 - beta2) * double(g[i]) * g[i]);
      const double mhat = m[i] / bc1;
      const double vhat = s[i] / bc2;
      v[i] = T(v[i] - lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
}

template <class T>
void adam_step(const std::vector<ParameterT<T>*>& params, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8) {
  adam_step(std::span<ParameterT<T>* const>(params.data(), params.size()), lr, beta1, beta2, eps);
}

}  // namespace spine
