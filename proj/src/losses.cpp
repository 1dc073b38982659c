#include "deephuman/losses.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>

#include "deephuman/ops.hpp"

namespace dh::loss {

namespace {

template <typename T>
Tensor<T> weighted_bce(const Tensor<T>& p, const Tensor<T>& t, double w_pos, double w_neg, const char* op) {
  if (p.shape() != t.shape())
    throw ShapeError(std::string(op) + ": prediction " + shape_str(p.shape()) + " vs target " + shape_str(t.shape()));
  const T eps = T(kProbabilityClamp);
  const std::size_t n = p.numel();
  auto pv = p.values();
  auto tv = t.values();
  // Fixed-order accumulation in double.
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double q = std::clamp<double>(pv[i], eps, 1.0 - double(eps));
    total += w_pos * tv[i] * std::log(q) + w_neg * (1.0 - tv[i]) * std::log(1.0 - q);
  }
  const T value = T(-total / double(n));
  return Tensor<T>::make_result(Shape{1}, {value}, {p, t}, [w_pos, w_neg, n, eps](Node<T>& self) {
    auto& pn = *self.inputs[0];
    auto& tn = *self.inputs[1];
    if (!pn.requires_grad) return;
    pn.ensure_grad();
    const T g = self.grad[0] / T(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T q = pn.value[i];
      if (q < eps || q > T(1) - eps) continue;
      const T t = tn.value[i];
      pn.grad[i] += -g * (T(w_pos) * t / q - T(w_neg) * (T(1) - t) / (T(1) - q));
    }
  });
}

}  // namespace

template <typename T>
Tensor<T> volume(const Tensor<T>& prediction, const Tensor<T>& target, double gamma) {
  return weighted_bce(prediction, target, gamma, 1.0 - gamma, "loss_volume");
}

template <typename T>
Tensor<T> silhouette(const Tensor<T>& prediction, const Tensor<T>& target) {
  return weighted_bce(prediction, target, 1.0, 1.0, "loss_silhouette");
}

template <typename T>
Tensor<T> normal(const Tensor<T>& prediction, const Tensor<T>& target) {
  if (prediction.shape() != target.shape() || prediction.rank() != 3 || prediction.dim(0) != 3)
    throw ShapeError("loss_normal: expected matching [3, H, W] maps, got " + shape_str(prediction.shape()) + " and " +
                     shape_str(target.shape()));
  const std::size_t plane = prediction.dim(1) * prediction.dim(2);
  auto pv = prediction.values();
  auto tv = target.values();
  double total = 0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < plane; ++p) {
    double dot = 0, np = 0, nt = 0;
    for (int k = 0; k < 3; ++k) {
      dot += double(pv[k * plane + p]) * tv[k * plane + p];
      np += double(pv[k * plane + p]) * pv[k * plane + p];
      nt += double(tv[k * plane + p]) * tv[k * plane + p];
    }
    if (np == 0 || nt == 0) continue;
    total += 1.0 - dot / (std::sqrt(np) * std::sqrt(nt));
    ++count;
  }
  if (count == 0) {
    std::cerr << "warning: loss_normal has no pixel with both normals nonzero; returning 0\n";
    return Tensor<T>::make_result(Shape{1}, {T(0)}, {prediction, target}, [](Node<T>&) {});
  }
  const T value = T(total / double(count));
  return Tensor<T>::make_result(Shape{1}, {value}, {prediction, target}, [plane, count](Node<T>& self) {
    auto& pn = *self.inputs[0];
    auto& tn = *self.inputs[1];
    if (!pn.requires_grad) return;
    pn.ensure_grad();
    const T g = self.grad[0] / T(count);
    for (std::size_t p = 0; p < plane; ++p) {
      T dot = 0, np = 0, nt = 0;
      for (int k = 0; k < 3; ++k) {
        dot += pn.value[k * plane + p] * tn.value[k * plane + p];
        np += pn.value[k * plane + p] * pn.value[k * plane + p];
        nt += tn.value[k * plane + p] * tn.value[k * plane + p];
      }
      if (np == 0 || nt == 0) continue;
      const T lp = std::sqrt(np), lt = std::sqrt(nt);
      // d/dN [-(N . M) / (|N||M|)] = -M / (|N||M|) + (N . M) N / (|N|^3 |M|)
      for (int k = 0; k < 3; ++k)
        pn.grad[k * plane + p] +=
            g * (-tn.value[k * plane + p] / (lp * lt) + dot * pn.value[k * plane + p] / (lp * lp * lp * lt));
    }
  });
}

template <typename T>
Tensor<T> combined(const Tensor<T>& l_v, const Tensor<T>& l_fs, const Tensor<T>& l_ss, const Tensor<T>& l_n,
                   const LossWeights& weights) {
  const std::pair<const char*, const Tensor<T>*> parts[] = {{"L_V", &l_v}, {"L_FS", &l_fs}, {"L_SS", &l_ss}, {"L_N", &l_n}};
  for (const auto& [name, t] : parts)
    if (!std::isfinite(double(t->item()))) throw std::domain_error(std::string("non-finite loss component ") + name);
  Tensor<T> total = ops::add(l_v, ops::scale(l_fs, T(weights.lambda_fs)));
  total = ops::add(total, ops::scale(l_ss, T(weights.lambda_ss)));
  return ops::add(total, ops::scale(l_n, T(weights.lambda_n)));
}

#define DH_INSTANTIATE_LOSSES(T)                                                                 \
  template Tensor<T> volume(const Tensor<T>&, const Tensor<T>&, double);                         \
  template Tensor<T> silhouette(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> normal(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> combined(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                              const LossWeights&);

DH_INSTANTIATE_LOSSES(float)
DH_INSTANTIATE_LOSSES(double)

}  // namespace dh::loss
