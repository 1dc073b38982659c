#pragma once

#include <string>

#include "deephuman/tensor.hpp"

namespace dh::loss {

inline constexpr double kProbabilityClamp = 1e-7;

struct LossWeights {
  double lambda_fs = 0.1;
  double lambda_ss = 0.1;
  double lambda_n = 0.01;
  double gamma = 0.7;
};

/// -(1/N) sum [gamma t log p + (1 - gamma)(1 - t) log(1 - p)] with p clamped
/// to [eps, 1 - eps] and N the total element count. `target` is a constant.
template <typename T>
Tensor<T> volume(const Tensor<T>& prediction, const Tensor<T>& target, double gamma);

/// Mean binary cross-entropy of a projected silhouette against its target.
template <typename T>
Tensor<T> silhouette(const Tensor<T>& prediction, const Tensor<T>& target);

/// Mean cosine distance over pixels where both normals are nonzero.
/// Returns 0 (and logs a warning) when no pixel qualifies.
template <typename T>
Tensor<T> normal(const Tensor<T>& prediction, const Tensor<T>& target);

/// L_V + lambda_fs L_FS + lambda_ss L_SS + lambda_n L_N. Throws
/// std::domain_error naming the first non-finite component.
template <typename T>
Tensor<T> combined(const Tensor<T>& l_v, const Tensor<T>& l_fs, const Tensor<T>& l_ss, const Tensor<T>& l_n,
                   const LossWeights& weights);

}  // namespace dh::loss
