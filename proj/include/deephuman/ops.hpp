#pragma once

// Differentiable ops used by the reconstruction network.
//
// Layout conventions: images are [C, H, W], volumes are [C, Z, Y, X]
// (x fastest). A z-slice of a volume is therefore [C, Y, X] and lines up
// with an image whose rows run along y and columns along x.

#include <array>
#include <span>
#include <vector>

#include "deephuman/tensor.hpp"

namespace dh::ops {

inline constexpr double kDefaultLeakySlope = 0.2;

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T offset);
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);

template <typename T> Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(kDefaultLeakySlope));
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> tanh(const Tensor<T>& x);

/// Concatenation along the leading (channel) axis; trailing extents must agree.
template <typename T> Tensor<T> concat(std::span<const Tensor<T>> parts);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts) {
  return concat<T>(std::span<const Tensor<T>>(parts));
}

/// y = W x + b for x of any shape (flattened), W [out, numel(x)], b [out].
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

/// Repeats a channel vector [C] over the given spatial extents -> [C, spatial...].
template <typename T> Tensor<T> broadcast_spatial(const Tensor<T>& channels, const Shape& spatial);

struct ConvSpec {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Output extent of a strided convolution along one axis.
std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding);
/// Output extent of a transposed convolution along one axis.
std::size_t conv_transpose_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                                      std::size_t padding);

/// Cross-correlation. input [C_in, H, W] with weight [C_out, C_in, k, k], or
/// input [C_in, D, H, W] with weight [C_out, C_in, k, k, k]. bias [C_out] or undefined.
template <typename T>
Tensor<T> conv(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, ConvSpec spec);

/// Transposed convolution (adjoint of conv). weight [C_in, C_out, k, ...].
template <typename T>
Tensor<T> conv_transpose(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                         ConvSpec spec);

}  // namespace dh::ops
