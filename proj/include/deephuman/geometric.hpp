#pragma once

// Differentiable geometric layers: volumetric feature transform, occupancy
// to depth/normal projection, silhouette projection and 2x upsampling.
//
// Occupancy volumes are [1, Z, Y, X]; image-plane outputs are [C, Y, X].

#include "deephuman/ops.hpp"
#include "deephuman/tensor.hpp"

namespace dh::geo {

template <typename T>
struct ModulationPair {
  Tensor<T> alpha;  // [C, Y_k, X_k]
  Tensor<T> beta;
};

/// Conv weights of the two modulation branches for one VFT level.
template <typename T>
struct VftBranches {
  Tensor<T> alpha_weight, alpha_bias;  // [C, C_f, 3, 3], [C]
  Tensor<T> beta_weight, beta_bias;
};

/// Maps a feature map [C_f, Y_k, X_k] to (alpha, beta) via conv3x3 + leaky ReLU
/// per branch. `channels` is the channel count of the volume being modulated.
template <typename T>
ModulationPair<T> vft_modulators(const Tensor<T>& feature_map, const VftBranches<T>& branches,
                                 std::size_t channels, T slope = T(ops::kDefaultLeakySlope));

/// out[:, z] = alpha (.) volume[:, z] + beta for every z-slice of a [C, Z, Y, X] volume.
template <typename T>
Tensor<T> vft_apply(const Tensor<T>& volume, const ModulationPair<T>& mods);

/// The "sufficiently large" background depth for a volume of depth Z: 2 * Z.
inline double background_depth(std::size_t depth_extent) { return 2.0 * double(depth_extent); }

/// D(x, y) = min_z [M (1 - V) + z V]; gradient flows to the first argmin.
template <typename T>
Tensor<T> project_depth(const Tensor<T>& occupancy, T background);

enum class View { Front, Side };

/// Front: max over z -> [1, Y, X]. Side: max over x -> [1, Y, Z].
/// Gradient flows to the first argmax along the ray.
template <typename T>
Tensor<T> project_silhouette(const Tensor<T>& occupancy, View view);

/// (x, y, D(x, y)) per pixel -> [3, Y, X].
template <typename T>
Tensor<T> depth_to_vertex(const Tensor<T>& depth);

/// Sobel derivatives (symmetric border), N = normalize(Gx x Gy) with the
/// camera-facing sign (n_z <= 0). Pixels whose 3x3 window contains a depth
/// greater than `max_foreground_depth` output the zero vector.
template <typename T>
Tensor<T> vertex_to_normal(const Tensor<T>& vertex_map, T max_foreground_depth);

/// Linear 2x upsampling: out[2i] = in[i], out[2i+1] = (in[i] + in[i+1]) / 2,
/// with the last sample repeated at the far border. [C, H, W] -> [C, 2H, 2W].
template <typename T>
Tensor<T> upsample2x(const Tensor<T>& map);

}  // namespace dh::geo
