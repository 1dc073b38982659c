#pragma once

// Image encoder G, vol2vol U-Net H with volumetric feature transforms, and
// normal refinement U-Net R, assembled at a configurable resolution divisor.
//
// At divisor d the networks keep 5 - log2(d) stride-2 levels so the deepest
// level always lands on the 4x6x4 (volume) / 6x4 (image) extents; channel
// widths follow the first levels of the full-resolution layout.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "deephuman/optim.hpp"
#include "deephuman/tensor.hpp"

namespace dh {

enum class FusionMode { MultiScale, FinestOnly, CoarsestOnly, LatentConcat };

std::string to_string(FusionMode mode);
FusionMode parse_fusion_mode(std::string_view text);

struct NetworkSpec {
  std::size_t scale_divisor = 1;
  FusionMode fusion_mode = FusionMode::MultiScale;

  // Full-resolution layout.
  std::array<std::size_t, 3> volume_dims{128, 192, 128};  // X, Y, Z
  std::array<std::size_t, 2> image_dims{192, 128};        // H, W
  std::vector<std::size_t> channels_g{8, 16, 32, 64, 128};
  std::vector<std::size_t> channels_h{8, 16, 32, 64, 128};
  std::size_t h_head_channels = 4;
  std::vector<std::size_t> channels_r{16, 32, 32, 32, 32};
  std::size_t r_head_channels = 8;
  double leaky_slope = 0.2;

  /// Throws std::invalid_argument when the divisor is not a power of two or
  /// does not leave at least one level with integral extents.
  void validate() const;
  std::size_t levels() const;
  std::array<std::size_t, 3> scaled_volume() const;  // X, Y, Z
  std::size_t image_height() const { return image_dims[0] / scale_divisor; }
  std::size_t image_width() const { return image_dims[1] / scale_divisor; }
  /// Levels whose encoder output is modulated by image features.
  std::vector<bool> vft_levels() const;
};

/// One recorded layer output in Table-style notation: images H x W x C,
/// volumes X x Y x Z x C.
struct TraceEntry {
  std::string net;
  std::string layer;
  std::vector<std::size_t> dims;
};
using ShapeTrace = std::vector<TraceEntry>;

template <typename T>
struct ForwardOutputs {
  Tensor<T> occupancy;   // [1, Z, Y, X], sigmoid
  Tensor<T> sil_front;   // [1, Y, X]
  Tensor<T> sil_side;    // [1, Y, Z]
  Tensor<T> depth;       // [1, Y, X]
  Tensor<T> normal_raw;  // [3, Y, X], projected from occupancy
  Tensor<T> normal;      // [3, 2Y, 2X], refined, tanh
};

template <typename T>
class DeepHumanNet {
 public:
  DeepHumanNet(NetworkSpec spec, std::uint64_t seed);

  const NetworkSpec& spec() const { return spec_; }
  ParameterStore<T>& params() { return params_; }
  const ParameterStore<T>& params() const { return params_; }

  static bool is_refiner_parameter(std::string_view name) { return name.rfind("r.", 0) == 0; }

  /// Full pipeline: G -> H (+fusion) -> projections -> R.
  ForwardOutputs<T> forward(const Tensor<T>& image, const Tensor<T>& semantic_map, const Tensor<T>& semantic_volume,
                            ShapeTrace* trace = nullptr) const;

  /// Multi-scale feature pyramid from concat(image, semantic_map).
  std::vector<Tensor<T>> encode_image(const Tensor<T>& image, const Tensor<T>& semantic_map,
                                      ShapeTrace* trace = nullptr) const;
  /// Occupancy in (0, 1) from the semantic volume and image features.
  Tensor<T> translate_volume(const Tensor<T>& semantic_volume, const std::vector<Tensor<T>>& features,
                             ShapeTrace* trace = nullptr) const;
  /// Depth projection -> vertex map -> Sobel normals at volume-plane resolution.
  Tensor<T> project_normals(const Tensor<T>& occupancy) const;
  /// R applied to concat(up(I), up(M_s), up(N_raw)).
  Tensor<T> refine_normals(const Tensor<T>& image, const Tensor<T>& semantic_map, const Tensor<T>& normal_raw,
                           ShapeTrace* trace = nullptr) const;

 private:
  void check_inputs(const Tensor<T>& image, const Tensor<T>& semantic_map, const Tensor<T>& semantic_volume) const;
  const Tensor<T>& p(const std::string& name) const { return params_.get(name); }

  NetworkSpec spec_;
  ParameterStore<T> params_;
};

extern template class DeepHumanNet<float>;
extern template class DeepHumanNet<double>;

}  // namespace dh
