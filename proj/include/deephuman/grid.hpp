#pragma once

// Dense voxel grids and image-plane maps plus their file formats.
//
// DHVG: "DHVG" | version u32 | dims u32[3] (X, Y, Z) | channels u32 |
//       f32 values, z-major then y then x, channels interleaved per voxel.
// Image-plane maps are stored as grids with X = width, Y = height, Z = 1.

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "deephuman/tensor.hpp"

namespace dh {

inline constexpr std::uint32_t kGridVersion = 1;

/// Voxel grid with planar storage [channel][z][y][x].
struct VoxelGrid {
  std::array<std::size_t, 3> dims{0, 0, 0};  // X, Y, Z
  std::size_t channels = 1;
  std::vector<float> values;

  VoxelGrid() = default;
  VoxelGrid(std::array<std::size_t, 3> dims, std::size_t channels, float fill = 0.0f);

  std::size_t nx() const { return dims[0]; }
  std::size_t ny() const { return dims[1]; }
  std::size_t nz() const { return dims[2]; }
  std::size_t voxel_count() const { return dims[0] * dims[1] * dims[2]; }
  std::size_t index(std::size_t x, std::size_t y, std::size_t z, std::size_t c = 0) const {
    return ((c * dims[2] + z) * dims[1] + y) * dims[0] + x;
  }
  float& at(std::size_t x, std::size_t y, std::size_t z, std::size_t c = 0) { return values[index(x, y, z, c)]; }
  float at(std::size_t x, std::size_t y, std::size_t z, std::size_t c = 0) const {
    return values[index(x, y, z, c)];
  }

  /// Voxels with any nonzero channel.
  std::size_t count_nonzero() const;
  /// Single-channel 0/1 grid of voxels whose channels are not all zero.
  VoxelGrid occupancy_mask() const;

  template <typename T>
  Tensor<T> to_tensor() const;
  template <typename T>
  static VoxelGrid from_tensor(const Tensor<T>& t);

  bool operator==(const VoxelGrid&) const = default;
};

/// H x W map with planar storage [channel][row][col]; rows follow grid y, columns grid x.
struct ImageMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<float> values;

  ImageMap() = default;
  ImageMap(std::size_t height, std::size_t width, std::size_t channels, float fill = 0.0f);

  std::size_t index(std::size_t row, std::size_t col, std::size_t c = 0) const {
    return (c * height + row) * width + col;
  }
  float& at(std::size_t row, std::size_t col, std::size_t c = 0) { return values[index(row, col, c)]; }
  float at(std::size_t row, std::size_t col, std::size_t c = 0) const { return values[index(row, col, c)]; }
  bool pixel_nonzero(std::size_t row, std::size_t col) const;

  template <typename T>
  Tensor<T> to_tensor() const;
  template <typename T>
  static ImageMap from_tensor(const Tensor<T>& t);

  bool operator==(const ImageMap&) const = default;
};

void write_dhvg(const std::filesystem::path& path, const VoxelGrid& grid);
VoxelGrid read_dhvg(const std::filesystem::path& path);
void write_dhvg(const std::filesystem::path& path, const ImageMap& map);
ImageMap read_dhvg_image(const std::filesystem::path& path);

/// 8-bit RGB (3 channels) or grey (1 channel) PNG; values are clamped to [0,1].
void write_png(const std::filesystem::path& path, const ImageMap& map);
ImageMap read_png(const std::filesystem::path& path);
/// Normal map to RGB via (n + 1) / 2.
void write_normal_png(const std::filesystem::path& path, const ImageMap& normals);
/// Rounds values to the nearest 1/255 step, i.e. what a PNG round trip keeps.
void quantize_to_8bit(ImageMap& map);

}  // namespace dh
