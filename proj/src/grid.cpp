#include "deephuman/grid.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "binary_io.hpp"

namespace dh {

VoxelGrid::VoxelGrid(std::array<std::size_t, 3> d, std::size_t c, float fill)
    : dims(d), channels(c), values(d[0] * d[1] * d[2] * c, fill) {}

std::size_t VoxelGrid::count_nonzero() const {
  std::size_t n = 0;
  const std::size_t vc = voxel_count();
  for (std::size_t i = 0; i < vc; ++i)
    for (std::size_t c = 0; c < channels; ++c)
      if (values[c * vc + i] != 0.0f) {
        ++n;
        break;
      }
  return n;
}

VoxelGrid VoxelGrid::occupancy_mask() const {
  VoxelGrid out(dims, 1);
  const std::size_t vc = voxel_count();
  for (std::size_t i = 0; i < vc; ++i)
    for (std::size_t c = 0; c < channels; ++c)
      if (values[c * vc + i] != 0.0f) {
        out.values[i] = 1.0f;
        break;
      }
  return out;
}

template <typename T>
Tensor<T> VoxelGrid::to_tensor() const {
  return Tensor<T>(Shape{channels, dims[2], dims[1], dims[0]}, std::vector<T>(values.begin(), values.end()));
}

template <typename T>
VoxelGrid VoxelGrid::from_tensor(const Tensor<T>& t) {
  if (t.rank() != 4) throw ShapeError("VoxelGrid::from_tensor expects [C,Z,Y,X], got " + shape_str(t.shape()));
  VoxelGrid g({t.dim(3), t.dim(2), t.dim(1)}, t.dim(0));
  std::transform(t.values().begin(), t.values().end(), g.values.begin(), [](T v) { return float(v); });
  return g;
}

ImageMap::ImageMap(std::size_t h, std::size_t w, std::size_t c, float fill)
    : height(h), width(w), channels(c), values(h * w * c, fill) {}

bool ImageMap::pixel_nonzero(std::size_t row, std::size_t col) const {
  for (std::size_t c = 0; c < channels; ++c)
    if (at(row, col, c) != 0.0f) return true;
  return false;
}

template <typename T>
Tensor<T> ImageMap::to_tensor() const {
  return Tensor<T>(Shape{channels, height, width}, std::vector<T>(values.begin(), values.end()));
}

template <typename T>
ImageMap ImageMap::from_tensor(const Tensor<T>& t) {
  if (t.rank() != 3) throw ShapeError("ImageMap::from_tensor expects [C,H,W], got " + shape_str(t.shape()));
  ImageMap m(t.dim(1), t.dim(2), t.dim(0));
  std::transform(t.values().begin(), t.values().end(), m.values.begin(), [](T v) { return float(v); });
  return m;
}

template Tensor<float> VoxelGrid::to_tensor<float>() const;
template Tensor<double> VoxelGrid::to_tensor<double>() const;
template VoxelGrid VoxelGrid::from_tensor<float>(const Tensor<float>&);
template VoxelGrid VoxelGrid::from_tensor<double>(const Tensor<double>&);
template Tensor<float> ImageMap::to_tensor<float>() const;
template Tensor<double> ImageMap::to_tensor<double>() const;
template ImageMap ImageMap::from_tensor<float>(const Tensor<float>&);
template ImageMap ImageMap::from_tensor<double>(const Tensor<double>&);

namespace {

// Planar storage <-> interleaved file order.
std::vector<char> encode_grid(std::size_t nx, std::size_t ny, std::size_t nz, std::size_t channels,
                              const std::vector<float>& planar) {
  detail::ByteWriter w;
  w.bytes("DHVG");
  w.u32(kGridVersion);
  w.u32(std::uint32_t(nx));
  w.u32(std::uint32_t(ny));
  w.u32(std::uint32_t(nz));
  w.u32(std::uint32_t(channels));
  const std::size_t vc = nx * ny * nz;
  std::vector<float> inter(vc * channels);
  for (std::size_t i = 0; i < vc; ++i)
    for (std::size_t c = 0; c < channels; ++c) inter[i * channels + c] = planar[c * vc + i];
  w.raw(inter.data(), inter.size() * sizeof(float));
  return std::move(w.buffer());
}

struct DecodedGrid {
  std::size_t nx, ny, nz, channels;
  std::vector<float> planar;
};

DecodedGrid decode_grid(const std::vector<char>& bytes) {
  detail::ByteReader r(bytes, "DHVG");
  if (bytes.size() < 4 || r.str(4) != "DHVG") throw FormatError("DHVG: bad magic");
  const auto version = r.u32();
  if (version != kGridVersion) throw FormatError("DHVG: unsupported version " + std::to_string(version));
  DecodedGrid g;
  g.nx = r.u32();
  g.ny = r.u32();
  g.nz = r.u32();
  g.channels = r.u32();
  const std::size_t vc = g.nx * g.ny * g.nz;
  if (vc == 0 || g.channels == 0) throw FormatError("DHVG: empty dimensions");
  if (vc * g.channels * sizeof(float) != r.remaining()) throw FormatError("DHVG: payload size mismatch");
  std::vector<float> inter(vc * g.channels);
  r.raw(inter.data(), inter.size() * sizeof(float));
  g.planar.resize(inter.size());
  for (std::size_t i = 0; i < vc; ++i)
    for (std::size_t c = 0; c < g.channels; ++c) g.planar[c * vc + i] = inter[i * g.channels + c];
  return g;
}

std::uint8_t to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return std::uint8_t(std::lround(c * 255.0f));
}

}  // namespace

void write_dhvg(const std::filesystem::path& path, const VoxelGrid& grid) {
  detail::write_file(path, encode_grid(grid.dims[0], grid.dims[1], grid.dims[2], grid.channels, grid.values));
}

VoxelGrid read_dhvg(const std::filesystem::path& path) {
  auto g = decode_grid(detail::read_file(path));
  VoxelGrid out;
  out.dims = {g.nx, g.ny, g.nz};
  out.channels = g.channels;
  out.values = std::move(g.planar);
  return out;
}

void write_dhvg(const std::filesystem::path& path, const ImageMap& map) {
  detail::write_file(path, encode_grid(map.width, map.height, 1, map.channels, map.values));
}

ImageMap read_dhvg_image(const std::filesystem::path& path) {
  auto g = decode_grid(detail::read_file(path));
  if (g.nz != 1) throw FormatError("DHVG: expected an image-plane map (Z = 1), got Z = " + std::to_string(g.nz));
  ImageMap out;
  out.height = g.ny;
  out.width = g.nx;
  out.channels = g.channels;
  out.values = std::move(g.planar);
  return out;
}

void quantize_to_8bit(ImageMap& map) {
  for (auto& v : map.values) v = float(to_byte(v)) / 255.0f;
}

void write_png(const std::filesystem::path& path, const ImageMap& map) {
  if (map.channels != 1 && map.channels != 3)
    throw std::invalid_argument("write_png: need 1 or 3 channels, got " + std::to_string(map.channels));
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw std::runtime_error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, png_uint_32(map.width), png_uint_32(map.height), 8,
               map.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(map.width * map.channels);
  for (std::size_t y = 0; y < map.height; ++y) {
    for (std::size_t x = 0; x < map.width; ++x)
      for (std::size_t c = 0; c < map.channels; ++c) row[x * map.channels + c] = to_byte(map.at(y, x, c));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

ImageMap read_png(const std::filesystem::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw std::runtime_error("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("libpng failed reading " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const auto width = png_get_image_width(png, info);
  const auto height = png_get_image_height(png, info);
  const auto color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) != 8 || (color != PNG_COLOR_TYPE_RGB && color != PNG_COLOR_TYPE_GRAY)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("read_png: only 8-bit RGB or grey images are supported");
  }
  const std::size_t channels = color == PNG_COLOR_TYPE_RGB ? 3 : 1;
  ImageMap map(height, width, channels);
  std::vector<png_byte> row(width * channels);
  for (std::size_t y = 0; y < height; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < channels; ++c) map.at(y, x, c) = float(row[x * channels + c]) / 255.0f;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return map;
}

void write_normal_png(const std::filesystem::path& path, const ImageMap& normals) {
  ImageMap rgb = normals;
  for (auto& v : rgb.values) v = (v + 1.0f) * 0.5f;
  write_png(path, rgb);
}

}  // namespace dh
