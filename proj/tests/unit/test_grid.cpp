#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "deephuman/checkpoint.hpp"
#include "deephuman/grid.hpp"
#include "oracles.hpp"

namespace dh {
namespace {

namespace fs = std::filesystem;

fs::path temp(const std::string& name) { return fs::temp_directory_path() / ("dh_grid_" + name); }

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

TEST(VoxelGrid, IndexingIsXFastestThenYThenZThenChannel) {
  VoxelGrid g({4, 3, 2}, 2);
  EXPECT_EQ(g.index(1, 0, 0), 1u);
  EXPECT_EQ(g.index(0, 1, 0), 4u);
  EXPECT_EQ(g.index(0, 0, 1), 12u);
  EXPECT_EQ(g.index(0, 0, 0, 1), 24u);
  g.at(3, 2, 1, 1) = 5;
  g.at(0, 0, 0, 0) = 1;
  EXPECT_EQ(g.count_nonzero(), 2u);
  const auto m = g.occupancy_mask();
  EXPECT_EQ(m.channels, 1u);
  EXPECT_EQ(m.at(3, 2, 1), 1.0f);
  const auto t = g.to_tensor<double>();
  EXPECT_EQ(t.shape(), (Shape{2, 2, 3, 4}));
  EXPECT_EQ(VoxelGrid::from_tensor(t), g);
}

TEST(Dhvg, FileIsInterleavedPerVoxel) {
  VoxelGrid g({2, 1, 1}, 3);
  for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] = float(i);
  const auto p = temp("interleave.dhvg");
  write_dhvg(p, g);
  const auto bytes = slurp(p);
  ASSERT_EQ(bytes.size(), 24u + 6 * 4);
  EXPECT_EQ(std::string(bytes.data(), 4), "DHVG");
  std::uint32_t header[5];
  std::memcpy(header, bytes.data() + 4, sizeof header);
  EXPECT_EQ(header[0], kGridVersion);
  EXPECT_EQ(header[1], 2u);
  EXPECT_EQ(header[2], 1u);
  EXPECT_EQ(header[3], 1u);
  EXPECT_EQ(header[4], 3u);
  float payload[6];
  std::memcpy(payload, bytes.data() + 24, sizeof payload);
  // Planar [c][x] = c*2 + x; file order is voxel-major.
  const float expected[6] = {0, 2, 4, 1, 3, 5};
  for (int i = 0; i < 6; ++i) EXPECT_EQ(payload[i], expected[i]);
  EXPECT_EQ(read_dhvg(p), g);
  fs::remove(p);
}

TEST(Dhvg, RoundTripsVolumesAndImageMaps) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(-3, 3);
  VoxelGrid g({5, 4, 3}, 3);
  for (auto& v : g.values) v = u(rng);
  const auto p = temp("vol.dhvg");
  write_dhvg(p, g);
  EXPECT_EQ(read_dhvg(p), g);
  EXPECT_THROW(read_dhvg_image(p), FormatError);

  ImageMap m(6, 4, 3);
  for (auto& v : m.values) v = u(rng);
  write_dhvg(p, m);
  EXPECT_EQ(read_dhvg_image(p), m);
  const auto as_grid = read_dhvg(p);
  EXPECT_EQ(as_grid.dims, (std::array<std::size_t, 3>{4, 6, 1}));
  fs::remove(p);
}

TEST(Dhvg, RejectsCorruptFiles) {
  const auto p = temp("bad.dhvg");
  write_dhvg(p, VoxelGrid({2, 2, 2}, 1, 1.0f));
  auto bytes = slurp(p);
  auto write = [&](std::vector<char> b) {
    std::ofstream out(p, std::ios::binary);
    out.write(b.data(), std::streamsize(b.size()));
  };
  auto b = bytes;
  b[1] = 'X';
  write(b);
  EXPECT_THROW(read_dhvg(p), FormatError);
  b = bytes;
  b.pop_back();
  write(b);
  EXPECT_THROW(read_dhvg(p), FormatError);
  b = bytes;
  b[4] = 7;
  write(b);
  EXPECT_THROW(read_dhvg(p), FormatError);
  fs::remove(p);
}

TEST(Png, EightBitRoundTripMatchesQuantization) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> u(-0.2f, 1.2f);
  for (std::size_t channels : {1u, 3u}) {
    ImageMap m(7, 5, channels);
    for (auto& v : m.values) v = u(rng);
    const auto p = temp("img.png");
    write_png(p, m);
    auto q = m;
    quantize_to_8bit(q);
    const auto back = read_png(p);
    ASSERT_EQ(back.channels, channels);
    for (std::size_t i = 0; i < q.values.size(); ++i) EXPECT_NEAR(back.values[i], q.values[i], 1e-6);
    fs::remove(p);
  }
  EXPECT_THROW(write_png(temp("x.png"), ImageMap(2, 2, 2)), std::invalid_argument);
}

TEST(Png, NormalMapEncodesHalfOffset) {
  ImageMap n(1, 2, 3);
  n.at(0, 0, 2) = -1.0f;  // (0,0,-1)
  const auto p = temp("normal.png");
  write_normal_png(p, n);
  const auto back = read_png(p);
  EXPECT_NEAR(back.at(0, 0, 0), 128.0f / 255.0f, 1e-6);
  EXPECT_NEAR(back.at(0, 0, 2), 0.0f, 1e-6);
  fs::remove(p);
}

}  // namespace
}  // namespace dh
