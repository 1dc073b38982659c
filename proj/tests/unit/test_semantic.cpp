#include <gtest/gtest.h>

#include <numbers>

#include "deephuman/semantic.hpp"
#include "oracles.hpp"

namespace dh {
namespace {

// The identity fit still flips y and z; express grid-space meshes in model space.
TriMesh from_grid(TriMesh m) {
  for (auto& v : m.vertices) v = FitTransform::identity().invert(v);
  return m;
}

TEST(SemanticCodes, MinMaxNormalizationOfRestPose) {
  TriMesh m;
  m.vertices = {Vec3(9, 9, 9), Vec3(8, 8, 8), Vec3(7, 7, 7)};
  m.rest_vertices = {Vec3(0, 0, 0), Vec3(2, 2, 2), Vec3(1, 0.5, 2)};
  m.faces = {{0, 1, 2}};
  const auto codes = assign_semantic_codes(m);
  EXPECT_EQ(codes[0], Vec3(0, 0, 0));
  EXPECT_EQ(codes[1], Vec3(1, 1, 1));
  EXPECT_TRUE(codes[2].isApprox(Vec3(0.5, 0.25, 1.0)));

  // Re-posing leaves codes unchanged.
  m.vertices = {Vec3(-1, 0, 4), Vec3(3, 3, 3), Vec3(0, 0, 0)};
  EXPECT_EQ(assign_semantic_codes(m), codes);

  m.rest_vertices = {Vec3(0, 1, 0), Vec3(2, 1, 2), Vec3(1, 1, 2)};
  EXPECT_THROW(assign_semantic_codes(m), std::invalid_argument);
}

TEST(PerturbedOrientation, NeverZeroAndAntisymmetric) {
  std::mt19937_64 rng(0);
  std::uniform_int_distribution<int> u(-3, 3);
  for (int i = 0; i < 2000; ++i) {
    const double ax = u(rng), ay = u(rng), bx = u(rng), by = u(rng), px = u(rng), py = u(rng);
    if (ax == bx && ay == by) continue;
    const int o = perturbed_orientation(ax, ay, bx, by, px, py);
    EXPECT_NE(o, 0);
    EXPECT_EQ(perturbed_orientation(bx, by, ax, ay, px, py), -o);
  }
}

TEST(Voxelize, CubeCoveringEightCubedCenters) {
  const auto box = oracle::box_mesh(Vec3(1.5, 1.5, 1.5), Vec3(9.5, 9.5, 9.5));
  const auto g = voxelize(from_grid(box), {12, 12, 12}, FitTransform::identity());
  EXPECT_EQ(g.count_nonzero(), 512u);
  EXPECT_EQ(g.at(2, 2, 2), 1.0f);
  EXPECT_EQ(g.at(1, 2, 2), 0.0f);
  EXPECT_EQ(g.at(9, 9, 9), 1.0f);
}

TEST(Voxelize, EmptyRegionAndOpenMesh) {
  const auto box = oracle::box_mesh(Vec3(20, 20, 20), Vec3(25, 25, 25));
  EXPECT_EQ(voxelize(from_grid(box), {8, 8, 8}, FitTransform::identity()).count_nonzero(), 0u);
  auto open = box;
  open.faces.pop_back();
  EXPECT_THROW(voxelize(from_grid(open), {8, 8, 8}, FitTransform::identity()), MeshError);
}

TEST(Voxelize, SphereVolumeWithinTwoPercent) {
  const auto s = oracle::icosphere(Vec3(31.5, 32.25, 31.75), 20.0, 5);
  const double expected = 4.0 / 3.0 * std::numbers::pi * 8000.0;
  const double got = double(voxelize(from_grid(s), {64, 64, 64}, FitTransform::identity()).count_nonzero());
  EXPECT_NEAR(got, expected, 0.02 * expected);
}

TEST(Voxelize, LatticeAlignedMeshHasNoParityLeaks) {
  // Faces pass exactly through voxel centers; perturbation may claim those, but nothing else leaks.
  const auto box = oracle::box_mesh(Vec3(2, 2, 2), Vec3(6, 6, 6));
  const auto g = voxelize(from_grid(box), {9, 9, 9}, FitTransform::identity());
  auto band = [](std::size_t i) { return i < 2 || i > 6 ? 0 : (i == 2 || i == 6 ? 1 : 2); };
  for (std::size_t z = 0; z < 9; ++z)
    for (std::size_t y = 0; y < 9; ++y)
      for (std::size_t x = 0; x < 9; ++x) {
        const int b = std::min({band(x), band(y), band(z)});
        if (b == 0) EXPECT_EQ(g.at(x, y, z), 0.0f) << x << y << z;
        if (b == 2) EXPECT_EQ(g.at(x, y, z), 1.0f) << x << y << z;
      }
}

TEST(FitTransform, CentersWithMarginAndFlipsYZ) {
  Aabb box;
  box.extend(Vec3(-1, 0, -0.5));
  box.extend(Vec3(1, 4, 0.5));
  const std::array<std::size_t, 3> dims{32, 48, 32};
  const auto fit = fit_to_grid(box, dims);
  const Vec3 c = fit.apply(box.center());
  EXPECT_NEAR(c.x(), 15.5, 1e-12);
  EXPECT_NEAR(c.y(), 23.5, 1e-12);
  EXPECT_NEAR(c.z(), 15.5, 1e-12);
  const Vec3 top = fit.apply(Vec3(0, 4, 0)), bottom = fit.apply(Vec3(0, 0, 0));
  EXPECT_LT(top.y(), bottom.y());
  EXPECT_NEAR(bottom.y() - top.y(), 47 * (1 - 2 * kFitMargin), 1e-9);
  EXPECT_TRUE(fit.invert(fit.apply(Vec3(0.3, 1.2, -0.4))).isApprox(Vec3(0.3, 1.2, -0.4)));
  // Nearer to the viewer (+z model) means smaller grid z.
  EXPECT_LT(fit.apply(Vec3(0, 0, 0.5)).z(), fit.apply(Vec3(0, 0, -0.5)).z());
}

TEST(SemanticVolume, VertexCodesConstantFieldAndBruteForce) {
  auto s = oracle::icosphere(Vec3(8, 8, 8), 6.0, 2);
  s.rest_vertices = s.vertices;
  const std::array<std::size_t, 3> dims{16, 16, 16};
  const auto fit = FitTransform::identity();

  const std::vector<Vec3> uniform(s.vertices.size(), Vec3(0.2, 0.4, 0.6));
  const auto g = build_semantic_volume(from_grid(s), uniform, dims, fit);
  const auto occ = voxelize(from_grid(s), dims, fit);
  for (std::size_t z = 0; z < 16; ++z)
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 0; x < 16; ++x) {
        if (occ.at(x, y, z) == 0) {
          for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(g.at(x, y, z, c), 0.0f);
          continue;
        }
        EXPECT_NEAR(g.at(x, y, z, 0), 0.2f, 1e-6);
        EXPECT_NEAR(g.at(x, y, z, 2), 0.6f, 1e-6);
      }

  const auto codes = assign_semantic_codes(s);
  const auto v = build_semantic_volume(from_grid(s), codes, dims, fit);
  for (std::size_t z = 0; z < 16; ++z)
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 0; x < 16; ++x) {
        if (occ.at(x, y, z) == 0) continue;
        const Vec3 p{double(x), double(y), double(z)};
        ClosestPoint best;
        best.distance_sq = INFINITY;
        for (std::size_t f = 0; f < s.faces.size(); ++f) {
          const auto& t = s.faces[f];
          auto cp = closest_point_on_triangle(p, s.vertices[t[0]], s.vertices[t[1]], s.vertices[t[2]]);
          if (cp.distance_sq < best.distance_sq) {
            best = cp;
            best.face = f;
          }
        }
        const auto& t = s.faces[best.face];
        const Vec3 want = best.barycentric.x() * codes[t[0]] + best.barycentric.y() * codes[t[1]] +
                          best.barycentric.z() * codes[t[2]];
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(v.at(x, y, z, c), want[c], 1e-5);
      }
}

TEST(SemanticMap, NearestTriangleWinsAndEmptyMeshIsBlank) {
  TriMesh m;
  m.vertices = {Vec3(0, 0, 5), Vec3(10, 0, 5), Vec3(0, 10, 5), Vec3(0, 0, 2), Vec3(6, 0, 2), Vec3(0, 6, 2)};
  m.faces = {{0, 1, 2}, {3, 4, 5}};
  const std::vector<Vec3> codes{Vec3(1, 0, 0), Vec3(1, 0, 0), Vec3(1, 0, 0),
                                Vec3(0, 1, 0), Vec3(0, 1, 0), Vec3(0, 1, 0)};
  const auto map = render_semantic_map(from_grid(m), codes, 12, 12, FitTransform::identity());
  for (std::size_t r = 0; r < 12; ++r)
    for (std::size_t c = 0; c < 12; ++c) {
      const double x = double(c), y = double(r);
      const bool near = x + y < 6 - 1e-9, far = x + y < 10 - 1e-9;
      if (near) EXPECT_EQ(map.at(r, c, 1), 1.0f) << r << "," << c;
      else if (far) EXPECT_EQ(map.at(r, c, 0), 1.0f) << r << "," << c;
      else if (x + y > 10 + 1e-9) EXPECT_FALSE(map.pixel_nonzero(r, c));
    }
  const auto blank = render_semantic_map(TriMesh{}, {}, 4, 4, FitTransform::identity());
  for (float v : blank.values) EXPECT_EQ(v, 0.0f);
}

TEST(SemanticMap, ForegroundMatchesVolumeSilhouetteUpToBoundary) {
  const auto s = oracle::icosphere(Vec3(12.3, 15.7, 11.1), 9.0, 4);
  const std::vector<Vec3> codes(s.vertices.size(), Vec3(0.5, 0.5, 0.5));
  const std::array<std::size_t, 3> dims{24, 32, 24};
  const auto occ = voxelize(from_grid(s), dims, FitTransform::identity());
  const auto map = render_semantic_map(from_grid(s), codes, 32, 24, FitTransform::identity());
  std::size_t mismatches = 0, boundary = 0;
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 24; ++x) {
      bool any = false;
      for (std::size_t z = 0; z < 24; ++z) any |= occ.at(x, y, z) != 0;
      if (any != map.pixel_nonzero(y, x)) {
        ++mismatches;
        const double r = std::hypot(double(x) - 12.3, double(y) - 15.7);
        if (std::abs(r - 9.0) < 1.0) ++boundary;
      }
    }
  EXPECT_EQ(mismatches, boundary);
}

}  // namespace
}  // namespace dh
