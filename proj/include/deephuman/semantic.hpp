#pragma once

// Dense semantic representation of a posed template body: per-vertex codes
// from rest-pose coordinates, the orthographic semantic map, and the
// voxelized semantic volume.
//
// Grid space: voxel (x, y, z) has its center at integer coordinates (x, y, z).
// The camera looks along +z, so smaller z is nearer. Pixel (row, col) of an
// image-plane map samples grid point (col, row) divided by its pixel scale.

#include <array>
#include <vector>

#include "deephuman/grid.hpp"
#include "deephuman/mesh.hpp"

namespace dh {

/// Model space (y up, +z toward the viewer) to grid space:
/// grid = scale * (x, -y, -z) + offset. A proper rotation plus uniform scale.
struct FitTransform {
  double scale = 1.0;
  Vec3 offset = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return scale * Vec3(p.x(), -p.y(), -p.z()) + offset; }
  Vec3 apply_direction(const Vec3& d) const { return Vec3(d.x(), -d.y(), -d.z()); }
  Vec3 invert(const Vec3& g) const {
    Vec3 q = (g - offset) / scale;
    return Vec3(q.x(), -q.y(), -q.z());
  }
  static FitTransform identity() { return {1.0, Vec3::Zero()}; }
};

inline constexpr double kFitMargin = 0.05;

/// Centers `box` (model space) in a grid of `dims` = (X, Y, Z) with a uniform
/// scale leaving `margin` of each axis free on either side.
FitTransform fit_to_grid(const Aabb& box, const std::array<std::size_t, 3>& dims, double margin = kFitMargin);

TriMesh transform_mesh(const TriMesh& mesh, const FitTransform& fit);

/// code_i = (rest_i - bbox_min) / (bbox_max - bbox_min) over the rest-pose bounding box.
std::vector<Vec3> assign_semantic_codes(const TriMesh& mesh);

/// Orientation of p relative to segment a->b with symbolic perturbation
/// p + (eps, eps^2); never returns 0 for a non-degenerate segment and is
/// exactly antisymmetric in (a, b).
int perturbed_orientation(double ax, double ay, double bx, double by, double px, double py);

/// Per-pixel front-most triangle coverage.
struct Raster {
  std::size_t height = 0, width = 0;
  std::vector<std::int32_t> face;  // -1 where uncovered
  std::vector<Vec3> barycentric;
  std::vector<double> depth;  // grid z of the visible surface

  bool covered(std::size_t row, std::size_t col) const { return face[row * width + col] >= 0; }
};

/// Rasterizes a grid-space mesh. Pixel (row, col) samples (col, row) / pixel_scale.
Raster rasterize(const TriMesh& grid_mesh, std::size_t height, std::size_t width, double pixel_scale = 1.0);

/// Occupancy of a watertight mesh by +z ray parity at voxel centers.
/// The mesh is mapped into the grid with `fit` first.
VoxelGrid voxelize(const TriMesh& mesh, const std::array<std::size_t, 3>& dims, const FitTransform& fit);

/// Three-channel grid: each occupied voxel carries the barycentric code of the
/// nearest surface point; empty voxels are zero.
VoxelGrid build_semantic_volume(const TriMesh& mesh, const std::vector<Vec3>& codes,
                                const std::array<std::size_t, 3>& dims, const FitTransform& fit);

/// Orthographic front render of interpolated codes; background is zero.
ImageMap render_semantic_map(const TriMesh& mesh, const std::vector<Vec3>& codes, std::size_t height,
                             std::size_t width, const FitTransform& fit);

}  // namespace dh
