#pragma once

// Volume-to-mesh extraction, normal-guided mesh refinement and the z-shift
// IoU metric. Meshes live in grid space (voxel centers at integer coordinates).

#include <filesystem>
#include <vector>

#include "deephuman/grid.hpp"
#include "deephuman/mesh.hpp"

namespace dh {

/// Marching cubes over channel 0 of `volume`. Samples outside the grid count
/// as 0, so any isosurface is closed. Vertices on the same lattice edge are
/// shared; faces are oriented outward (toward values <= iso).
TriMesh marching_cubes(const VoxelGrid& volume, double iso = 0.5);

/// Per-pixel first occupied z of a binary grid, `background` where a ray is empty.
ImageMap front_depth_map(const VoxelGrid& occupancy, double background);

struct RefineOptions {
  double lambda_pos = 0.1;
  double max_displacement = 2.0;
  double visibility_tolerance = 1.0;
};

/// Screened normal-guided refinement. Vertices that pass the front depth test
/// and land on a nonzero normal are unknowns; each contributes
/// lambda_pos |v - v0|^2 and, per one-ring neighbor u, <n(v), v - u>^2. All
/// other vertices stay fixed. `normals` is [3, 2Y, 2X]; `front_depth` is [Y, X].
TriMesh refine_with_normals(const TriMesh& mesh, const ImageMap& normals, const ImageMap& front_depth,
                            const RefineOptions& options = {});

struct IoUReport {
  int best_shift = 0;
  double iou = 0.0;
  std::vector<std::pair<int, double>> curve;  // (shift, iou) for shift in [-window, window]
};

double iou(const VoxelGrid& a, const VoxelGrid& b);

/// Max over integer z-shifts s of IoU(shift_z(pred, s), gt), where both grids
/// are restricted to the depth range that overlaps after shifting. Ties prefer
/// the smallest |s|, then the negative shift. window < 0 selects Z / 4.
IoUReport iou_zshift(const VoxelGrid& pred, const VoxelGrid& gt, int window = -1);

/// out[z] = grid[z - s]; voxels shifted out of range are dropped.
VoxelGrid shift_z(const VoxelGrid& grid, int s);

void write_iou_csv(const std::filesystem::path& path, const IoUReport& report);

}  // namespace dh
