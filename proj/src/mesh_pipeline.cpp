#include "deephuman/mesh_pipeline.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>
#include <unordered_map>

#include <fmt/format.h>

namespace dh {

namespace {

// Corner i of a unit cube sits at (i & 1, (i >> 1) & 1, (i >> 2) & 1).
constexpr std::array<int, 3> corner_offset(int i) { return {i & 1, (i >> 1) & 1, (i >> 2) & 1}; }

struct CubeEdge {
  int a, b;  // corners, a is the lower endpoint
  int axis;
};

struct CaseTable {
  std::array<CubeEdge, 12> edges{};
  // loops[case] = closed polygons as sequences of cube-edge indices.
  std::array<std::vector<std::vector<int>>, 256> loops;

  int edge_index(int a, int b) const {
    for (int e = 0; e < 12; ++e)
      if ((edges[e].a == a && edges[e].b == b) || (edges[e].a == b && edges[e].b == a)) return e;
    throw std::logic_error("not a cube edge");
  }

  CaseTable() {
    int n = 0;
    for (int c = 0; c < 8; ++c)
      for (int axis = 0; axis < 3; ++axis)
        if (!(c & (1 << axis))) edges[n++] = {c, c | (1 << axis), axis};

    // Face corners ordered counter-clockwise as seen from outside the cube.
    std::array<std::array<int, 4>, 6> faces{};
    int f = 0;
    for (int axis = 0; axis < 3; ++axis) {
      const int u = (axis + 1) % 3, v = (axis + 2) % 3;
      for (int side = 0; side < 2; ++side) {
        const int base = side << axis;
        std::array<int, 4> ring{base, base | (1 << u), base | (1 << u) | (1 << v), base | (1 << v)};
        // (u, v, axis) is right-handed, so this ring is CCW around +axis.
        if (side == 0) std::reverse(ring.begin(), ring.end());
        faces[f++] = ring;
      }
    }

    for (int cs = 0; cs < 256; ++cs) {
      auto inside = [&](int c) { return (cs >> c) & 1; };
      std::array<int, 12> next;
      next.fill(-1);
      for (const auto& ring : faces) {
        for (int k = 0; k < 4; ++k) {
          const int c0 = ring[k], c1 = ring[(k + 1) % 4];
          if (inside(c0) || !inside(c1)) continue;  // not an entry crossing
          for (int j = 1; j < 4; ++j) {
            const int d0 = ring[(k + j) % 4], d1 = ring[(k + j + 1) % 4];
            if (inside(d0) && !inside(d1)) {
              next[edge_index(c0, c1)] = edge_index(d0, d1);
              break;
            }
          }
        }
      }
      std::array<bool, 12> used{};
      for (int e = 0; e < 12; ++e) {
        if (next[e] < 0 || used[e]) continue;
        std::vector<int> loop;
        for (int cur = e; !used[cur]; cur = next[cur]) {
          used[cur] = true;
          loop.push_back(cur);
        }
        loops[cs].push_back(std::move(loop));
      }
    }
  }
};

const CaseTable& case_table() {
  static const CaseTable table;
  return table;
}

}  // namespace

TriMesh marching_cubes(const VoxelGrid& volume, double iso) {
  if (!(iso > 0.0 && iso < 1.0)) throw std::invalid_argument("marching_cubes: iso must lie in (0, 1)");
  const auto& table = case_table();
  const long nx = long(volume.nx()), ny = long(volume.ny()), nz = long(volume.nz());
  auto value = [&](long x, long y, long z) -> double {
    if (x < 0 || y < 0 || z < 0 || x >= nx || y >= ny || z >= nz) return 0.0;
    return volume.at(std::size_t(x), std::size_t(y), std::size_t(z));
  };
  // Lattice corners span [-1, n] per axis; ids use coordinates shifted by +1.
  const long lx = nx + 2, ly = ny + 2;
  auto edge_id = [&](long x, long y, long z, int axis) -> std::uint64_t {
    return std::uint64_t((((z + 1) * ly + (y + 1)) * lx + (x + 1)) * 3 + axis);
  };

  TriMesh mesh;
  std::unordered_map<std::uint64_t, std::uint32_t> vertex_of_edge;
  constexpr double kMinT = 1e-4;

  for (long z = -1; z < nz; ++z)
    for (long y = -1; y < ny; ++y)
      for (long x = -1; x < nx; ++x) {
        std::array<double, 8> v{};
        int cs = 0;
        for (int c = 0; c < 8; ++c) {
          const auto o = corner_offset(c);
          v[c] = value(x + o[0], y + o[1], z + o[2]);
          if (v[c] > iso) cs |= 1 << c;
        }
        if (cs == 0 || cs == 255) continue;

        auto vertex_for = [&](int e) -> std::uint32_t {
          const auto& edge = table.edges[e];
          const auto oa = corner_offset(edge.a);
          const std::uint64_t id = edge_id(x + oa[0], y + oa[1], z + oa[2], edge.axis);
          auto it = vertex_of_edge.find(id);
          if (it != vertex_of_edge.end()) return it->second;
          const double t = std::clamp((iso - v[edge.a]) / (v[edge.b] - v[edge.a]), kMinT, 1.0 - kMinT);
          Vec3 p(double(x + oa[0]), double(y + oa[1]), double(z + oa[2]));
          p[edge.axis] += t;
          const auto idx = std::uint32_t(mesh.vertices.size());
          mesh.vertices.push_back(p);
          vertex_of_edge.emplace(id, idx);
          return idx;
        };

        for (const auto& loop : table.loops[cs]) {
          std::vector<std::uint32_t> ids;
          ids.reserve(loop.size());
          for (int e : loop) ids.push_back(vertex_for(e));
          if (ids.size() == 3) {
            mesh.faces.push_back({ids[0], ids[1], ids[2]});
            continue;
          }
          // Larger loops fan around their centroid so no interior edge can
          // coincide with an edge of a neighboring cell.
          Vec3 centroid = Vec3::Zero();
          for (auto i : ids) centroid += mesh.vertices[i];
          centroid /= double(ids.size());
          const auto center = std::uint32_t(mesh.vertices.size());
          mesh.vertices.push_back(centroid);
          for (std::size_t k = 0; k < ids.size(); ++k)
            mesh.faces.push_back({center, ids[k], ids[(k + 1) % ids.size()]});
        }
      }
  return mesh;
}

ImageMap front_depth_map(const VoxelGrid& occupancy, double background) {
  ImageMap depth(occupancy.ny(), occupancy.nx(), 1, float(background));
  for (std::size_t y = 0; y < occupancy.ny(); ++y)
    for (std::size_t x = 0; x < occupancy.nx(); ++x)
      for (std::size_t z = 0; z < occupancy.nz(); ++z)
        if (occupancy.at(x, y, z) > 0.5f) {
          depth.at(y, x) = float(z);
          break;
        }
  return depth;
}

TriMesh refine_with_normals(const TriMesh& mesh, const ImageMap& normals, const ImageMap& front_depth,
                            const RefineOptions& options) {
  if (normals.channels != 3) throw std::invalid_argument("refine_with_normals: normal map needs 3 channels");
  if (front_depth.height * 2 != normals.height || front_depth.width * 2 != normals.width)
    throw std::invalid_argument("refine_with_normals: normal map must be twice the depth map resolution");
  if (options.lambda_pos < 0) throw std::invalid_argument("refine_with_normals: lambda_pos must be >= 0");
  mesh.validate();

  const std::size_t nv = mesh.vertices.size();
  std::vector<long> unknown(nv, -1);
  std::vector<Vec3> normal_at(nv, Vec3::Zero());
  long n_unknown = 0;

  std::vector<std::vector<std::uint32_t>> ring(nv);
  for (const auto& f : mesh.faces)
    for (int k = 0; k < 3; ++k) {
      const auto a = f[k], b = f[(k + 1) % 3];
      ring[a].push_back(b);
      ring[b].push_back(a);
    }
  for (auto& r : ring) {
    std::sort(r.begin(), r.end());
    r.erase(std::unique(r.begin(), r.end()), r.end());
  }

  for (std::size_t i = 0; i < nv; ++i) {
    const Vec3& v = mesh.vertices[i];
    if (ring[i].empty()) continue;
    const long px = std::lround(v.x()), py = std::lround(v.y());
    if (px < 0 || py < 0 || px >= long(front_depth.width) || py >= long(front_depth.height)) continue;
    if (v.z() > double(front_depth.at(std::size_t(py), std::size_t(px))) + options.visibility_tolerance) continue;
    const long col = std::lround(2.0 * v.x()), row = std::lround(2.0 * v.y());
    if (col < 0 || row < 0 || col >= long(normals.width) || row >= long(normals.height)) continue;
    Vec3 n(normals.at(std::size_t(row), std::size_t(col), 0), normals.at(std::size_t(row), std::size_t(col), 1),
           normals.at(std::size_t(row), std::size_t(col), 2));
    const double len = n.norm();
    if (len < 1e-6) continue;
    normal_at[i] = n / len;
    unknown[i] = n_unknown++;
  }

  TriMesh out = mesh;
  if (n_unknown == 0) return out;

  // Normal equations of the stacked residuals, assembled row by row.
  using Triplet = Eigen::Triplet<double>;
  std::vector<Triplet> normal_triplets;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(3 * n_unknown);
  const double lp = std::max(options.lambda_pos, 1e-12);

  for (std::size_t i = 0; i < nv; ++i) {
    const long ui = unknown[i];
    if (ui < 0) continue;
    for (int c = 0; c < 3; ++c) {
      normal_triplets.emplace_back(3 * ui + c, 3 * ui + c, lp);
      rhs[3 * ui + c] += lp * mesh.vertices[i][c];
    }
    const Vec3& n = normal_at[i];
    for (auto j : ring[i]) {
      // Residual r = n.v_i - n.v_j.
      std::array<std::pair<long, double>, 6> coef{};
      int m = 0;
      double constant = 0.0;
      for (int c = 0; c < 3; ++c) coef[m++] = {3 * ui + c, n[c]};
      if (unknown[j] >= 0) {
        for (int c = 0; c < 3; ++c) coef[m++] = {3 * unknown[j] + c, -n[c]};
      } else {
        constant = -n.dot(mesh.vertices[j]);
      }
      for (int p = 0; p < m; ++p) {
        for (int q = 0; q < m; ++q) normal_triplets.emplace_back(coef[p].first, coef[q].first, coef[p].second * coef[q].second);
        rhs[coef[p].first] -= coef[p].second * constant;
      }
    }
  }

  Eigen::SparseMatrix<double> ata(3 * n_unknown, 3 * n_unknown);
  ata.setFromTriplets(normal_triplets.begin(), normal_triplets.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(ata);
  if (solver.info() != Eigen::Success) return out;
  const Eigen::VectorXd x = solver.solve(rhs);
  if (solver.info() != Eigen::Success) return out;

  for (std::size_t i = 0; i < nv; ++i) {
    const long ui = unknown[i];
    if (ui < 0) continue;
    Vec3 d = Vec3(x[3 * ui], x[3 * ui + 1], x[3 * ui + 2]) - mesh.vertices[i];
    if (!d.allFinite()) continue;
    const double len = d.norm();
    if (len > options.max_displacement) d *= options.max_displacement / len;
    out.vertices[i] = mesh.vertices[i] + d;
  }
  return out;
}

double iou(const VoxelGrid& a, const VoxelGrid& b) {
  if (a.dims != b.dims) throw std::invalid_argument("iou: grid dimensions differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.voxel_count(); ++i) {
    const bool pa = a.values[i] > 0.5f, pb = b.values[i] > 0.5f;
    inter += pa && pb;
    uni += pa || pb;
  }
  return uni == 0 ? 1.0 : double(inter) / double(uni);
}

VoxelGrid shift_z(const VoxelGrid& grid, int s) {
  VoxelGrid out(grid.dims, grid.channels, 0.0f);
  const long nz = long(grid.nz());
  for (std::size_t c = 0; c < grid.channels; ++c)
    for (long z = 0; z < nz; ++z) {
      const long src = z - s;
      if (src < 0 || src >= nz) continue;
      for (std::size_t y = 0; y < grid.ny(); ++y)
        for (std::size_t x = 0; x < grid.nx(); ++x)
          out.at(x, y, std::size_t(z), c) = grid.at(x, y, std::size_t(src), c);
    }
  return out;
}

IoUReport iou_zshift(const VoxelGrid& pred, const VoxelGrid& gt, int window) {
  if (pred.dims != gt.dims) throw std::invalid_argument("iou_zshift: grid dimensions differ");
  const long nz = long(gt.nz());
  if (window < 0) window = int(nz / 4);
  const std::size_t plane = gt.nx() * gt.ny();

  IoUReport report;
  report.iou = -1.0;
  for (int s = -window; s <= window; ++s) {
    // gt slice z pairs with pred slice z - s; slices without a partner are dropped.
    std::size_t inter = 0, uni = 0;
    for (long z = std::max(0L, long(s)); z < std::min(nz, nz + s); ++z) {
      const float* g = gt.values.data() + std::size_t(z) * plane;
      const float* p = pred.values.data() + std::size_t(z - s) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const bool pa = p[i] > 0.5f, pb = g[i] > 0.5f;
        inter += pa && pb;
        uni += pa || pb;
      }
    }
    const double value = uni == 0 ? 1.0 : double(inter) / double(uni);
    report.curve.emplace_back(s, value);
    const bool better = value > report.iou ||
                        (value == report.iou && (std::abs(s) < std::abs(report.best_shift) ||
                                                 (std::abs(s) == std::abs(report.best_shift) && s < report.best_shift)));
    if (better) {
      report.iou = value;
      report.best_shift = s;
    }
  }
  return report;
}

void write_iou_csv(const std::filesystem::path& path, const IoUReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "shift,iou\n";
  for (const auto& [s, v] : report.curve) out << fmt::format("{},{:.9g}\n", s, v);
}

}  // namespace dh
