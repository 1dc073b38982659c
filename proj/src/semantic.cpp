#include "deephuman/semantic.hpp"

#include <algorithm>
#include <cmath>

namespace dh {

FitTransform fit_to_grid(const Aabb& box, const std::array<std::size_t, 3>& dims, double margin) {
  const Vec3 ext = box.extent();
  double scale = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 2) throw std::invalid_argument("fit_to_grid: every grid axis needs at least 2 voxels");
    if (ext[a] > 0) scale = std::min(scale, (1.0 - 2.0 * margin) * double(dims[a] - 1) / ext[a]);
  }
  if (!std::isfinite(scale)) throw std::invalid_argument("fit_to_grid: degenerate bounding box");
  FitTransform fit{scale, Vec3::Zero()};
  const Vec3 grid_center(0.5 * double(dims[0] - 1), 0.5 * double(dims[1] - 1), 0.5 * double(dims[2] - 1));
  fit.offset = grid_center - fit.apply(box.center());
  return fit;
}

TriMesh transform_mesh(const TriMesh& mesh, const FitTransform& fit) {
  TriMesh out = mesh;
  for (auto& v : out.vertices) v = fit.apply(v);
  return out;
}

std::vector<Vec3> assign_semantic_codes(const TriMesh& mesh) {
  const auto& rest = mesh.rest_vertices.empty() ? mesh.vertices : mesh.rest_vertices;
  if (!mesh.rest_vertices.empty() && mesh.rest_vertices.size() != mesh.vertices.size())
    throw std::invalid_argument("assign_semantic_codes: rest_vertices count differs from vertices");
  const Aabb box = bounding_box(rest);
  const Vec3 ext = box.extent();
  for (int a = 0; a < 3; ++a)
    if (!(ext[a] > 0))
      throw std::invalid_argument("assign_semantic_codes: rest-pose bounding box has zero extent on axis " +
                                  std::to_string(a));
  std::vector<Vec3> codes;
  codes.reserve(rest.size());
  for (const auto& r : rest) codes.push_back(((r - box.min).array() / ext.array()).matrix());
  return codes;
}

int perturbed_orientation(double ax, double ay, double bx, double by, double px, double py) {
  if (ax > bx || (ax == bx && ay > by)) return -perturbed_orientation(bx, by, ax, ay, px, py);
  const double det = (bx - ax) * (py - ay) - (by - ay) * (px - ax);
  if (det > 0) return 1;
  if (det < 0) return -1;
  if (by != ay) return by > ay ? -1 : 1;
  if (bx != ax) return bx > ax ? 1 : -1;
  return 0;
}

namespace {

struct Projected {
  double x[3], y[3], z[3];
  double area2;
};

Projected project_face(const TriMesh& m, const Face& f, double s) {
  Projected p{};
  for (int k = 0; k < 3; ++k) {
    const Vec3& v = m.vertices[f[k]];
    p.x[k] = v.x() * s;
    p.y[k] = v.y() * s;
    p.z[k] = v.z();
  }
  p.area2 = (p.x[1] - p.x[0]) * (p.y[2] - p.y[0]) - (p.y[1] - p.y[0]) * (p.x[2] - p.x[0]);
  return p;
}

// Visits every integer sample (px, py) inside the projected triangle, with
// barycentric weights; bounds are [0, w) x [0, h).
template <typename F>
void for_each_covered(const Projected& t, std::size_t h, std::size_t w, F&& visit) {
  if (t.area2 == 0) return;
  const double minx = std::min({t.x[0], t.x[1], t.x[2]}), maxx = std::max({t.x[0], t.x[1], t.x[2]});
  const double miny = std::min({t.y[0], t.y[1], t.y[2]}), maxy = std::max({t.y[0], t.y[1], t.y[2]});
  const long c0 = std::max<long>(0, long(std::ceil(minx))), c1 = std::min<long>(long(w) - 1, long(std::floor(maxx)));
  const long r0 = std::max<long>(0, long(std::ceil(miny))), r1 = std::min<long>(long(h) - 1, long(std::floor(maxy)));
  for (long r = r0; r <= r1; ++r)
    for (long c = c0; c <= c1; ++c) {
      const double px = double(c), py = double(r);
      const int s0 = perturbed_orientation(t.x[0], t.y[0], t.x[1], t.y[1], px, py);
      const int s1 = perturbed_orientation(t.x[1], t.y[1], t.x[2], t.y[2], px, py);
      const int s2 = perturbed_orientation(t.x[2], t.y[2], t.x[0], t.y[0], px, py);
      if (s0 == 0 || s0 != s1 || s1 != s2) continue;
      const double wa = ((t.x[2] - t.x[1]) * (py - t.y[1]) - (t.y[2] - t.y[1]) * (px - t.x[1])) / t.area2;
      const double wb = ((t.x[0] - t.x[2]) * (py - t.y[2]) - (t.y[0] - t.y[2]) * (px - t.x[2])) / t.area2;
      const Vec3 bary(wa, wb, 1.0 - wa - wb);
      visit(std::size_t(r), std::size_t(c), bary, bary.dot(Vec3(t.z[0], t.z[1], t.z[2])));
    }
}

}  // namespace

Raster rasterize(const TriMesh& grid_mesh, std::size_t height, std::size_t width, double pixel_scale) {
  grid_mesh.validate();
  Raster r;
  r.height = height;
  r.width = width;
  r.face.assign(height * width, -1);
  r.barycentric.assign(height * width, Vec3::Zero());
  r.depth.assign(height * width, std::numeric_limits<double>::infinity());
  for (std::size_t fi = 0; fi < grid_mesh.faces.size(); ++fi) {
    const Projected t = project_face(grid_mesh, grid_mesh.faces[fi], pixel_scale);
    for_each_covered(t, height, width, [&](std::size_t row, std::size_t col, const Vec3& bary, double z) {
      const std::size_t i = row * width + col;
      if (z < r.depth[i]) {
        r.depth[i] = z;
        r.face[i] = std::int32_t(fi);
        r.barycentric[i] = bary;
      }
    });
  }
  return r;
}

VoxelGrid voxelize(const TriMesh& mesh, const std::array<std::size_t, 3>& dims, const FitTransform& fit) {
  mesh.validate();
  require_watertight(mesh);
  const TriMesh g = transform_mesh(mesh, fit);
  const auto [nx, ny, nz] = dims;
  std::vector<std::vector<double>> columns(nx * ny);
  for (const auto& f : g.faces) {
    const Projected t = project_face(g, f, 1.0);
    for_each_covered(t, ny, nx, [&](std::size_t row, std::size_t col, const Vec3&, double z) {
      columns[row * nx + col].push_back(z);
    });
  }
  VoxelGrid out(dims, 1);
  for (std::size_t y = 0; y < ny; ++y)
    for (std::size_t x = 0; x < nx; ++x) {
      auto& zs = columns[y * nx + x];
      if (zs.empty()) continue;
      std::sort(zs.begin(), zs.end());
      std::size_t below = 0;
      for (std::size_t z = 0; z < nz; ++z) {
        while (below < zs.size() && zs[below] < double(z)) ++below;
        if (below % 2 == 1) out.at(x, y, z) = 1.0f;
      }
    }
  return out;
}

VoxelGrid build_semantic_volume(const TriMesh& mesh, const std::vector<Vec3>& codes,
                                const std::array<std::size_t, 3>& dims, const FitTransform& fit) {
  if (codes.size() != mesh.vertices.size())
    throw std::invalid_argument("build_semantic_volume: one code per vertex required");
  const VoxelGrid occ = voxelize(mesh, dims, fit);
  const TriMesh g = transform_mesh(mesh, fit);
  VoxelGrid out(dims, 3);
  if (g.faces.empty()) return out;
  const TriangleBvh bvh(g);
  for (std::size_t z = 0; z < dims[2]; ++z)
    for (std::size_t y = 0; y < dims[1]; ++y)
      for (std::size_t x = 0; x < dims[0]; ++x) {
        if (occ.at(x, y, z) == 0.0f) continue;
        const ClosestPoint cp = bvh.closest(Vec3(double(x), double(y), double(z)));
        const Face& f = g.faces[cp.face];
        const Vec3 code =
            cp.barycentric[0] * codes[f[0]] + cp.barycentric[1] * codes[f[1]] + cp.barycentric[2] * codes[f[2]];
        for (int c = 0; c < 3; ++c) out.at(x, y, z, c) = float(std::clamp(code[c], 0.0, 1.0));
      }
  return out;
}

ImageMap render_semantic_map(const TriMesh& mesh, const std::vector<Vec3>& codes, std::size_t height,
                             std::size_t width, const FitTransform& fit) {
  if (codes.size() != mesh.vertices.size())
    throw std::invalid_argument("render_semantic_map: one code per vertex required");
  const Raster r = rasterize(transform_mesh(mesh, fit), height, width, 1.0);
  ImageMap out(height, width, 3);
  for (std::size_t row = 0; row < height; ++row)
    for (std::size_t col = 0; col < width; ++col) {
      if (!r.covered(row, col)) continue;
      const std::size_t i = row * width + col;
      const Face& f = mesh.faces[std::size_t(r.face[i])];
      const Vec3& b = r.barycentric[i];
      const Vec3 code = b[0] * codes[f[0]] + b[1] * codes[f[1]] + b[2] * codes[f[2]];
      for (int c = 0; c < 3; ++c) out.at(row, col, c) = float(std::clamp(code[c], 0.0, 1.0));
    }
  return out;
}

}  // namespace dh
