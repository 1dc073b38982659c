#include "deephuman/mesh.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <fmt/core.h>
#include <fmt/os.h>

namespace dh {

void TriMesh::validate() const {
  for (const auto& f : faces)
    for (auto i : f)
      if (i >= vertices.size())
        throw std::invalid_argument("face index " + std::to_string(i) + " out of range (" +
                                    std::to_string(vertices.size()) + " vertices)");
  if (!rest_vertices.empty() && rest_vertices.size() != vertices.size())
    throw std::invalid_argument("rest_vertices count differs from vertices count");
  if (!colors.empty() && colors.size() != vertices.size())
    throw std::invalid_argument("colors count differs from vertices count");
}

std::optional<EdgeDefect> find_non_manifold_edge(const TriMesh& mesh) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::size_t> edges;
  for (const auto& f : mesh.faces)
    for (int k = 0; k < 3; ++k) {
      auto a = f[k], b = f[(k + 1) % 3];
      ++edges[{std::min(a, b), std::max(a, b)}];
    }
  for (const auto& [e, n] : edges)
    if (n != 2) return EdgeDefect{e.first, e.second, n};
  return std::nullopt;
}

bool is_watertight(const TriMesh& mesh) { return !find_non_manifold_edge(mesh).has_value(); }

void require_watertight(const TriMesh& mesh) {
  if (auto d = find_non_manifold_edge(mesh))
    throw MeshError(fmt::format("mesh is not watertight: edge ({}, {}) is shared by {} face(s)", d->a, d->b,
                                d->face_count));
}

double Aabb::distance_sq(const Vec3& p) const {
  Vec3 d = (min - p).cwiseMax(p - max).cwiseMax(Vec3::Zero());
  return d.squaredNorm();
}

Aabb bounding_box(const std::vector<Vec3>& points) {
  Aabb b;
  for (const auto& p : points) b.extend(p);
  return b;
}

double enclosed_volume(const TriMesh& mesh) {
  double v = 0;
  for (const auto& f : mesh.faces)
    v += mesh.vertices[f[0]].dot(mesh.vertices[f[1]].cross(mesh.vertices[f[2]]));
  return v / 6.0;
}

Vec3 face_normal(const TriMesh& mesh, std::size_t face) {
  const auto& f = mesh.faces[face];
  Vec3 n = (mesh.vertices[f[1]] - mesh.vertices[f[0]]).cross(mesh.vertices[f[2]] - mesh.vertices[f[0]]);
  const double len = n.norm();
  return len > 0 ? Vec3(n / len) : Vec3::Zero();
}

double face_area(const TriMesh& mesh, std::size_t face) {
  const auto& f = mesh.faces[face];
  return 0.5 * (mesh.vertices[f[1]] - mesh.vertices[f[0]]).cross(mesh.vertices[f[2]] - mesh.vertices[f[0]]).norm();
}

std::vector<Vec3> vertex_normals(const TriMesh& mesh) {
  std::vector<Vec3> n(mesh.vertices.size(), Vec3::Zero());
  for (const auto& f : mesh.faces) {
    Vec3 w = (mesh.vertices[f[1]] - mesh.vertices[f[0]]).cross(mesh.vertices[f[2]] - mesh.vertices[f[0]]);
    for (auto i : f) n[i] += w;
  }
  for (auto& v : n) {
    const double len = v.norm();
    if (len > 0) v /= len;
  }
  return n;
}

std::size_t remove_degenerate_faces(TriMesh& mesh, double min_area) {
  const std::size_t before = mesh.faces.size();
  std::vector<Face> kept;
  kept.reserve(before);
  for (std::size_t i = 0; i < before; ++i) {
    const auto& f = mesh.faces[i];
    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) continue;
    if (face_area(mesh, i) <= min_area) continue;
    kept.push_back(f);
  }
  mesh.faces = std::move(kept);
  return before - mesh.faces.size();
}

ClosestPoint closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  ClosestPoint r;
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  auto finish = [&](double u, double v, double w) {
    r.barycentric = Vec3(u, v, w);
    r.point = u * a + v * b + w * c;
    r.distance_sq = (p - r.point).squaredNorm();
    return r;
  };
  if (d1 <= 0 && d2 <= 0) return finish(1, 0, 0);
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return finish(0, 1, 0);
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) {
    const double v = d1 / (d1 - d3);
    return finish(1 - v, v, 0);
  }
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return finish(0, 0, 1);
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) {
    const double w = d2 / (d2 - d6);
    return finish(1 - w, 0, w);
  }
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return finish(0, 1 - w, w);
  }
  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom, w = vc * denom;
  return finish(1 - v - w, v, w);
}

TriangleBvh::TriangleBvh(const TriMesh& mesh) : mesh_(mesh) {
  const std::size_t n = mesh.faces.size();
  order_.resize(n);
  std::iota(order_.begin(), order_.end(), 0u);
  face_boxes_.resize(n);
  centroids_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& f = mesh.faces[i];
    for (auto v : f) face_boxes_[i].extend(mesh.vertices[v]);
    centroids_[i] = (mesh.vertices[f[0]] + mesh.vertices[f[1]] + mesh.vertices[f[2]]) / 3.0;
  }
  if (n > 0) {
    nodes_.reserve(2 * n);
    build(0, std::uint32_t(n));
  }
}

std::uint32_t TriangleBvh::build(std::uint32_t first, std::uint32_t count) {
  const auto id = std::uint32_t(nodes_.size());
  nodes_.emplace_back();
  Aabb box, cbox;
  for (std::uint32_t i = first; i < first + count; ++i) {
    box.extend(face_boxes_[order_[i]]);
    cbox.extend(centroids_[order_[i]]);
  }
  nodes_[id].box = box;
  if (count <= 4) {
    nodes_[id].first = first;
    nodes_[id].count = count;
    return id;
  }
  int axis = 0;
  cbox.extent().maxCoeff(&axis);
  const std::uint32_t mid = first + count / 2;
  std::nth_element(order_.begin() + first, order_.begin() + mid, order_.begin() + first + count,
                   [&](std::uint32_t a, std::uint32_t b) {
                     if (centroids_[a][axis] != centroids_[b][axis]) return centroids_[a][axis] < centroids_[b][axis];
                     return a < b;
                   });
  const auto left = build(first, mid - first);
  const auto right = build(mid, first + count - mid);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

ClosestPoint TriangleBvh::closest(const Vec3& p) const {
  if (nodes_.empty()) throw MeshError("closest-point query on an empty mesh");
  ClosestPoint best;
  best.distance_sq = std::numeric_limits<double>::infinity();
  std::vector<std::uint32_t> stack{0};
  while (!stack.empty()) {
    const auto& node = nodes_[stack.back()];
    stack.pop_back();
    if (node.box.distance_sq(p) > best.distance_sq) continue;
    if (node.count > 0) {
      for (std::uint32_t i = node.first; i < node.first + node.count; ++i) {
        const auto fi = order_[i];
        const auto& f = mesh_.faces[fi];
        auto cp = closest_point_on_triangle(p, mesh_.vertices[f[0]], mesh_.vertices[f[1]], mesh_.vertices[f[2]]);
        // Ties resolve to the lowest face index so results do not depend on tree layout.
        if (cp.distance_sq < best.distance_sq || (cp.distance_sq == best.distance_sq && fi < best.face)) {
          cp.face = fi;
          best = cp;
        }
      }
    } else {
      const double dl = nodes_[node.left].box.distance_sq(p);
      const double dr = nodes_[node.right].box.distance_sq(p);
      if (dl < dr) {
        stack.push_back(node.right);
        stack.push_back(node.left);
      } else {
        stack.push_back(node.left);
        stack.push_back(node.right);
      }
    }
  }
  return best;
}

void write_obj(const std::filesystem::path& path, const TriMesh& mesh) {
  mesh.validate();
  auto out = fmt::output_file(path.string());
  const bool colored = !mesh.colors.empty();
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const auto& v = mesh.vertices[i];
    if (colored) {
      const auto& c = mesh.colors[i];
      out.print("v {:.17g} {:.17g} {:.17g} {:.17g} {:.17g} {:.17g}\n", v.x(), v.y(), v.z(), c.x(), c.y(), c.z());
    } else {
      out.print("v {:.17g} {:.17g} {:.17g}\n", v.x(), v.y(), v.z());
    }
  }
  for (const auto& f : mesh.faces) out.print("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1);
}

TriMesh read_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  TriMesh mesh;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      double x, y, z;
      if (!(ls >> x >> y >> z)) throw std::runtime_error(fmt::format("{}:{}: malformed vertex", path.string(), lineno));
      mesh.vertices.emplace_back(x, y, z);
      double r, g, b;
      if (ls >> r >> g >> b) mesh.colors.emplace_back(r, g, b);
    } else if (tag == "f") {
      Face f{};
      for (int k = 0; k < 3; ++k) {
        std::string tok;
        if (!(ls >> tok)) throw std::runtime_error(fmt::format("{}:{}: face needs 3 indices", path.string(), lineno));
        const long idx = std::stol(tok.substr(0, tok.find('/')));
        if (idx <= 0) throw std::runtime_error(fmt::format("{}:{}: unsupported face index", path.string(), lineno));
        f[k] = std::uint32_t(idx - 1);
      }
      mesh.faces.push_back(f);
    }
  }
  if (!mesh.colors.empty() && mesh.colors.size() != mesh.vertices.size())
    throw std::runtime_error(path.string() + ": vertex colors present on only some vertices");
  mesh.validate();
  return mesh;
}

}  // namespace dh
