#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <limits>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <vector>

namespace dh {

using Vec3 = Eigen::Vector3d;
using Face = std::array<std::uint32_t, 3>;

/// Triangle mesh. `rest_vertices` (optional, same count as vertices) holds
/// the rest-pose positions; `colors` (optional) holds per-vertex codes.
struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;
  std::vector<Vec3> rest_vertices;
  std::vector<Vec3> colors;

  bool empty() const { return faces.empty(); }
  /// Throws std::invalid_argument on out-of-range indices or mismatched attribute counts.
  void validate() const;
};

class MeshError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EdgeDefect {
  std::uint32_t a = 0;
  std::uint32_t b = 0;
  std::size_t face_count = 0;
};

/// First edge not shared by exactly two faces, if any.
std::optional<EdgeDefect> find_non_manifold_edge(const TriMesh& mesh);
bool is_watertight(const TriMesh& mesh);
/// Throws MeshError naming the offending edge.
void require_watertight(const TriMesh& mesh);

struct Aabb {
  Vec3 min = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 max = Vec3::Constant(-std::numeric_limits<double>::infinity());
  void extend(const Vec3& p) {
    min = min.cwiseMin(p);
    max = max.cwiseMax(p);
  }
  void extend(const Aabb& b) {
    min = min.cwiseMin(b.min);
    max = max.cwiseMax(b.max);
  }
  Vec3 extent() const { return max - min; }
  Vec3 center() const { return 0.5 * (min + max); }
  double distance_sq(const Vec3& p) const;
};

Aabb bounding_box(const std::vector<Vec3>& points);

/// Signed volume via the divergence theorem; positive for outward-oriented closed meshes.
double enclosed_volume(const TriMesh& mesh);
Vec3 face_normal(const TriMesh& mesh, std::size_t face);  // unit, or zero if degenerate
double face_area(const TriMesh& mesh, std::size_t face);
/// Area-weighted vertex normals.
std::vector<Vec3> vertex_normals(const TriMesh& mesh);
/// Removes faces with (near-)zero area.
std::size_t remove_degenerate_faces(TriMesh& mesh, double min_area = 1e-14);

struct ClosestPoint {
  std::size_t face = 0;
  Vec3 point = Vec3::Zero();
  Vec3 barycentric = Vec3::Zero();  // weights of the face's three vertices
  double distance_sq = 0;
};

/// Closest point on a single triangle (Ericson's region test).
ClosestPoint closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Bounding-volume hierarchy over a mesh's triangles for nearest-surface queries.
class TriangleBvh {
 public:
  explicit TriangleBvh(const TriMesh& mesh);
  ClosestPoint closest(const Vec3& p) const;

 private:
  struct NodeBox {
    Aabb box;
    std::uint32_t left = 0, right = 0;  // child nodes when count == 0
    std::uint32_t first = 0, count = 0;
  };
  std::uint32_t build(std::uint32_t first, std::uint32_t count);

  const TriMesh& mesh_;
  std::vector<std::uint32_t> order_;
  std::vector<Aabb> face_boxes_;
  std::vector<Vec3> centroids_;
  std::vector<NodeBox> nodes_;
};

/// Writes "v x y z [r g b]" and 1-based "f i j k" records.
void write_obj(const std::filesystem::path& path, const TriMesh& mesh);
TriMesh read_obj(const std::filesystem::path& path);

}  // namespace dh
