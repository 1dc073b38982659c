#include "deephuman/synth.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

#include "deephuman/geometric.hpp"
#include "deephuman/mesh_pipeline.hpp"
#include "deephuman/semantic.hpp"

namespace dh {

namespace {

constexpr double kBlend = 0.025;
constexpr int kMaxAttempts = 100;

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

double radians(double deg) { return deg * std::numbers::pi / 180.0; }

Eigen::Matrix3d rot(const Vec3& axis, double deg) { return Eigen::AngleAxisd(radians(deg), axis).toRotationMatrix(); }

// Tapered capsule distance: radius interpolated along the closest-point parameter.
double capsule_sdf(const PosedCapsule& c, const Vec3& p) {
  const Vec3 ab = c.b - c.a;
  const double len2 = ab.squaredNorm();
  const double t = len2 > 0 ? std::clamp((p - c.a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (p - (c.a + t * ab)).norm() - (c.ra + t * (c.rb - c.ra));
}

double smooth_min(double a, double b, double k) {
  const double h = std::clamp(0.5 + 0.5 * (b - a) / k, 0.0, 1.0);
  return b + h * (a - b) - k * h * (1.0 - h);
}

// Closest distance between segments p0-p1 and q0-q1.
double segment_distance(const Vec3& p0, const Vec3& p1, const Vec3& q0, const Vec3& q1) {
  const Vec3 d1 = p1 - p0, d2 = q1 - q0, r = p0 - q0;
  const double a = d1.squaredNorm(), e = d2.squaredNorm(), f = d2.dot(r);
  double s = 0, t = 0;
  if (a <= 1e-15 && e <= 1e-15) return r.norm();
  if (a <= 1e-15) {
    t = std::clamp(f / e, 0.0, 1.0);
  } else {
    const double c = d1.dot(r);
    if (e <= 1e-15) {
      s = std::clamp(-c / a, 0.0, 1.0);
    } else {
      const double b = d1.dot(d2), denom = a * e - b * b;
      s = denom > 0 ? std::clamp((b * f - c * e) / denom, 0.0, 1.0) : 0.0;
      t = (b * s + f) / e;
      if (t < 0) {
        t = 0;
        s = std::clamp(-c / a, 0.0, 1.0);
      } else if (t > 1) {
        t = 1;
        s = std::clamp((b - c) / a, 0.0, 1.0);
      }
    }
  }
  return ((p0 + s * d1) - (q0 + t * d2)).norm();
}

struct Pose {
  std::vector<Eigen::Matrix3d> world_rotation;
  std::vector<Vec3> world_joint;
};

Pose forward_kinematics(const BodyParams& params) {
  const std::size_t n = params.bones.size();
  Pose pose{std::vector<Eigen::Matrix3d>(n), std::vector<Vec3>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const Bone& b = params.bones[i];
    if (b.parent < 0) {
      pose.world_rotation[i] = params.local_rotation[i];
      pose.world_joint[i] = b.rest_joint;
      continue;
    }
    const auto p = std::size_t(b.parent);
    pose.world_rotation[i] = pose.world_rotation[p] * params.local_rotation[i];
    pose.world_joint[i] = pose.world_joint[p] + pose.world_rotation[p] * (b.rest_joint - params.bones[p].rest_joint);
  }
  return pose;
}

bool is_limb(const Bone& b) {
  for (const char* stem : {"arm", "thigh", "shin", "foot"})
    if (b.name.find(stem) != std::string::npos) return true;
  return false;
}

// Pairs exempt from the overlap test: parent/child, siblings, and the trunk
// capsules among themselves, which are meant to blend.
bool exempt(const BodyParams& params, std::size_t i, std::size_t j) {
  const int pi = params.bones[i].parent, pj = params.bones[j].parent;
  if (pi == int(j) || pj == int(i) || (pi >= 0 && pi == pj)) return true;
  return !is_limb(params.bones[i]) && !is_limb(params.bones[j]);
}

struct MeshPair {
  TriMesh coarse, detailed;
};

TriMesh polygonize(const BodyParams& params, const std::vector<PosedCapsule>& caps, const Pose& pose,
                   std::size_t cells, bool with_detail) {
  Aabb box;
  for (const auto& c : caps) {
    const double r = std::max(c.ra, c.rb);
    box.extend(c.a - Vec3::Constant(r));
    box.extend(c.a + Vec3::Constant(r));
    box.extend(c.b - Vec3::Constant(r));
    box.extend(c.b + Vec3::Constant(r));
  }
  const double h = box.extent().y() / double(cells);
  const double pad = 2.5 * params.detail_amplitude + 3.0 * h;
  const Vec3 origin = box.min - Vec3::Constant(pad);
  std::array<std::size_t, 3> dims{};
  for (int a = 0; a < 3; ++a) dims[a] = std::size_t(std::ceil((box.extent()[a] + 2 * pad) / h)) + 1;

  // Linear ramp over +-2 cells so edge interpolation follows the distance field.
  VoxelGrid field(dims, 1);
  for (std::size_t z = 0; z < dims[2]; ++z)
    for (std::size_t y = 0; y < dims[1]; ++y)
      for (std::size_t x = 0; x < dims[0]; ++x) {
        const Vec3 p = origin + h * Vec3(double(x), double(y), double(z));
        double d = body_sdf(caps, p);
        if (with_detail) d -= detail_offset(params, p);
        field.at(x, y, z) = float(std::clamp(0.5 - d / (4.0 * h), 0.0, 1.0));
      }
  TriMesh mesh = marching_cubes(field, 0.5);
  for (auto& v : mesh.vertices) v = origin + h * v;

  mesh.rest_vertices.reserve(mesh.vertices.size());
  for (const auto& v : mesh.vertices) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < caps.size(); ++i) {
      const double d = capsule_sdf(caps[i], v);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    mesh.rest_vertices.push_back(pose.world_rotation[best].transpose() * (v - pose.world_joint[best]) +
                                 params.bones[best].rest_joint);
  }
  return mesh;
}

bool same_mesh(const TriMesh& a, const TriMesh& b) {
  return a.vertices == b.vertices && a.faces == b.faces && a.colors == b.colors && a.rest_vertices == b.rest_vertices;
}

}  // namespace

BodyParams BodyParams::rest() const {
  BodyParams r = *this;
  for (auto& m : r.local_rotation) m.setIdentity();
  return r;
}

BodyParams sample_body_params(std::uint64_t seed, double detail_amplitude) {
  if (detail_amplitude < 0) throw std::invalid_argument("detail_amplitude must be >= 0");
  std::mt19937_64 rng(seed);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  const double s = uni(0.92, 1.08);  // height
  const double g = uni(0.85, 1.15);   // girth
  const double abd = std::sin(radians(25.0)), down = -std::cos(radians(25.0));

  BodyParams p;
  p.seed = seed;
  p.detail_amplitude = detail_amplitude;
  auto bone = [&](std::string name, int parent, Vec3 joint, Vec3 a, Vec3 b, double ra, double rb) {
    p.bones.push_back({std::move(name), parent, s * joint, s * a, s * b, s * g * ra, s * g * rb});
  };
  bone("pelvis", -1, {0, 0.95, 0}, {-0.08, -0.04, 0}, {0.08, -0.04, 0}, 0.115, 0.115);
  bone("spine", 0, {0, 0.95, 0}, {0, 0, 0}, {0, 0.42, 0}, 0.12, 0.14);
  bone("shoulders", 1, {0, 1.34, 0}, {-0.16, 0, 0}, {0.16, 0, 0}, 0.065, 0.065);
  bone("neck", 1, {0, 1.38, 0}, {0, 0, 0}, {0, 0.1, 0}, 0.055, 0.05);
  bone("head", 3, {0, 1.48, 0}, {0, 0.07, 0}, {0, 0.17, 0}, 0.09, 0.085);
  for (double side : {-1.0, 1.0}) {
    const int upper = int(p.bones.size());
    const Vec3 shoulder(side * 0.19, 1.34, 0);
    const Vec3 dir(side * abd, down, 0);
    bone(side < 0 ? "upper_arm_l" : "upper_arm_r", 1, shoulder, Vec3::Zero(), 0.30 * dir, 0.052, 0.045);
    bone(side < 0 ? "forearm_l" : "forearm_r", upper, shoulder + 0.30 * dir, Vec3::Zero(), 0.27 * dir, 0.042, 0.033);
  }
  for (double side : {-1.0, 1.0}) {
    const int thigh = int(p.bones.size());
    bone(side < 0 ? "thigh_l" : "thigh_r", 0, {side * 0.1, 0.9, 0}, {0, 0, 0}, {0, -0.43, 0}, 0.08, 0.055);
    bone(side < 0 ? "shin_l" : "shin_r", thigh, {side * 0.1, 0.47, 0}, {0, 0, 0}, {0, -0.42, 0}, 0.05, 0.038);
    bone(side < 0 ? "foot_l" : "foot_r", thigh + 1, {side * 0.1, 0.05, 0}, {0, -0.02, -0.03}, {0, -0.02, 0.12},
         0.04, 0.035);
  }

  const Vec3 X = Vec3::UnitX(), Y = Vec3::UnitY(), Z = Vec3::UnitZ();
  p.local_rotation.assign(p.bones.size(), Eigen::Matrix3d::Identity());
  auto set = [&](const char* name, const Eigen::Matrix3d& r) {
    for (std::size_t i = 0; i < p.bones.size(); ++i)
      if (p.bones[i].name == name) p.local_rotation[i] = r;
  };
  set("spine", rot(Y, uni(-15, 15)) * rot(Z, uni(-6, 6)) * rot(X, uni(-10, 10)));
  set("head", rot(X, uni(-15, 15)));
  for (double side : {-1.0, 1.0}) {
    const bool l = side < 0;
    set(l ? "upper_arm_l" : "upper_arm_r", rot(Z, side * uni(-10, 45)) * rot(X, -uni(-30, 60)));
    set(l ? "forearm_l" : "forearm_r", rot(X, -uni(0, 100)));
    set(l ? "thigh_l" : "thigh_r", rot(Z, side * uni(0, 12)) * rot(X, -uni(-15, 35)));
    set(l ? "shin_l" : "shin_r", rot(X, uni(0, 70)));
  }
  p.wrinkle_wavelength = 0.18 * s;
  p.wrinkle_phase = {uni(0, 2 * std::numbers::pi), uni(0, 2 * std::numbers::pi), uni(0, std::numbers::pi)};
  return p;
}

std::vector<PosedCapsule> pose_capsules(const BodyParams& params) {
  const Pose pose = forward_kinematics(params);
  std::vector<PosedCapsule> caps;
  caps.reserve(params.bones.size());
  for (std::size_t i = 0; i < params.bones.size(); ++i) {
    const Bone& b = params.bones[i];
    caps.push_back({pose.world_joint[i] + pose.world_rotation[i] * b.cap_a,
                    pose.world_joint[i] + pose.world_rotation[i] * b.cap_b, b.radius_a, b.radius_b});
  }
  return caps;
}

std::vector<std::pair<std::size_t, std::size_t>> self_intersections(const BodyParams& params) {
  const auto caps = pose_capsules(params);
  std::vector<std::pair<std::size_t, std::size_t>> hits;
  for (std::size_t i = 0; i < caps.size(); ++i)
    for (std::size_t j = i + 1; j < caps.size(); ++j) {
      if (exempt(params, i, j)) continue;
      const double reach = std::max(caps[i].ra, caps[i].rb) + std::max(caps[j].ra, caps[j].rb) + kBlend;
      if (segment_distance(caps[i].a, caps[i].b, caps[j].a, caps[j].b) < reach) hits.emplace_back(i, j);
    }
  return hits;
}

double body_sdf(const std::vector<PosedCapsule>& capsules, const Vec3& p) {
  double d = std::numeric_limits<double>::infinity();
  for (const auto& c : capsules) {
    const double ci = capsule_sdf(c, p);
    d = std::isinf(d) ? ci : smooth_min(d, ci, kBlend);
  }
  return d;
}

double detail_offset(const BodyParams& params, const Vec3& p) {
  if (params.detail_amplitude == 0.0) return 0.0;
  const double w = 2.0 * std::numbers::pi / params.wrinkle_wavelength;
  const double th = params.wrinkle_phase[2];
  const double field = 0.5 * (std::sin(w * p.y() + params.wrinkle_phase[0]) +
                              std::sin(w * (p.x() * std::cos(th) + p.z() * std::sin(th)) + params.wrinkle_phase[1]));
  return params.detail_amplitude * (1.5 + field);
}

Body build_body(const BodyParams& params, std::size_t cells) {
  if (cells < 8) throw std::invalid_argument("build_body: need at least 8 cells along the body height");
  const auto caps = pose_capsules(params);
  const Pose pose = forward_kinematics(params);
  Body body;
  body.params = params;
  body.coarse = polygonize(params, caps, pose, cells, false);
  body.detailed = params.detail_amplitude == 0.0 ? body.coarse : polygonize(params, caps, pose, cells, true);
  return body;
}

Body generate_body(std::uint64_t seed, double detail_amplitude, std::size_t cells) {
  return generate_body(seed, detail_amplitude, cells, sample_body_params);
}

Body generate_body(std::uint64_t seed, double detail_amplitude, std::size_t cells, const BodySampler& sampler) {
  std::vector<std::string> diagnostics;
  std::uint64_t attempt_seed = seed;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    const BodyParams params = sampler(attempt_seed, detail_amplitude);
    const auto hits = self_intersections(params);
    if (hits.empty()) {
      Body body = build_body(params, cells);
      body.diagnostics = std::move(diagnostics);
      return body;
    }
    diagnostics.push_back(fmt::format("seed {} attempt {}: {} and {} intersect; re-sampling", seed, attempt,
                                      params.bones[hits.front().first].name,
                                      params.bones[hits.front().second].name));
    attempt_seed = splitmix64(attempt_seed);
  }
  throw std::runtime_error(fmt::format("seed {}: no self-intersection-free pose after {} attempts", seed, kMaxAttempts));
}

CorpusDims CorpusDims::for_divisor(std::size_t divisor) {
  if (divisor == 0 || (divisor & (divisor - 1)) != 0 || 128 % divisor != 0)
    throw std::invalid_argument(fmt::format("divisor must be a power of two dividing 128, got {}", divisor));
  return CorpusDims{{128 / divisor, 192 / divisor, 128 / divisor}};
}

double view_yaw_degrees(std::uint64_t seed, std::size_t view) {
  std::mt19937_64 rng(splitmix64(seed ^ splitmix64(0xA5A5A5A5ull + view)));
  return std::uniform_real_distribution<double>(0.0, 360.0)(rng);
}

namespace {

TriMesh rotate_yaw(const TriMesh& m, double deg) {
  const Eigen::Matrix3d r = rot(Vec3::UnitY(), deg);
  TriMesh out = m;
  for (auto& v : out.vertices) v = r * v;
  return out;
}

ImageMap tensor_to_map(const Tensor<double>& t) { return ImageMap::from_tensor(t); }

}  // namespace

CorpusItem render_item(const Body& body, std::size_t view_index, const CorpusDims& dims) {
  const auto [X, Y, Z] = dims.volume;
  const double yaw = view_yaw_degrees(body.params.seed, view_index);
  const TriMesh coarse = rotate_yaw(body.coarse, yaw);
  const TriMesh detailed = rotate_yaw(body.detailed, yaw);
  const std::vector<Vec3> codes = assign_semantic_codes(coarse);

  Aabb box = bounding_box(detailed.vertices);
  box.extend(bounding_box(coarse.vertices));
  const FitTransform fit = fit_to_grid(box, dims.volume);

  CorpusItem item;
  item.seed = body.params.seed;
  item.view = view_index;
  item.semantic_volume = build_semantic_volume(coarse, codes, dims.volume, fit);
  item.semantic_map = render_semantic_map(coarse, codes, Y, X, fit);
  item.occupancy = voxelize(detailed, dims.volume, fit);

  const Tensor<double> occ = item.occupancy.to_tensor<double>();
  item.sil_front = tensor_to_map(geo::project_silhouette(occ, geo::View::Front));
  item.sil_side = tensor_to_map(geo::project_silhouette(occ, geo::View::Side));

  const TriMesh grid_detailed = transform_mesh(detailed, fit);

  // Ground-truth normals from a 2x depth render, in 2x pixel units so the
  // vertex map is a uniformly scaled copy of the surface.
  {
    const Raster r = rasterize(grid_detailed, 2 * Y, 2 * X, 2.0);
    Tensor<double> depth(Shape{1, 2 * Y, 2 * X});
    auto d = depth.mutable_values();
    const double background = 4.0 * double(Z);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::isfinite(r.depth[i]) ? 2.0 * r.depth[i] : background;
    item.normal = tensor_to_map(geo::vertex_to_normal(geo::depth_to_vertex(depth), 2.0 * double(Z)));
  }

  {
    const Raster r = rasterize(grid_detailed, Y, X, 1.0);
    const Vec3 light = Vec3(-0.4, -0.5, -1.0).normalized();  // toward the light, grid space
    const Vec3 albedo(0.85, 0.7, 0.6);
    item.image = ImageMap(Y, X, 3);
    for (std::size_t row = 0; row < Y; ++row)
      for (std::size_t col = 0; col < X; ++col) {
        if (!r.covered(row, col)) continue;
        const Vec3 n = face_normal(grid_detailed, std::size_t(r.face[row * X + col]));
        const double shade = 0.25 + 0.75 * std::max(0.0, n.dot(light));
        for (int c = 0; c < 3; ++c) item.image.at(row, col, std::size_t(c)) = float(albedo[c] * shade);
      }
    quantize_to_8bit(item.image);
  }

  item.coarse = transform_mesh(coarse, fit);
  item.coarse.rest_vertices.clear();
  item.coarse.colors = codes;
  item.detailed = grid_detailed;
  item.detailed.rest_vertices.clear();
  return item;
}

bool CorpusItem::operator==(const CorpusItem& o) const {
  return id == o.id && seed == o.seed && view == o.view && image == o.image && semantic_map == o.semantic_map &&
         semantic_volume == o.semantic_volume && occupancy == o.occupancy && sil_front == o.sil_front &&
         sil_side == o.sil_side && normal == o.normal && same_mesh(coarse, o.coarse) && same_mesh(detailed, o.detailed);
}

std::uint64_t body_seed(std::uint64_t corpus_seed, std::size_t index) {
  return splitmix64(corpus_seed * 0x100000001B3ull + index);
}

namespace {

constexpr const char* kManifestHeader =
    "id,seed,view,image,semantic_map,semantic_vol,occupancy,sil_front,sil_side,normal,coarse,detailed";
constexpr std::array<const char*, 9> kItemFiles{"image.png",      "semantic_map.dhvg", "semantic_vol.dhvg",
                                                "occupancy.dhvg", "sil_front.dhvg",    "sil_side.dhvg",
                                                "normal.dhvg",    "coarse.obj",        "detailed.obj"};

void write_item(const std::filesystem::path& dir, const CorpusItem& item) {
  std::filesystem::create_directories(dir);
  write_png(dir / "image.png", item.image);
  write_dhvg(dir / "semantic_map.dhvg", item.semantic_map);
  write_dhvg(dir / "semantic_vol.dhvg", item.semantic_volume);
  write_dhvg(dir / "occupancy.dhvg", item.occupancy);
  write_dhvg(dir / "sil_front.dhvg", item.sil_front);
  write_dhvg(dir / "sil_side.dhvg", item.sil_side);
  write_dhvg(dir / "normal.dhvg", item.normal);
  write_obj(dir / "coarse.obj", item.coarse);
  write_obj(dir / "detailed.obj", item.detailed);
}

}  // namespace

std::vector<ManifestRow> build_corpus(const std::filesystem::path& root, const CorpusOptions& options) {
  if (options.bodies == 0) throw std::invalid_argument("build_corpus: need at least one body");
  if (options.views == 0) throw std::invalid_argument("build_corpus: need at least one view per body");
  const CorpusDims dims = CorpusDims::for_divisor(options.divisor);
  std::filesystem::create_directories(root);

  std::vector<ManifestRow> rows;
  for (std::size_t b = 0; b < options.bodies; ++b) {
    const Body body = generate_body(body_seed(options.seed, b), options.detail_amplitude);
    for (std::size_t v = 0; v < options.views; ++v) {
      CorpusItem item = render_item(body, v, dims);
      item.id = b * options.views + v;
      const std::string dir = fmt::format("item_{}", item.id);
      write_item(root / dir, item);
      rows.push_back({item.id, item.seed, v, dir});
    }
  }

  std::ofstream manifest(root / "manifest.csv", std::ios::binary);
  if (!manifest) throw std::runtime_error("cannot write " + (root / "manifest.csv").string());
  manifest << kManifestHeader << '\n';
  for (const auto& r : rows) {
    manifest << r.id << ',' << r.seed << ',' << r.view;
    for (const char* f : kItemFiles) manifest << ',' << r.directory << '/' << f;
    manifest << '\n';
  }
  if (!manifest) throw std::runtime_error("failed writing " + (root / "manifest.csv").string());
  return rows;
}

std::vector<ManifestRow> read_manifest(const std::filesystem::path& root) {
  const auto path = root / "manifest.csv";
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader)
    throw std::runtime_error(path.string() + ": unexpected manifest header");
  std::vector<ManifestRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cols.push_back(c);
    if (cols.size() != 3 + kItemFiles.size())
      throw std::runtime_error(fmt::format("{}:{}: expected {} columns", path.string(), lineno, 3 + kItemFiles.size()));
    ManifestRow r;
    try {
      r.id = std::stoull(cols[0]);
      r.seed = std::stoull(cols[1]);
      r.view = std::stoull(cols[2]);
    } catch (const std::exception&) {
      throw std::runtime_error(fmt::format("{}:{}: malformed number", path.string(), lineno));
    }
    r.directory = std::filesystem::path(cols[3]).parent_path().string();
    rows.push_back(std::move(r));
  }
  return rows;
}

CorpusItem load_item(const std::filesystem::path& root, const ManifestRow& row) {
  const auto dir = root / row.directory;
  CorpusItem item;
  item.id = row.id;
  item.seed = row.seed;
  item.view = row.view;
  item.image = read_png(dir / "image.png");
  item.semantic_map = read_dhvg_image(dir / "semantic_map.dhvg");
  item.semantic_volume = read_dhvg(dir / "semantic_vol.dhvg");
  item.occupancy = read_dhvg(dir / "occupancy.dhvg");
  item.sil_front = read_dhvg_image(dir / "sil_front.dhvg");
  item.sil_side = read_dhvg_image(dir / "sil_side.dhvg");
  item.normal = read_dhvg_image(dir / "normal.dhvg");
  item.coarse = read_obj(dir / "coarse.obj");
  item.detailed = read_obj(dir / "detailed.obj");
  return item;
}

}  // namespace dh
