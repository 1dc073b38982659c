#pragma once

// Procedural articulated bodies and the per-view training targets rendered
// from them. A body is a smooth union of posed, tapered capsules; the detailed
// variant pushes the surface outward by a positive wrinkle field.

#include <array>
#include <functional>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "deephuman/grid.hpp"
#include "deephuman/mesh.hpp"

namespace dh {

struct Bone {
  std::string name;
  int parent = -1;       // -1 for the root
  Vec3 rest_joint;       // joint position in the rest pose
  Vec3 cap_a, cap_b;     // capsule end points, offsets from the joint in the rest pose
  double radius_a = 0, radius_b = 0;
};

struct BodyParams {
  std::uint64_t seed = 0;
  std::vector<Bone> bones;
  std::vector<Eigen::Matrix3d> local_rotation;  // per bone, identity in the rest pose
  double detail_amplitude = 0.0;
  double wrinkle_wavelength = 0.18;
  std::array<double, 3> wrinkle_phase{0, 0, 0};

  /// Same proportions and detail with every joint angle zeroed.
  BodyParams rest() const;
};

struct PosedCapsule {
  Vec3 a, b;
  double ra = 0, rb = 0;
};

struct Body {
  BodyParams params;
  TriMesh coarse;    // model space, rest_vertices filled
  TriMesh detailed;  // model space, rest_vertices filled
  std::vector<std::string> diagnostics;
};

inline constexpr double kDefaultDetailAmplitude = 0.03;
inline constexpr std::size_t kDefaultBodyCells = 96;

/// Proportions, pose and wrinkle phases drawn from `seed`; may self-intersect.
BodyParams sample_body_params(std::uint64_t seed, double detail_amplitude);
std::vector<PosedCapsule> pose_capsules(const BodyParams& params);
/// Limb capsule pairs that are not parent/child or siblings and come within the blend margin.
std::vector<std::pair<std::size_t, std::size_t>> self_intersections(const BodyParams& params);
/// Signed distance of the coarse body (negative inside).
double body_sdf(const std::vector<PosedCapsule>& capsules, const Vec3& p);
/// Outward clothing offset at p, in [0.5, 2.5] * amplitude.
double detail_offset(const BodyParams& params, const Vec3& p);

/// Polygonizes a parameter set directly (no re-sampling).
Body build_body(const BodyParams& params, std::size_t cells = kDefaultBodyCells);
/// Samples until the pose is free of self-intersections; every rejection is
/// recorded in Body::diagnostics. Throws std::runtime_error after 100 attempts.
Body generate_body(std::uint64_t seed, double detail_amplitude = kDefaultDetailAmplitude,
                   std::size_t cells = kDefaultBodyCells);

using BodySampler = std::function<BodyParams(std::uint64_t seed, double detail_amplitude)>;
/// As above with a custom parameter source; attempt k uses splitmix64^k(seed).
Body generate_body(std::uint64_t seed, double detail_amplitude, std::size_t cells, const BodySampler& sampler);

struct CorpusDims {
  std::array<std::size_t, 3> volume{128, 192, 128};  // X, Y, Z
  std::size_t image_height() const { return volume[1]; }
  std::size_t image_width() const { return volume[0]; }
  static CorpusDims for_divisor(std::size_t divisor);
};

struct CorpusItem {
  std::size_t id = 0;
  std::uint64_t seed = 0;
  std::size_t view = 0;
  ImageMap image;            // [3, Y, X], 8-bit quantized
  ImageMap semantic_map;     // [3, Y, X]
  VoxelGrid semantic_volume; // 3 channels
  VoxelGrid occupancy;       // binary
  ImageMap sil_front;        // [1, Y, X]
  ImageMap sil_side;         // [1, Y, Z]
  ImageMap normal;           // [3, 2Y, 2X], unit or zero
  TriMesh coarse;            // grid space, colors = semantic codes
  TriMesh detailed;          // grid space

  bool operator==(const CorpusItem& o) const;
};

/// Yaw in degrees for one view, uniform in [0, 360) and fixed by (seed, view).
double view_yaw_degrees(std::uint64_t seed, std::size_t view);

CorpusItem render_item(const Body& body, std::size_t view_index, const CorpusDims& dims);

struct ManifestRow {
  std::size_t id = 0;
  std::uint64_t seed = 0;
  std::size_t view = 0;
  std::string directory;  // relative to the corpus root
};

struct CorpusOptions {
  std::size_t bodies = 16;
  std::size_t views = 4;
  std::size_t divisor = 4;
  std::uint64_t seed = 0;
  double detail_amplitude = kDefaultDetailAmplitude;
};

/// Seed of body `index` in a corpus built from `corpus_seed`.
std::uint64_t body_seed(std::uint64_t corpus_seed, std::size_t index);

/// Writes item_<id>/ directories and manifest.csv; returns the manifest rows.
std::vector<ManifestRow> build_corpus(const std::filesystem::path& root, const CorpusOptions& options);
std::vector<ManifestRow> read_manifest(const std::filesystem::path& root);
CorpusItem load_item(const std::filesystem::path& root, const ManifestRow& row);

}  // namespace dh
