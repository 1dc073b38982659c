#pragma once

// Two-stage training, inference and evaluation over a synthetic corpus.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "deephuman/checkpoint.hpp"
#include "deephuman/grid.hpp"
#include "deephuman/losses.hpp"
#include "deephuman/network.hpp"
#include "deephuman/optim.hpp"
#include "deephuman/synth.hpp"

namespace dh {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TrainConfig {
  std::size_t scale_divisor = 4;
  FusionMode fusion_mode = FusionMode::MultiScale;
  loss::LossWeights weights{};
  double lr = 2e-4;
  std::size_t batch = 4;
  std::size_t stage1_iters = 200;
  std::size_t stage2_iters = 50;
  std::uint64_t seed = 0;
};

/// `key = value` lines; `#` starts a comment. Unknown keys, malformed values
/// and repeated keys throw ConfigError.
TrainConfig parse_config(const std::string& text, TrainConfig base = {});
TrainConfig read_config(const std::filesystem::path& path, TrainConfig base = {});
/// Every key with its resolved value, one `key = value` per line.
std::string format_config(const TrainConfig& config);

/// Network-ready tensors of one corpus item.
struct Sample {
  std::size_t id = 0;
  std::uint64_t seed = 0;
  Tensor<float> image;           // [3, Y, X]
  Tensor<float> semantic_map;    // [3, Y, X]
  Tensor<float> semantic_volume; // [3, Z, Y, X]
  Tensor<float> occupancy;       // [1, Z, Y, X]
  Tensor<float> sil_front;       // [1, Y, X]
  Tensor<float> sil_side;        // [1, Y, Z]
  Tensor<float> normal;          // [3, 2Y, 2X]
  Tensor<float> normal_from_gt;  // [3, Y, X], projected from the ground-truth occupancy
};

Sample make_sample(const CorpusItem& item);

struct CorpusSplit {
  std::vector<ManifestRow> train;
  std::vector<ManifestRow> heldout;
};

/// Holds out the last max(1, bodies / 8) bodies (grouped by seed). A
/// single-body corpus is used for both sides.
CorpusSplit split_corpus(const std::vector<ManifestRow>& rows);

std::vector<Sample> load_samples(const std::filesystem::path& root, const std::vector<ManifestRow>& rows);

struct StepLosses {
  std::size_t iteration = 0;  // 1-based, counted across both stages
  int stage = 1;
  double volume = 0, front = 0, side = 0, normal = 0;
  double reconstruction = 0;  // L_V + lambda_fs L_FS + lambda_ss L_SS
  double total = 0;           // reconstruction + lambda_n L_N
};

void write_loss_header(std::ostream& out);
void write_loss_row(std::ostream& out, const StepLosses& l);

/// Thrown when a checkpoint does not fit the requested run.
class CheckpointMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Trainer {
 public:
  Trainer(const TrainConfig& config, std::vector<Sample> samples);

  /// Restores parameters, optimizer moments and counters. Stage 2 requires
  /// the refinement network; any missing parameter throws CheckpointMismatch.
  void restore(const std::vector<CheckpointEntry>& entries, int stage);
  std::vector<CheckpointEntry> checkpoint() const;

  /// One optimizer step over the next batch.
  StepLosses step(int stage);

  std::size_t stage_iterations(int stage) const { return stage == 1 ? stage1_done_ : stage2_done_; }
  const DeepHumanNet<float>& net() const { return net_; }
  DeepHumanNet<float>& net() { return net_; }
  const TrainConfig& config() const { return config_; }

  /// Sample indices of the batch for a global step (stateless per-epoch shuffle).
  std::vector<std::size_t> batch_indices(std::size_t global_step) const;

 private:
  TrainConfig config_;
  std::vector<Sample> samples_;
  DeepHumanNet<float> net_;
  Adam<float> adam_;
  std::size_t stage1_done_ = 0;
  std::size_t stage2_done_ = 0;
};

NetworkSpec spec_for(const TrainConfig& config);

/// Rebuilds the network recorded in a checkpoint (divisor and fusion mode
/// from its metadata) and loads every parameter.
DeepHumanNet<float> load_network(const std::vector<CheckpointEntry>& entries);

struct Prediction {
  VoxelGrid occupancy;      // binary
  VoxelGrid probability;    // sigmoid output
  ImageMap normal;          // refined, [3, 2Y, 2X]
  ImageMap normal_raw;      // projected, [3, Y, X]
  double silhouette_loss = 0;  // mean of front and side BCE
};

/// Forward pass without gradients; occupancy = probability > threshold, with
/// threshold <= 0 marking every voxel and threshold >= 1 none.
Prediction infer(const DeepHumanNet<float>& net, const Sample& sample, double threshold = 0.5);

struct NormalError {
  double cosine = 0;  // mean 1 - cos over the mask
  double l2 = 0;      // mean |n_pred - n_gt| of unit normals over the mask
  std::size_t pixels = 0;
};

/// Errors of the refined and the (2x upsampled) projected normals against the
/// ground truth, over pixels where all three are nonzero.
std::pair<NormalError, NormalError> normal_errors(const ImageMap& refined, const ImageMap& raw, const ImageMap& truth);

struct EvalRow {
  std::size_t id = 0;
  double iou = 0;
  int best_shift = 0;
  double baseline_iou = 0;
  double silhouette_loss = 0;
  NormalError refined, raw;
};

EvalRow evaluate_sample(const DeepHumanNet<float>& net, const Sample& sample, double threshold = 0.5);
/// Mean over rows (best_shift is left 0).
EvalRow mean_row(const std::vector<EvalRow>& rows);
void write_eval_csv(const std::filesystem::path& path, const std::vector<EvalRow>& rows);

}  // namespace dh
