#include "deephuman/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "deephuman/geometric.hpp"
#include "deephuman/mesh_pipeline.hpp"
#include "deephuman/ops.hpp"

namespace dh {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || !std::isfinite(out)) throw ConfigError(fmt::format("{}: '{}' is not a finite number", key, v));
  return out;
}

std::uint64_t parse_count(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw ConfigError(fmt::format("{}: '{}' is not a non-negative integer", key, v));
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw ConfigError(fmt::format("{}: '{}' is out of range", key, v));
  }
}

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

CheckpointEntry scalar_entry(const std::string& name, double v) { return {name, Shape{1}, {float(v)}}; }

const CheckpointEntry* find_entry(const std::vector<CheckpointEntry>& entries, const std::string& name) {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

double scalar_of(const std::vector<CheckpointEntry>& entries, const std::string& name) {
  const auto* e = find_entry(entries, name);
  if (!e || e->values.size() != 1) throw CheckpointMismatch("checkpoint lacks scalar entry " + name);
  return double(e->values[0]);
}

constexpr std::array<FusionMode, 4> kModes{FusionMode::MultiScale, FusionMode::FinestOnly, FusionMode::CoarsestOnly,
                                           FusionMode::LatentConcat};

std::size_t mode_index(FusionMode m) {
  return std::size_t(std::find(kModes.begin(), kModes.end(), m) - kModes.begin());
}

}  // namespace

TrainConfig parse_config(const std::string& text, TrainConfig c) {
  std::istringstream in(text);
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("line {}: expected 'key = value'", lineno));
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError(fmt::format("line {}: key '{}' given twice", lineno, key));
    if (key == "scale_divisor") c.scale_divisor = parse_count(key, value);
    else if (key == "fusion_mode") {
      try {
        c.fusion_mode = parse_fusion_mode(value);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
    }
    else if (key == "lambda_fs") c.weights.lambda_fs = parse_real(key, value);
    else if (key == "lambda_ss") c.weights.lambda_ss = parse_real(key, value);
    else if (key == "lambda_n") c.weights.lambda_n = parse_real(key, value);
    else if (key == "gamma") c.weights.gamma = parse_real(key, value);
    else if (key == "lr") c.lr = parse_real(key, value);
    else if (key == "batch") c.batch = parse_count(key, value);
    else if (key == "stage1_iters") c.stage1_iters = parse_count(key, value);
    else if (key == "stage2_iters") c.stage2_iters = parse_count(key, value);
    else if (key == "seed") c.seed = parse_count(key, value);
    else throw ConfigError(fmt::format("line {}: unknown key '{}'", lineno, key));
  }
  if (c.batch == 0) throw ConfigError("batch must be >= 1");
  if (!(c.lr > 0)) throw ConfigError("lr must be positive");
  if (c.weights.gamma < 0 || c.weights.gamma > 1) throw ConfigError("gamma must lie in [0, 1]");
  if (c.weights.lambda_fs < 0 || c.weights.lambda_ss < 0 || c.weights.lambda_n < 0)
    throw ConfigError("loss weights must be >= 0");
  try {
    spec_for(c).validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

TrainConfig read_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), base);
}

std::string format_config(const TrainConfig& c) {
  return fmt::format(
      "scale_divisor = {}\nfusion_mode = {}\nlambda_fs = {}\nlambda_ss = {}\nlambda_n = {}\ngamma = {}\nlr = {}\n"
      "batch = {}\nstage1_iters = {}\nstage2_iters = {}\nseed = {}\n",
      c.scale_divisor, to_string(c.fusion_mode), c.weights.lambda_fs, c.weights.lambda_ss, c.weights.lambda_n,
      c.weights.gamma, c.lr, c.batch, c.stage1_iters, c.stage2_iters, c.seed);
}

NetworkSpec spec_for(const TrainConfig& config) {
  NetworkSpec spec;
  spec.scale_divisor = config.scale_divisor;
  spec.fusion_mode = config.fusion_mode;
  return spec;
}

Sample make_sample(const CorpusItem& item) {
  Sample s;
  s.id = item.id;
  s.seed = item.seed;
  s.image = item.image.to_tensor<float>();
  s.semantic_map = item.semantic_map.to_tensor<float>();
  s.semantic_volume = item.semantic_volume.to_tensor<float>();
  s.occupancy = item.occupancy.to_tensor<float>();
  s.sil_front = item.sil_front.to_tensor<float>();
  s.sil_side = item.sil_side.to_tensor<float>();
  s.normal = item.normal.to_tensor<float>();
  const std::size_t Z = item.occupancy.nz();
  NoGradGuard guard;
  s.normal_from_gt = geo::vertex_to_normal(
      geo::depth_to_vertex(geo::project_depth(s.occupancy, float(geo::background_depth(Z)))), float(Z - 1));
  return s;
}

CorpusSplit split_corpus(const std::vector<ManifestRow>& rows) {
  std::vector<std::uint64_t> seeds;
  for (const auto& r : rows)
    if (std::find(seeds.begin(), seeds.end(), r.seed) == seeds.end()) seeds.push_back(r.seed);
  CorpusSplit split;
  if (seeds.size() < 2) {
    split.train = split.heldout = rows;
    return split;
  }
  const std::size_t held = std::max<std::size_t>(1, seeds.size() / 8);
  const std::set<std::uint64_t> held_seeds(seeds.end() - long(held), seeds.end());
  for (const auto& r : rows) (held_seeds.count(r.seed) ? split.heldout : split.train).push_back(r);
  return split;
}

std::vector<Sample> load_samples(const std::filesystem::path& root, const std::vector<ManifestRow>& rows) {
  std::vector<Sample> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(make_sample(load_item(root, r)));
  return out;
}

void write_loss_header(std::ostream& out) { out << "iteration,stage,loss_v,loss_fs,loss_ss,loss_n,reconstruction,total\n"; }

void write_loss_row(std::ostream& out, const StepLosses& l) {
  out << fmt::format("{},{},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g}\n", l.iteration, l.stage, l.volume, l.front,
                     l.side, l.normal, l.reconstruction, l.total);
}

Trainer::Trainer(const TrainConfig& config, std::vector<Sample> samples)
    : config_(config),
      samples_(std::move(samples)),
      net_(spec_for(config), config.seed),
      adam_(AdamOptions{.lr = config.lr}) {
  if (samples_.empty()) throw std::invalid_argument("training needs a non-empty corpus");
  const auto& s = samples_.front();
  const auto vol = net_.spec().scaled_volume();
  const Shape expected{3, vol[2], vol[1], vol[0]};
  if (s.semantic_volume.shape() != expected)
    throw std::invalid_argument(fmt::format("corpus volumes are {} but scale_divisor {} expects {}",
                                            shape_str(s.semantic_volume.shape()), config.scale_divisor,
                                            shape_str(expected)));
  net_.params().zero_grad();
}

std::vector<std::size_t> Trainer::batch_indices(std::size_t global_step) const {
  const std::size_t n = samples_.size();
  std::vector<std::size_t> out;
  std::vector<std::size_t> perm;
  std::size_t perm_epoch = std::size_t(-1);
  for (std::size_t j = 0; j < config_.batch; ++j) {
    const std::size_t pos = global_step * config_.batch + j;
    const std::size_t epoch = pos / n;
    if (epoch != perm_epoch) {
      perm.resize(n);
      std::iota(perm.begin(), perm.end(), std::size_t(0));
      std::mt19937_64 rng(splitmix64(config_.seed ^ splitmix64(epoch)));
      std::shuffle(perm.begin(), perm.end(), rng);
      perm_epoch = epoch;
    }
    out.push_back(perm[pos % n]);
  }
  return out;
}

StepLosses Trainer::step(int stage) {
  if (stage != 1 && stage != 2) throw std::invalid_argument("stage must be 1 or 2");
  auto& params = net_.params();
  params.zero_grad();
  const auto& w = config_.weights;
  const float inv_batch = 1.0f / float(config_.batch);
  const Tensor<float> no_normal_loss = Tensor<float>::scalar(0.0f);

  StepLosses log;
  log.stage = stage;
  log.iteration = stage1_done_ + stage2_done_ + 1;
  for (std::size_t idx : batch_indices(stage1_done_ + stage2_done_)) {
    const Sample& s = samples_[idx];
    Tensor<float> lv, lfs, lss, ln;
    if (stage == 1) {
      const auto feats = net_.encode_image(s.image, s.semantic_map);
      const auto occ = net_.translate_volume(s.semantic_volume, feats);
      lv = loss::volume(occ, s.occupancy, w.gamma);
      lfs = loss::silhouette(geo::project_silhouette(occ, geo::View::Front), s.sil_front);
      lss = loss::silhouette(geo::project_silhouette(occ, geo::View::Side), s.sil_side);
      const auto recon = loss::combined(lv, lfs, lss, no_normal_loss, w);
      backward(ops::scale(recon, inv_batch));
      // R learns from normals projected from the ground-truth volume.
      ln = loss::normal(net_.refine_normals(s.image, s.semantic_map, s.normal_from_gt), s.normal);
      if (!std::isfinite(ln.item())) throw std::domain_error("normal loss is not finite");
      backward(ops::scale(ln, inv_batch));
    } else {
      const auto out = net_.forward(s.image, s.semantic_map, s.semantic_volume);
      lv = loss::volume(out.occupancy, s.occupancy, w.gamma);
      lfs = loss::silhouette(out.sil_front, s.sil_front);
      lss = loss::silhouette(out.sil_side, s.sil_side);
      ln = loss::normal(out.normal, s.normal);
      backward(ops::scale(loss::combined(lv, lfs, lss, ln, w), inv_batch));
    }
    log.volume += lv.item() * inv_batch;
    log.front += lfs.item() * inv_batch;
    log.side += lss.item() * inv_batch;
    log.normal += ln.item() * inv_batch;
  }
  log.reconstruction = log.volume + w.lambda_fs * log.front + w.lambda_ss * log.side;
  log.total = log.reconstruction + w.lambda_n * log.normal;
  adam_.step(params);
  (stage == 1 ? stage1_done_ : stage2_done_) += 1;
  return log;
}

std::vector<CheckpointEntry> Trainer::checkpoint() const {
  auto entries = entries_from(net_.params());
  for (const auto& p : net_.params().params()) {
    auto it = adam_.moments().find(p.name);
    if (it == adam_.moments().end()) continue;
    entries.push_back({"adam.m." + p.name, p.tensor.shape(), it->second.m});
    entries.push_back({"adam.v." + p.name, p.tensor.shape(), it->second.v});
  }
  entries.push_back(scalar_entry("adam.step", double(adam_.step_count())));
  entries.push_back(scalar_entry("train.stage1_iterations", double(stage1_done_)));
  entries.push_back(scalar_entry("train.stage2_iterations", double(stage2_done_)));
  entries.push_back(scalar_entry("meta.scale_divisor", double(config_.scale_divisor)));
  entries.push_back(scalar_entry("meta.fusion_mode", double(mode_index(config_.fusion_mode))));
  return entries;
}

void Trainer::restore(const std::vector<CheckpointEntry>& entries, int stage) {
  const auto divisor = std::size_t(scalar_of(entries, "meta.scale_divisor"));
  const auto mode = std::size_t(scalar_of(entries, "meta.fusion_mode"));
  if (divisor != config_.scale_divisor || mode >= kModes.size() || kModes[mode] != config_.fusion_mode)
    throw CheckpointMismatch(fmt::format("checkpoint was trained with scale_divisor {} / fusion_mode {}, run uses {} / {}",
                                         divisor, mode < kModes.size() ? to_string(kModes[mode]) : "?",
                                         config_.scale_divisor, to_string(config_.fusion_mode)));
  const auto missing = load_into(net_.params(), entries);
  if (!missing.empty()) {
    const bool refiner = std::any_of(missing.begin(), missing.end(),
                                     [](const std::string& n) { return DeepHumanNet<float>::is_refiner_parameter(n); });
    if (stage == 2 && refiner)
      throw CheckpointMismatch("checkpoint lacks refinement-network parameters (e.g. " + missing.front() +
                               "); stage 2 needs a stage-1 checkpoint");
    throw CheckpointMismatch(fmt::format("checkpoint lacks {} parameter(s), first: {}", missing.size(), missing.front()));
  }
  auto& moments = adam_.moments();
  moments.clear();
  for (const auto& p : net_.params().params()) {
    const auto* m = find_entry(entries, "adam.m." + p.name);
    const auto* v = find_entry(entries, "adam.v." + p.name);
    if (!m || !v) continue;
    if (m->values.size() != p.tensor.numel() || v->values.size() != p.tensor.numel())
      throw CheckpointMismatch("optimizer state for " + p.name + " has the wrong size");
    moments[p.name] = {m->values, v->values};
  }
  adam_.set_step_count(std::uint64_t(scalar_of(entries, "adam.step")));
  stage1_done_ = std::size_t(scalar_of(entries, "train.stage1_iterations"));
  stage2_done_ = std::size_t(scalar_of(entries, "train.stage2_iterations"));
  net_.params().zero_grad();
}

DeepHumanNet<float> load_network(const std::vector<CheckpointEntry>& entries) {
  TrainConfig c;
  c.scale_divisor = std::size_t(scalar_of(entries, "meta.scale_divisor"));
  const auto mode = std::size_t(scalar_of(entries, "meta.fusion_mode"));
  if (mode >= kModes.size()) throw CheckpointMismatch("checkpoint has an unknown fusion mode");
  c.fusion_mode = kModes[mode];
  DeepHumanNet<float> net(spec_for(c), 0);
  const auto missing = load_into(net.params(), entries);
  if (!missing.empty())
    throw CheckpointMismatch(fmt::format("checkpoint lacks {} parameter(s), first: {}", missing.size(), missing.front()));
  return net;
}

Prediction infer(const DeepHumanNet<float>& net, const Sample& sample, double threshold) {
  NoGradGuard guard;
  const auto out = net.forward(sample.image, sample.semantic_map, sample.semantic_volume);
  Prediction p;
  p.probability = VoxelGrid::from_tensor(out.occupancy);
  p.occupancy = p.probability;
  for (auto& v : p.occupancy.values) {
    const bool on = threshold <= 0.0 ? true : threshold >= 1.0 ? false : double(v) > threshold;
    v = on ? 1.0f : 0.0f;
  }
  p.normal = ImageMap::from_tensor(out.normal);
  p.normal_raw = ImageMap::from_tensor(out.normal_raw);
  p.silhouette_loss = 0.5 * (double(loss::silhouette(out.sil_front, sample.sil_front).item()) +
                             double(loss::silhouette(out.sil_side, sample.sil_side).item()));
  return p;
}

std::pair<NormalError, NormalError> normal_errors(const ImageMap& refined, const ImageMap& raw, const ImageMap& truth) {
  if (refined.height != truth.height || refined.width != truth.width || raw.height * 2 != truth.height ||
      raw.width * 2 != truth.width || refined.channels != 3 || raw.channels != 3 || truth.channels != 3)
    throw std::invalid_argument("normal_errors: maps must be [3, 2Y, 2X], [3, Y, X] and [3, 2Y, 2X]");
  NoGradGuard guard;
  const ImageMap up = ImageMap::from_tensor(geo::upsample2x(raw.to_tensor<double>()));
  auto unit = [](const ImageMap& m, std::size_t r, std::size_t c, Vec3& out) {
    out = Vec3(m.at(r, c, 0), m.at(r, c, 1), m.at(r, c, 2));
    const double len = out.norm();
    if (len < 1e-6) return false;
    out /= len;
    return true;
  };
  NormalError e_ref, e_raw;
  for (std::size_t r = 0; r < truth.height; ++r)
    for (std::size_t c = 0; c < truth.width; ++c) {
      Vec3 t, a, b;
      if (!unit(truth, r, c, t) || !unit(refined, r, c, a) || !unit(up, r, c, b)) continue;
      e_ref.cosine += std::max(0.0, 1.0 - a.dot(t));
      e_ref.l2 += (a - t).norm();
      e_raw.cosine += std::max(0.0, 1.0 - b.dot(t));
      e_raw.l2 += (b - t).norm();
      ++e_ref.pixels;
    }
  e_raw.pixels = e_ref.pixels;
  for (NormalError* e : {&e_ref, &e_raw})
    if (e->pixels > 0) {
      e->cosine /= double(e->pixels);
      e->l2 /= double(e->pixels);
    }
  return {e_ref, e_raw};
}

EvalRow evaluate_sample(const DeepHumanNet<float>& net, const Sample& sample, double threshold) {
  const Prediction p = infer(net, sample, threshold);
  const VoxelGrid gt = VoxelGrid::from_tensor(sample.occupancy);
  const VoxelGrid baseline = VoxelGrid::from_tensor(sample.semantic_volume).occupancy_mask();
  EvalRow row;
  row.id = sample.id;
  const auto report = iou_zshift(p.occupancy, gt);
  row.iou = report.iou;
  row.best_shift = report.best_shift;
  row.baseline_iou = iou_zshift(baseline, gt).iou;
  row.silhouette_loss = p.silhouette_loss;
  std::tie(row.refined, row.raw) = normal_errors(p.normal, p.normal_raw, ImageMap::from_tensor(sample.normal));
  return row;
}

EvalRow mean_row(const std::vector<EvalRow>& rows) {
  EvalRow m;
  if (rows.empty()) return m;
  for (const auto& r : rows) {
    m.iou += r.iou;
    m.baseline_iou += r.baseline_iou;
    m.silhouette_loss += r.silhouette_loss;
    m.refined.cosine += r.refined.cosine;
    m.refined.l2 += r.refined.l2;
    m.raw.cosine += r.raw.cosine;
    m.raw.l2 += r.raw.l2;
    m.refined.pixels += r.refined.pixels;
    m.raw.pixels += r.raw.pixels;
  }
  const double n = double(rows.size());
  for (double* v : {&m.iou, &m.baseline_iou, &m.silhouette_loss, &m.refined.cosine, &m.refined.l2, &m.raw.cosine,
                    &m.raw.l2})
    *v /= n;
  return m;
}

void write_eval_csv(const std::filesystem::path& path, const std::vector<EvalRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "id,iou,best_shift,baseline_iou,silhouette_loss,cosine_refined,cosine_raw,l2_refined,l2_raw,normal_pixels\n";
  auto line = [&](const std::string& id, const EvalRow& r) {
    out << fmt::format("{},{:.9g},{},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{}\n", id, r.iou, r.best_shift,
                       r.baseline_iou, r.silhouette_loss, r.refined.cosine, r.raw.cosine, r.refined.l2, r.raw.l2,
                       r.refined.pixels);
  };
  for (const auto& r : rows) line(std::to_string(r.id), r);
  line("mean", mean_row(rows));
}

}  // namespace dh
