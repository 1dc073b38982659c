#include <CLI11.hpp>
#include <fmt/format.h>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "deephuman/checkpoint.hpp"
#include "deephuman/mesh_pipeline.hpp"
#include "deephuman/synth.hpp"
#include "deephuman/training.hpp"

namespace fs = std::filesystem;
using namespace dh;

namespace {

enum Exit : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename... Args>
void log(fmt::format_string<Args...> f, Args&&... args) {
  std::cerr << fmt::format(f, std::forward<Args>(args)...) << '\n';
}

int cmd_synth(std::size_t bodies, std::size_t views, std::size_t divisor, const fs::path& out, std::uint64_t seed,
              double detail) {
  CorpusOptions o{bodies, views, divisor, seed, detail};
  log("synth: {} bodies x {} views at divisor {} (seed {}, detail {}) -> {}", bodies, views, divisor, seed, detail,
      out.string());
  const auto rows = build_corpus(out, o);
  log("synth: wrote {} items", rows.size());
  return kOk;
}

std::vector<ManifestRow> select(const fs::path& corpus, const std::string& split) {
  const auto rows = read_manifest(corpus);
  if (split == "all") return rows;
  const auto s = split_corpus(rows);
  return split == "train" ? s.train : s.heldout;
}

int cmd_train(const fs::path& corpus, const fs::path& out, const std::string& config_path,
              std::optional<std::uint64_t> seed, const std::string& stage, const std::string& resume) {
  TrainConfig cfg = config_path.empty() ? parse_config("") : read_config(config_path);
  if (seed) cfg.seed = *seed;
  if (stage == "2" && resume.empty()) throw UsageError("--stage 2 needs --resume with a stage-1 checkpoint");
  std::cerr << "resolved config:\n" << format_config(cfg);

  const auto rows = select(corpus, "train");
  log("train: {} training items from {}", rows.size(), corpus.string());
  Trainer trainer(cfg, load_samples(corpus, rows));
  const int first_stage = stage == "2" ? 2 : 1;
  if (!resume.empty()) {
    trainer.restore(read_checkpoint(resume), first_stage);
    log("train: resumed from {} at stage-1 iteration {}, stage-2 iteration {}", resume, trainer.stage_iterations(1),
        trainer.stage_iterations(2));
  }

  fs::create_directories(out);
  const fs::path loss_path = out / "loss.csv";
  const bool append = !resume.empty() && fs::exists(loss_path);
  std::ofstream losses(loss_path, append ? std::ios::app : std::ios::trunc);
  if (!losses) throw std::runtime_error("cannot write " + loss_path.string());
  if (!append) write_loss_header(losses);
  {
    std::ofstream c(out / "config.txt");
    c << format_config(cfg);
  }

  std::vector<int> stages;
  if (stage == "1" || stage == "all") stages.push_back(1);
  if (stage == "2" || stage == "all") stages.push_back(2);
  for (int st : stages) {
    const std::size_t target = st == 1 ? cfg.stage1_iters : cfg.stage2_iters;
    while (trainer.stage_iterations(st) < target) {
      const StepLosses l = trainer.step(st);
      write_loss_row(losses, l);
      if (l.iteration % 10 == 0 || trainer.stage_iterations(st) == target)
        log("stage {} iter {}: reconstruction {:.6f} normal {:.6f} total {:.6f}", st, l.iteration, l.reconstruction,
            l.normal, l.total);
    }
  }
  losses.flush();
  write_checkpoint(out / "checkpoint.dhck", trainer.checkpoint());
  log("train: checkpoint written to {}", (out / "checkpoint.dhck").string());
  return kOk;
}

const ManifestRow& find_row(const std::vector<ManifestRow>& rows, std::size_t id) {
  for (const auto& r : rows)
    if (r.id == id) return r;
  throw std::runtime_error(fmt::format("item {} is not in the manifest", id));
}

int cmd_infer(const fs::path& checkpoint, const fs::path& corpus, std::size_t id, const fs::path& out,
              double threshold, bool no_refine) {
  const auto net = load_network(read_checkpoint(checkpoint));
  const auto rows = read_manifest(corpus);
  const Sample sample = make_sample(load_item(corpus, find_row(rows, id)));
  const Prediction p = infer(net, sample, threshold);

  fs::create_directories(out);
  write_dhvg(out / "occupancy.dhvg", p.occupancy);
  write_dhvg(out / "normal.dhvg", p.normal);
  write_normal_png(out / "normal.png", p.normal);

  TriMesh mesh = marching_cubes(p.occupancy, 0.5);
  if (!no_refine && !mesh.empty()) {
    const ImageMap depth = front_depth_map(p.occupancy, 2.0 * double(p.occupancy.nz()));
    mesh = refine_with_normals(mesh, p.normal, depth);
  }
  write_obj(out / "mesh.obj", mesh);
  log("infer: item {} -> {} occupied voxels, {} faces{}", id, p.occupancy.count_nonzero(), mesh.faces.size(),
      no_refine ? " (unrefined)" : "");
  return kOk;
}

int cmd_eval(const fs::path& checkpoint, const fs::path& corpus, const fs::path& out, const std::string& split,
             double threshold, bool truth) {
  const auto rows = select(corpus, split);
  std::vector<EvalRow> results;
  std::optional<DeepHumanNet<float>> net;
  if (!truth) net.emplace(load_network(read_checkpoint(checkpoint)));
  for (const auto& row : rows) {
    const Sample s = make_sample(load_item(corpus, row));
    if (net) {
      results.push_back(evaluate_sample(*net, s, threshold));
      continue;
    }
    // Ground truth scored against itself.
    const VoxelGrid gt = VoxelGrid::from_tensor(s.occupancy);
    EvalRow r;
    r.id = s.id;
    const auto rep = iou_zshift(gt, gt);
    r.iou = rep.iou;
    r.best_shift = rep.best_shift;
    r.baseline_iou = iou_zshift(VoxelGrid::from_tensor(s.semantic_volume).occupancy_mask(), gt).iou;
    const ImageMap n = ImageMap::from_tensor(s.normal);
    std::tie(r.refined, r.raw) = normal_errors(n, ImageMap::from_tensor(s.normal_from_gt), n);
    results.push_back(r);
  }
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_eval_csv(out, results);
  const EvalRow m = mean_row(results);
  std::cout << fmt::format("items {} iou {:.6f} baseline_iou {:.6f} silhouette_loss {:.6f} cosine_refined {:.6f} "
                           "cosine_raw {:.6f} l2_refined {:.6f} l2_raw {:.6f}\n",
                           results.size(), m.iou, m.baseline_iou, m.silhouette_loss, m.refined.cosine, m.raw.cosine,
                           m.refined.l2, m.raw.l2);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Single-image volumetric human reconstruction: data synthesis, training, inference, evaluation"};
  app.require_subcommand(1);

  std::size_t bodies = 16, views = 4, divisor = 4, item = 0;
  std::uint64_t seed = 0;
  double detail = kDefaultDetailAmplitude, threshold = 0.5;
  std::string out, corpus, config, stage = "all", resume, checkpoint, split = "heldout";
  bool no_refine = false, truth = false;

  auto* synth = app.add_subcommand("synth", "Build a synthetic corpus");
  synth->add_option("--bodies", bodies, "Number of procedural bodies")->check(CLI::PositiveNumber);
  synth->add_option("--views", views, "Views per body")->check(CLI::PositiveNumber);
  synth->add_option("--divisor", divisor, "Resolution divisor (power of two)");
  synth->add_option("--out", out, "Corpus directory")->required();
  synth->add_option("--seed", seed, "Corpus seed");
  synth->add_option("--detail", detail, "Surface detail amplitude (model units)")->check(CLI::NonNegativeNumber);

  auto* train = app.add_subcommand("train", "Train the networks");
  std::optional<std::uint64_t> train_seed;
  train->add_option("--corpus", corpus, "Corpus directory")->required();
  train->add_option("--out", out, "Output directory for checkpoint and loss CSV")->required();
  train->add_option("--config", config, "key = value config file");
  train->add_option("--seed", train_seed, "Overrides the config seed");
  train->add_option("--stage", stage, "1, 2 or all")->check(CLI::IsMember({"1", "2", "all"}));
  train->add_option("--resume", resume, "Checkpoint to resume from");

  auto* inf = app.add_subcommand("infer", "Predict occupancy, normals and a mesh for one corpus item");
  inf->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required();
  inf->add_option("--corpus", corpus, "Corpus directory")->required();
  inf->add_option("--item", item, "Item id")->required();
  inf->add_option("--out", out, "Output directory")->required();
  inf->add_option("--threshold", threshold, "Occupancy threshold");
  inf->add_flag("--no-refine", no_refine, "Skip normal-guided mesh refinement");

  auto* ev = app.add_subcommand("eval", "Z-shift IoU and normal errors over a corpus split");
  ev->add_option("--checkpoint", checkpoint, "Trained checkpoint");
  ev->add_option("--corpus", corpus, "Corpus directory")->required();
  ev->add_option("--out", out, "Report CSV path")->required();
  ev->add_option("--split", split, "heldout, train or all")->check(CLI::IsMember({"heldout", "train", "all"}));
  ev->add_option("--threshold", threshold, "Occupancy threshold");
  ev->add_flag("--ground-truth", truth, "Score the ground truth against itself");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) return cmd_synth(bodies, views, divisor, out, seed, detail);
    if (*train) return cmd_train(corpus, out, config, train_seed, stage, resume);
    if (*inf) return cmd_infer(checkpoint, corpus, item, out, threshold, no_refine);
    if (*ev) {
      if (!truth && checkpoint.empty()) throw UsageError("eval needs --checkpoint or --ground-truth");
      return cmd_eval(checkpoint, corpus, out, split, threshold, truth);
    }
  } catch (const UsageError& e) {
    log("usage error: {}", e.what());
    return kUsage;
  } catch (const ConfigError& e) {
    log("config error: {}", e.what());
    return kUsage;
  } catch (const std::domain_error& e) {
    log("numeric failure: {}", e.what());
    return kNumeric;
  } catch (const FormatError& e) {
    log("format error: {}", e.what());
    return kData;
  } catch (const std::exception& e) {
    log("error: {}", e.what());
    return kData;
  }
  return kUsage;
}
