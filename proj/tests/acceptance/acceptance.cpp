// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any fail.
//
//   dh_acceptance [--workdir DIR] [--only N[,N...]]
//
// Criteria 6-8 drive the deephuman CLI end to end; its path is baked in at
// build time and may be overridden with DH_CLI.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "deephuman/geometric.hpp"
#include "deephuman/losses.hpp"
#include "deephuman/mesh_pipeline.hpp"
#include "deephuman/network.hpp"
#include "deephuman/semantic.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace dh;
using oracle::TensorD;

namespace {

// Pinned tolerances.
constexpr double kGradRelTol = 1e-4;
constexpr double kGradStep = 1e-6;
constexpr std::uint64_t kGradSeeds = 10;
constexpr double kLossAbsTol = 1e-6;
constexpr double kVolumeRelTol = 0.02;
constexpr double kStage1Ratio = 0.5;
constexpr std::uint64_t kRunSeed = 7;

struct Outcome {
  bool pass = false;
  std::string detail;
};

// ---- criterion 1 ---------------------------------------------------------

using LossFn = std::function<TensorD(const std::vector<TensorD>&)>;
struct GradCase {
  std::string name;
  std::function<std::pair<std::vector<TensorD>, LossFn>(std::uint64_t)> make;
};

std::vector<GradCase> grad_cases() {
  using V = std::vector<TensorD>;
  auto r = [](std::mt19937_64& g, Shape s, double lo = -1, double hi = 1) { return oracle::random_tensor(s, g, lo, hi); };
  std::vector<GradCase> c;
  c.push_back({"conv2d", [=](std::uint64_t s) {
                 std::mt19937_64 g(s);
                 V in{r(g, {2, 6, 5}), r(g, {3, 2, 4, 4}), r(g, {3})};
                 return std::pair{in, LossFn([s](const V& v) {
                                    return oracle::weighted_sum(ops::conv(v[0], v[1], v[2], {2, 1}), s);
                                  })};
               }});
  c.push_back({"conv3d", [=](std::uint64_t s) {
                 std::mt19937_64 g(s);
                 V in{r(g, {2, 4, 4, 3}), r(g, {2, 2, 3, 3, 3}), r(g, {2})};
                 return std::pair{in, LossFn([s](const V& v) {
                                    return oracle::weighted_sum(ops::conv(v[0], v[1], v[2], {1, 1}), s);
                                  })};
               }});
  c.push_back({"transposed_conv2d", [=](std::uint64_t s) {
                 std::mt19937_64 g(s);
                 V in{r(g, {2, 3, 2}), r(g, {2, 3, 4, 4}), r(g, {3})};
                 return std::pair{in, LossFn([s](const V& v) {
                                    return oracle::weighted_sum(ops::conv_transpose(v[0], v[1], v[2], {2, 1}), s);
                                  })};
               }});
  c.push_back({"transposed_conv3d", [=](std::uint64_t s) {
                 std::mt19937_64 g(s);
                 V in{r(g, {2, 2, 3, 2}), r(g, {2, 2, 4, 4, 4}), r(g, {2})};
                 return std::pair{in, LossFn([s](const V& v) {
                                    return oracle::weighted_sum(ops::conv_transpose(v[0], v[1], v[2], {2, 1}), s);
                                  })};
               }});
  c.push_back({"activations", [=](std::uint64_t s) {
                 std::mt19937_64 g(s);
                 V in{r(g, {4, 5}, -3, 3)};
                 return std::pair{in, LossFn([s](const V& v) {
                                    auto a = ops::leaky_relu(v[0], 0.2);
                                    auto b = ops::sigmoid(v[0]);
                                    auto t = ops::tanh(v[0]);
                                    return ops::add(ops::add(oracle::weighted_sum(a, s), oracle::weighted_sum(b, s + 1)),
                                                    oracle::weighted_sum(t, s + 2));
                                  })};
               }});
  c.push_back({"vft", [=](std::uint64_t s) {
                 std::mt19937_64 g(s);
                 V in{r(g, {3, 2, 4, 3}), r(g, {2, 4, 3}), r(g, {3, 2, 3, 3}), r(g, {3}), r(g, {3, 2, 3, 3}), r(g, {3})};
                 return std::pair{in, LossFn([s](const V& v) {
                                    geo::VftBranches<double> br{v[2], v[3], v[4], v[5]};
                                    return oracle::weighted_sum(geo::vft_apply(v[0], geo::vft_modulators(v[1], br, 3)), s);
                                  })};
               }});
  c.push_back({"depth_projection", [=](std::uint64_t s) {
                 std::mt19937_64 g(s);
                 V in{r(g, {1, 5, 4, 3}, 0.05, 0.95)};
                 return std::pair{in, LossFn([s](const V& v) {
                                    return oracle::weighted_sum(geo::project_depth(v[0], 10.0), s);
                                  })};
               }});
  c.push_back({"silhouette_projection", [=](std::uint64_t s) {
                 std::mt19937_64 g(s);
                 V in{r(g, {1, 5, 4, 3}, 0.05, 0.95)};
                 return std::pair{in, LossFn([s](const V& v) {
                                    return ops::add(oracle::weighted_sum(geo::project_silhouette(v[0], geo::View::Front), s),
                                                    oracle::weighted_sum(geo::project_silhouette(v[0], geo::View::Side), s + 1));
                                  })};
               }});
  c.push_back({"normal_computation", [=](std::uint64_t s) {
                 std::mt19937_64 g(s);
                 V in{r(g, {1, 5, 6}, 1.0, 3.0)};
                 return std::pair{in, LossFn([s](const V& v) {
                                    auto n = geo::vertex_to_normal(geo::depth_to_vertex(v[0]), 10.0);
                                    return oracle::weighted_sum(geo::upsample2x(n), s);
                                  })};
               }});
  c.push_back({"losses", [=](std::uint64_t s) {
                 std::mt19937_64 g(s);
                 auto tv = oracle::random_tensor({1, 3, 4, 2}, g, 0, 1, false);
                 auto ts = oracle::random_tensor({1, 4, 2}, g, 0, 1, false);
                 auto tn = oracle::random_tensor({3, 4, 2}, g, -1, 1, false);
                 V in{r(g, {1, 3, 4, 2}, 0.05, 0.95), r(g, {1, 4, 2}, 0.05, 0.95), r(g, {1, 4, 2}, 0.05, 0.95),
                      r(g, {3, 4, 2})};
                 return std::pair{in, LossFn([=](const V& v) {
                                    return loss::combined(loss::volume(v[0], tv, 0.7), loss::silhouette(v[1], ts),
                                                          loss::silhouette(v[2], ts), loss::normal(v[3], tn),
                                                          loss::LossWeights{0.3, 0.2, 0.5, 0.7});
                                  })};
               }});
  return c;
}

Outcome criterion_gradients() {
  const auto start = std::chrono::steady_clock::now();
  double worst = 0;
  std::string worst_name;
  std::size_t checks = 0;
  for (const auto& c : grad_cases())
    for (std::uint64_t seed = 0; seed < kGradSeeds; ++seed) {
      auto [inputs, fn] = c.make(seed);
      const auto r = oracle::gradcheck(fn, inputs, seed, 48, kGradStep);
      checks += r.checked;
      if (r.max_rel_error > worst) {
        worst = r.max_rel_error;
        worst_name = fmt::format("{} seed {}", c.name, seed);
      }
    }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {worst < kGradRelTol && secs < 300,
          fmt::format("{} ops x {} seeds, {} probes, max rel error {:.2e} ({}), {:.1f} s", grad_cases().size(),
                      kGradSeeds, checks, worst, worst_name, secs)};
}

// ---- criterion 2 ---------------------------------------------------------

Outcome criterion_depth_equivalence() {
  std::mt19937_64 rng(2);
  std::bernoulli_distribution coin(0.3);
  std::size_t mismatches = 0;
  for (int t = 0; t < 100; ++t) {
    TensorD v(Shape{1, 8, 12, 8});
    for (auto& x : v.mutable_values()) x = coin(rng) ? 1.0 : 0.0;
    const double M = geo::background_depth(8);
    const auto d = geo::project_depth(v, M);
    const auto ref = oracle::scan_depth({v.values().begin(), v.values().end()}, 8, 12, 8, M);
    for (std::size_t i = 0; i < ref.size(); ++i) mismatches += d.values()[i] != ref[i];
  }
  return {mismatches == 0, fmt::format("100 volumes 8x12x8, {} mismatching pixels", mismatches)};
}

// ---- criterion 3 ---------------------------------------------------------

Outcome criterion_shape_audit() {
  using D = std::vector<std::size_t>;
  const std::vector<std::pair<std::string, D>> table = {
      {"G", {96, 64, 8}},        {"G", {48, 32, 16}},       {"G", {24, 16, 32}},       {"G", {12, 8, 64}},
      {"G", {6, 4, 128}},        {"H", {64, 96, 64, 8}},    {"H", {32, 48, 32, 16}},   {"H", {16, 24, 16, 32}},
      {"H", {8, 12, 8, 64}},     {"H", {4, 6, 4, 128}},     {"H", {8, 12, 8, 64}},     {"H", {16, 24, 16, 32}},
      {"H", {32, 48, 32, 16}},   {"H", {64, 96, 64, 8}},    {"H", {128, 192, 128, 4}}, {"H", {128, 192, 128, 1}},
      {"R", {192, 128, 16}},     {"R", {96, 64, 32}},       {"R", {48, 32, 32}},       {"R", {24, 16, 32}},
      {"R", {12, 8, 32}},        {"R", {24, 16, 32}},       {"R", {48, 32, 32}},       {"R", {96, 64, 32}},
      {"R", {192, 128, 16}},     {"R", {384, 256, 8}},      {"R", {384, 256, 3}}};
  const NetworkSpec spec;
  DeepHumanNet<float> net(spec, 0);
  Tensor<float> image(Shape{3, 192, 128}), smap(Shape{3, 192, 128}), svol(Shape{3, 128, 192, 128});
  ShapeTrace trace;
  {
    NoGradGuard guard;
    net.forward(image, smap, svol, &trace);
  }
  std::size_t matched = 0;
  std::string first_bad;
  for (std::size_t i = 0; i < std::min(trace.size(), table.size()); ++i) {
    if (trace[i].net == table[i].first && trace[i].dims == table[i].second) ++matched;
    else if (first_bad.empty()) first_bad = fmt::format(", first mismatch at layer {} ({})", i, trace[i].layer);
  }
  return {matched == table.size() && trace.size() == table.size(),
          fmt::format("{}/{} layers match (traced {}){}", matched, table.size(), trace.size(), first_bad)};
}

// ---- criterion 4 ---------------------------------------------------------

Outcome criterion_loss_arithmetic() {
  const double lv = loss::volume(TensorD::full({1, 2, 3, 4}, 0.5), TensorD::full({1, 2, 3, 4}, 1.0), 0.7).item();
  const auto one = TensorD::scalar(1.0);
  const double total = loss::combined(one, one, one, one, loss::LossWeights{}).item();
  const double e1 = std::abs(lv - 0.7 * std::numbers::ln2), e2 = std::abs(total - 1.21);
  return {e1 < kLossAbsTol && e2 < kLossAbsTol,
          fmt::format("volume {:.8f} (err {:.1e}), combined {:.8f} (err {:.1e})", lv, e1, total, e2)};
}

// ---- criterion 5 ---------------------------------------------------------

struct GeometryReport {
  double mc_volume = 0, mc_expected = 0, vox_count = 0, vox_expected = 0;
  int shift_plus = 0, shift_minus = 0;
  double iou_plus = 0, iou_minus = 0;
  std::string text() const {
    return fmt::format("mc_volume {:.17g} expected {:.17g}\nvoxel_count {:.17g} expected {:.17g}\n"
                       "shift +3 -> {} iou {:.17g}\nshift -3 -> {} iou {:.17g}\n",
                       mc_volume, mc_expected, vox_count, vox_expected, shift_plus, iou_plus, shift_minus, iou_minus);
  }
};

GeometryReport geometry_report() {
  GeometryReport g;
  const double r = 20.0;
  const Vec3 c(31.7, 32.2, 31.4);
  VoxelGrid soft({64, 64, 64}, 1);
  for (std::size_t z = 0; z < 64; ++z)
    for (std::size_t y = 0; y < 64; ++y)
      for (std::size_t x = 0; x < 64; ++x) {
        const double d = (Vec3(double(x), double(y), double(z)) - c).norm() - r;
        soft.at(x, y, z) = float(std::clamp(0.5 - d / 2.0, 0.0, 1.0));
      }
  g.mc_volume = enclosed_volume(marching_cubes(soft, 0.5));
  g.mc_expected = g.vox_expected = 4.0 / 3.0 * std::numbers::pi * r * r * r;

  auto sphere = oracle::icosphere(c, r, 5);
  for (auto& v : sphere.vertices) v = FitTransform::identity().invert(v);
  g.vox_count = double(voxelize(sphere, {64, 64, 64}, FitTransform::identity()).count_nonzero());

  std::mt19937_64 rng(5);
  std::bernoulli_distribution coin(0.35);
  VoxelGrid gt({12, 10, 24}, 1);
  for (std::size_t z = 4; z < 20; ++z)
    for (std::size_t y = 0; y < 10; ++y)
      for (std::size_t x = 0; x < 12; ++x) gt.at(x, y, z) = coin(rng) ? 1.0f : 0.0f;
  const auto plus = iou_zshift(shift_z(gt, 3), gt);
  const auto minus = iou_zshift(shift_z(gt, -3), gt);
  g.shift_plus = plus.best_shift;
  g.iou_plus = plus.iou;
  g.shift_minus = minus.best_shift;
  g.iou_minus = minus.iou;
  return g;
}

Outcome criterion_geometry(const GeometryReport& g) {
  const double mc_err = std::abs(g.mc_volume - g.mc_expected) / g.mc_expected;
  const double vox_err = std::abs(g.vox_count - g.vox_expected) / g.vox_expected;
  const bool shifts = g.shift_plus == -3 && g.shift_minus == 3 && g.iou_plus == 1.0 && g.iou_minus == 1.0;
  return {mc_err < kVolumeRelTol && vox_err < kVolumeRelTol && shifts,
          fmt::format("marching-cubes volume err {:.2f}%, voxel count err {:.2f}%, shifts recovered {}/{} with iou {}/{}",
                      100 * mc_err, 100 * vox_err, g.shift_plus, g.shift_minus, g.iou_plus, g.iou_minus)};
}

// ---- criteria 6-8 --------------------------------------------------------

std::string cli_path() {
  if (const char* env = std::getenv("DH_CLI")) return env;
  return DH_CLI_PATH;
}

void run(const std::string& args, const fs::path& log) {
  const std::string cmd = fmt::format("\"{}\" {} >>\"{}\" 2>&1", cli_path(), args, log.string());
  if (std::system(cmd.c_str()) != 0) throw std::runtime_error("command failed: deephuman " + args + " (see " + log.string() + ")");
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("missing " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::map<std::string, std::string>> read_csv(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::string line;
  std::getline(in, line);
  std::vector<std::string> header;
  for (std::stringstream hs(line); std::getline(hs, line, ',');) header.push_back(line);
  std::vector<std::map<std::string, std::string>> rows;
  while (std::getline(in, line)) {
    std::map<std::string, std::string> row;
    std::stringstream ls(line);
    for (const auto& h : header) std::getline(ls, row[h], ',');
    rows.push_back(std::move(row));
  }
  return rows;
}

const std::vector<std::string> kModes{"multi_scale", "coarsest_only", "latent_concat"};

// Synthesizes the toy corpus, trains every mode and evaluates on the held-out split.
void run_pipeline(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto log = dir / "log.txt";
  run(fmt::format("synth --bodies 16 --views 4 --divisor 4 --seed {} --out \"{}\"", kRunSeed, (dir / "corpus").string()),
      log);
  for (const auto& mode : kModes) {
    const auto run_dir = dir / mode;
    fs::create_directories(run_dir);
    std::ofstream(run_dir / "train.cfg") << fmt::format("scale_divisor = 4\nfusion_mode = {}\nseed = {}\n", mode, kRunSeed);
    run(fmt::format("train --corpus \"{}\" --out \"{}\" --config \"{}\"", (dir / "corpus").string(), run_dir.string(),
                    (run_dir / "train.cfg").string()),
        log);
    run(fmt::format("eval --checkpoint \"{}\" --corpus \"{}\" --split heldout --out \"{}\"",
                    (run_dir / "checkpoint.dhck").string(), (dir / "corpus").string(), (run_dir / "eval.csv").string()),
        log);
  }
  std::ofstream(dir / "geometry.txt") << geometry_report().text();
}

double mean_of(const fs::path& eval_csv, const std::string& column) {
  for (const auto& row : read_csv(eval_csv))
    if (row.at("id") == "mean") return std::stod(row.at(column));
  throw std::runtime_error("no mean row in " + eval_csv.string());
}

Outcome criterion_training(const fs::path& dir) {
  const auto manifest = read_csv(dir / "corpus" / "manifest.csv");
  const auto losses = read_csv(dir / "multi_scale" / "loss.csv");
  std::vector<double> stage1;
  for (const auto& r : losses)
    if (r.at("stage") == "1") stage1.push_back(std::stod(r.at("reconstruction")));
  if (stage1.size() < 200) return {false, fmt::format("only {} stage-1 iterations logged", stage1.size())};
  const double ratio = stage1[199] / stage1[0];
  const auto eval = dir / "multi_scale" / "eval.csv";
  const double iou = mean_of(eval, "iou"), base = mean_of(eval, "baseline_iou");
  return {manifest.size() == 64 && ratio < kStage1Ratio && iou > base,
          fmt::format("{} items; stage-1 reconstruction {:.4f} -> {:.4f} (ratio {:.3f}); held-out iou {:.4f} vs "
                      "baseline {:.4f}",
                      manifest.size(), stage1[0], stage1[199], ratio, iou, base)};
}

Outcome criterion_ablation(const fs::path& dir) {
  std::map<std::string, double> sil;
  for (const auto& m : kModes) sil[m] = mean_of(dir / m / "eval.csv", "silhouette_loss");
  const double refined = mean_of(dir / "multi_scale" / "eval.csv", "cosine_refined");
  const double raw = mean_of(dir / "multi_scale" / "eval.csv", "cosine_raw");
  const bool ok = sil["multi_scale"] <= sil["coarsest_only"] && sil["multi_scale"] <= sil["latent_concat"] && refined <= raw;
  return {ok, fmt::format("silhouette loss multi_scale {:.4f}, coarsest_only {:.4f}, latent_concat {:.4f}; "
                          "normal cosine refined {:.4f} vs raw {:.4f}",
                          sil["multi_scale"], sil["coarsest_only"], sil["latent_concat"], refined, raw)};
}

Outcome criterion_determinism(const fs::path& a, const fs::path& b) {
  std::vector<fs::path> files{"corpus/manifest.csv", "geometry.txt"};
  for (const auto& m : kModes)
    for (const char* f : {"checkpoint.dhck", "loss.csv", "eval.csv"}) files.push_back(fs::path(m) / f);
  std::vector<std::string> differing;
  for (const auto& f : files)
    if (slurp(a / f) != slurp(b / f)) differing.push_back(f.string());
  // Every corpus payload as well.
  std::size_t corpus_files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a / "corpus")) {
    if (!e.is_regular_file()) continue;
    ++corpus_files;
    const auto rel = fs::relative(e.path(), a);
    if (slurp(e.path()) != slurp(b / rel)) differing.push_back(rel.string());
  }
  std::string detail = fmt::format("{} artifacts + {} corpus files compared", files.size(), corpus_files);
  if (!differing.empty()) detail += fmt::format(", {} differ (first: {})", differing.size(), differing.front());
  return {differing.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path workdir = fs::temp_directory_path() / "deephuman_acceptance";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--workdir" && i + 1 < argc) {
      workdir = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string n; std::getline(ss, n, ',');) only.insert(std::stoi(n));
    } else {
      std::cerr << "usage: dh_acceptance [--workdir DIR] [--only N[,N...]]\n";
      return 2;
    }
  }
  auto wanted = [&](int n) { return only.empty() || only.count(n); };

  bool all = true;
  auto report = [&](int n, const std::string& title, const std::function<Outcome()>& fn) {
    if (!wanted(n)) return;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    all &= o.pass;
    std::cout << fmt::format("criterion {} [{}] {}: {}", n, o.pass ? "PASS" : "FAIL", title, o.detail) << std::endl;
  };

  report(1, "gradient suite", criterion_gradients);
  report(2, "depth min-transform equals scan", criterion_depth_equivalence);
  report(3, "full-resolution shape audit", criterion_shape_audit);
  report(4, "loss arithmetic", criterion_loss_arithmetic);
  report(5, "geometry oracles", [] { return criterion_geometry(geometry_report()); });

  const bool need_runs = wanted(6) || wanted(7) || wanted(8);
  std::string pipeline_error;
  if (need_runs) {
    try {
      run_pipeline(workdir / "run_a");
      if (wanted(8)) run_pipeline(workdir / "run_b");
    } catch (const std::exception& e) {
      pipeline_error = e.what();
    }
  }
  auto guarded = [&](auto fn) {
    return [&, fn]() -> Outcome {
      if (!pipeline_error.empty()) return {false, "pipeline failed: " + pipeline_error};
      return fn();
    };
  };
  report(6, "toy training", guarded([&] { return criterion_training(workdir / "run_a"); }));
  report(7, "ablation direction", guarded([&] { return criterion_ablation(workdir / "run_a"); }));
  report(8, "determinism", guarded([&] { return criterion_determinism(workdir / "run_a", workdir / "run_b"); }));
  return all ? 0 : 1;
}
