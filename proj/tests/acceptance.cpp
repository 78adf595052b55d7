// Acceptance suite: prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "sspcab/commands.hpp"
#include "sspcab/dataio.hpp"
#include "sspcab/gradcheck_suite.hpp"
#include "sspcab/metrics.hpp"
#include "sspcab/model.hpp"
#include "sspcab/sspcab_block.hpp"
#include "sspcab/trainer.hpp"

using namespace sspcab;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

const LineSink quiet = [](const std::string&) {};

Tensor random_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  fill_uniform(t, rng, 1.0);
  return t;
}

std::pair<std::size_t, std::size_t> geometry(std::uint64_t seed) { return {1 + seed % 3, (seed / 3) % 3}; }

Outcome masking_invariance() {
  std::size_t probes = 0, violations = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed, 900);
    const auto [kp, d] = geometry(seed);
    const std::size_t c = 1 + rng.below(3), side = 2 * (kp + d) + 3 + rng.below(4);
    MaskedConvParams p = MaskedConvParams::zeros(c, kp, d);
    fill_uniform(p.sub_kernels, rng, 1.0);
    const Tensor x = random_tensor({1, side, side, c}, rng);
    const Tensor base = masked_conv_forward(x, p);
    const long oi = static_cast<long>(rng.below(side)), oj = static_cast<long>(rng.below(side));
    auto in_band = [&](long v) {
      const long a = std::labs(v);
      return a >= static_cast<long>(d + 1) && a <= static_cast<long>(d + kp);
    };
    for (std::size_t i = 0; i < side; ++i)
      for (std::size_t j = 0; j < side; ++j) {
        if (in_band(static_cast<long>(i) - oi) && in_band(static_cast<long>(j) - oj)) continue;
        Tensor moved = x;
        for (std::size_t ch = 0; ch < c; ++ch) moved.at(0, i, j, ch) += rng.uniform(-5.0, 5.0);
        const Tensor y = masked_conv_forward(moved, p);
        for (std::size_t ch = 0; ch < c; ++ch) {
          ++probes;
          if (y.at(0, oi, oj, ch) != base.at(0, oi, oj, ch)) ++violations;
        }
      }
  }
  return {violations == 0, std::to_string(probes) + " perturbations, " + std::to_string(violations) + " changed outputs"};
}

Outcome dense_oracle() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) worst = std::max(worst, masked_conv_oracle_gap(seed));
  return {worst <= 1e-12, "max abs diff " + fmt("%.3e", worst) + " over 100 instances"};
}

Outcome gradient_suite() {
  SuiteOptions options;
  options.seeds = 100;
  const SuiteReport report = run_gradcheck_suite(options);
  std::string failed;
  double worst = 0.0;
  for (const ComponentResult& r : report.components) {
    if (!r.passed) failed += " " + r.component;
    if (r.component != "masked_conv_oracle") worst = std::max(worst, r.worst);
  }
  return {report.passed, std::to_string(report.components.size()) + " components x 100 seeds, worst rel err " +
                             fmt("%.3e", worst) + (failed.empty() ? "" : ", failed:" + failed)};
}

AeConfig small_ae(Placement placement) {
  AeConfig c;
  c.height = 16;
  c.width = 16;
  c.encoder_channels = {4, 4, 8};
  c.placement = placement;
  c.block.reduction = 4;
  return c;
}

Outcome joint_loss_contract() {
  bool exact = true, affine = true;
  for (Placement p : {Placement::early, Placement::middle, Placement::late}) {
    AeConfig c = small_ae(p);
    Rng rng(static_cast<std::uint64_t>(p), 910);
    Tensor x({2, 16, 16, 1});
    for (double& v : x.data()) v = rng.uniform();
    c.lambda = 0.0;
    const AutoEncoder m0 = AutoEncoder::build(c, 4);
    const LossGradients lg = loss_and_gradients(m0, x);
    const std::vector<Tensor> expected = oracle::reconstruction_only_gradients(m0, x);
    exact = exact && lg.grads.size() == expected.size() && lg.losses.total == lg.losses.reconstruction;
    for (std::size_t i = 0; exact && i < expected.size(); ++i) exact = lg.grads[i] == expected[i];
    const Losses base = total_loss(m0, x);
    for (double lambda : {0.1, 1.0}) {
      c.lambda = lambda;
      const Losses l = total_loss(AutoEncoder::build(c, 4), x);
      affine = affine && l.reconstruction == base.reconstruction && l.block == base.block &&
               std::abs((l.total - base.total) - lambda * base.block) <= 1e-15;
    }
  }
  return {exact && affine, std::string("lambda=0 gradient ") + (exact ? "bit-exact" : "differs") +
                               ", affine in lambda " + (affine ? "holds" : "violated")};
}

Outcome metric_oracles() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Rng rng(seed, 920);
    const std::size_t n = 2 + rng.below(199);
    const bool ties = seed % 2 == 0;
    std::vector<double> s;
    std::vector<int> y;
    for (std::size_t i = 0; i < n; ++i) {
      s.push_back(ties ? static_cast<double>(rng.below(5)) : rng.uniform());
      y.push_back(rng.uniform() < 0.4 ? 1 : 0);
    }
    y[0] = 1;
    y[1] = 0;
    worst = std::max(worst, std::abs(roc_auc(s, y) - oracle::pairwise_auc(s, y)));
    worst = std::max(worst, std::abs(average_precision(s, y) - oracle::sweep_ap(s, y)));
  }
  const MicroMacro mm = micro_macro_auc(ScoredSet{{0.1, 0.9, 0.8, 0.2}, {0, 1, 0, 1}, {"A", "A", "B", "B"}});
  const bool fixture = mm.micro == 0.75 && mm.macro == 0.5;
  return {worst <= 1e-12 && fixture, "max oracle gap " + fmt("%.3e", worst) + ", fixture micro " +
                                         fmt("%.2f", mm.micro) + " macro " + fmt("%.2f", mm.macro)};
}

struct PipelineRun {
  fs::path dir;
  EvalReport report;
  std::vector<double> epoch_totals;
};

// synth -> train -> score -> eval with default settings and seed 7.
PipelineRun pipeline(const fs::path& dir, const std::string& placement) {
  PipelineRun run{dir, {}, {}};
  RunConfig synth;
  synth.set("out", (dir / "data").string());
  run_synth(synth, quiet);

  RunConfig train;
  train.set("placement", placement);
  train.set("manifest", (dir / "data" / "train.manifest").string());
  train.set("checkpoint", (dir / "model.ckpt").string());
  train.set("log", (dir / "loss.csv").string());
  run_train(train, [&](const std::string& line) {
    const auto at = line.find("L_total=");
    if (line.rfind("epoch=", 0) == 0 && at != std::string::npos) run.epoch_totals.push_back(std::stod(line.substr(at + 8)));
  });

  RunConfig score;
  score.set("manifest", (dir / "data" / "test.manifest").string());
  score.set("checkpoint", (dir / "model.ckpt").string());
  score.set("scores", (dir / "scores.txt").string());
  run_score(score, quiet);

  RunConfig eval;
  eval.set("scores", (dir / "scores.txt").string());
  eval.set("out", (dir / "report.txt").string());
  run.report = run_eval(eval, quiet);
  return run;
}

fs::path work_dir() {
  static const fs::path d = [] {
    fs::path p = fs::temp_directory_path() / ("sspcab_acceptance_" + std::to_string(getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return d;
}

PipelineRun& late_run() {
  static PipelineRun run = pipeline(work_dir() / "late_a", "late");
  return run;
}

Outcome benchmark_direction() {
  const PipelineRun plain = pipeline(work_dir() / "none", "none");
  const double with_block = late_run().report.micro_auc, without = plain.report.micro_auc;
  return {with_block >= without && with_block >= 0.85,
          "micro AUC late " + fmt("%.6f", with_block) + " vs none " + fmt("%.6f", without) + " (threshold 0.85)"};
}

Outcome training_regression() {
  const auto& t = late_run().epoch_totals;
  if (t.size() < 2) return {false, "fewer than two epochs logged"};
  return {t.back() <= 0.5 * t.front(), "epoch 1 L_total " + fmt("%.6g", t.front()) + ", epoch " +
                                          std::to_string(t.size()) + " L_total " + fmt("%.6g", t.back()) +
                                          ", ratio " + fmt("%.4f", t.back() / t.front())};
}

Outcome persistence() {
  const fs::path ckpt = late_run().dir / "model.ckpt";
  const std::string bytes = slurp(ckpt);
  const Checkpoint ck = load_checkpoint(ckpt);
  const std::vector<std::uint8_t> re = encode_checkpoint(ck.model, ck.train, ck.state);
  const bool round_trip = std::string(re.begin(), re.end()) == bytes;

  const fs::path manifest = late_run().dir / "data" / "train.manifest";
  const Tensor data = load_manifest_images(load_manifest(manifest), manifest);
  RunConfig defaults;
  TrainConfig cfg = defaults.train_config();
  cfg.epochs = 2;
  AutoEncoder straight = AutoEncoder::build(defaults.ae_config(32, 32, 1), cfg.seed);
  AutoEncoder first = straight;
  TrainState s_straight, s_first;
  fit(straight, data, cfg, s_straight);
  TrainConfig one = cfg;
  one.epochs = 1;
  fit(first, data, one, s_first);
  const fs::path mid = work_dir() / "resume.ckpt";
  save_checkpoint(mid, first, one, s_first);
  Checkpoint resumed = load_checkpoint(mid);
  resumed.train.epochs = 2;
  fit(resumed.model, data, resumed.train, resumed.state);
  const bool resume = encode_checkpoint(resumed.model, resumed.train, resumed.state) ==
                      encode_checkpoint(straight, cfg, s_straight);
  return {round_trip && resume, std::string("checkpoint round trip ") + (round_trip ? "bit-exact" : "differs") +
                                    ", 1+1 epoch resume " + (resume ? "bit-exact" : "differs") +
                                    " vs 2 uninterrupted epochs"};
}

Outcome determinism() {
  const PipelineRun again = pipeline(work_dir() / "late_b", "late");
  const bool scores = slurp(late_run().dir / "scores.txt") == slurp(again.dir / "scores.txt");
  const bool report = slurp(late_run().dir / "report.txt") == slurp(again.dir / "report.txt");
  return {scores && report, std::string("score files ") + (scores ? "identical" : "differ") + ", reports " +
                                (report ? "identical" : "differ")};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"masking invariance", masking_invariance},
      {"dense-kernel oracle", dense_oracle},
      {"gradient suite", gradient_suite},
      {"joint loss contract", joint_loss_contract},
      {"metric oracles", metric_oracles},
      {"synthetic benchmark direction", benchmark_direction},
      {"training regression", training_regression},
      {"persistence", persistence},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("AC%zu %s %s: %s (%.1fs)\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first, o.detail.c_str(),
                secs);
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  fs::remove_all(work_dir());
  std::printf("%s: %zu/%zu criteria passed\n", failures == 0 ? "PASS" : "FAIL", criteria.size() - failures,
              criteria.size());
  return failures == 0 ? 0 : 1;
}
