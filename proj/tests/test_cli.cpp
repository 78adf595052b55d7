#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sspcab/commands.hpp"
#include "sspcab/dataio.hpp"
#include "sspcab/errors.hpp"
#include "sspcab/trainer.hpp"

using namespace sspcab;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

const LineSink quiet = [](const std::string&) {};

struct Capture {
  std::vector<std::string> lines;
  LineSink sink() {
    return [this](const std::string& l) { lines.push_back(l); };
  }
};

const fs::path& root() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("sspcab_cli_test_" + std::to_string(getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

RunConfig small_config() {
  RunConfig cfg;
  cfg.set("encoder_channels", "4,4,8");
  cfg.set("reduction", "4");
  cfg.set("batch_size", "4");
  cfg.set("epochs", "2");
  cfg.set("seed", "3");
  return cfg;
}

// One shared corpus and checkpoint for the command tests.
struct Fixture {
  fs::path corpus = root() / "corpus";
  fs::path train_manifest = corpus / "train.manifest";
  fs::path test_manifest = corpus / "test.manifest";
  fs::path checkpoint = root() / "late.ckpt";

  Fixture() {
    RunConfig s;
    s.set("out", corpus.string());
    s.set("n_train", "16");
    s.set("n_test", "20");
    s.set("seed", "3");
    run_synth(s, quiet);
    RunConfig t = small_config();
    t.set("manifest", train_manifest.string());
    t.set("checkpoint", checkpoint.string());
    run_train(t, quiet);
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

int run_cli(const std::string& args, std::string* output = nullptr) {
  const fs::path out = root() / "cli_output.txt";
  const std::string cmd = std::string("\"") + SSPCAB_CLI_PATH + "\" " + args + " > \"" + out.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  if (output != nullptr) *output = slurp(out);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(RunConfig, DefaultsAndSources) {
  RunConfig cfg;
  EXPECT_EQ(cfg.get("placement"), "late");
  EXPECT_EQ(cfg.get("lambda"), "0.1");
  EXPECT_EQ(cfg.source("placement"), RunConfig::Source::default_value);
  cfg.load_text("placement = middle\nlambda=0.5\n", "cfg");
  EXPECT_EQ(cfg.get("placement"), "middle");
  EXPECT_EQ(cfg.source("placement"), RunConfig::Source::file);
  cfg.set("lambda", "2");
  EXPECT_EQ(cfg.source("lambda"), RunConfig::Source::flag);
  cfg.load_text("lambda=0.7\n", "cfg");
  EXPECT_EQ(cfg.get("lambda"), "2");
  EXPECT_EQ(cfg.get_double("lambda"), 2.0);
}

TEST(RunConfig, UnknownAndInvalidKeysAreRejected) {
  RunConfig cfg;
  EXPECT_THROW(cfg.set("lamda", "0.1"), ConfigError);
  EXPECT_THROW(cfg.get("lamda"), ConfigError);
  try {
    cfg.load_text("epochs=3\nbogus=1\n", "run.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("run.cfg:2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(cfg.set("placement", "center"), ConfigError);
  EXPECT_THROW(cfg.set("anomaly_fraction", "1.5"), ConfigError);
  EXPECT_THROW(cfg.set("kprime", "0"), ConfigError);
  EXPECT_THROW(cfg.set("loss", "huber"), ConfigError);
  EXPECT_THROW(cfg.load_file(root() / "does_not_exist.cfg"), ConfigError);
}

TEST(RunConfig, BuildsModelAndTrainingConfigs) {
  RunConfig cfg = small_config();
  cfg.set("placement", "early");
  cfg.set("kprime", "2");
  cfg.set("dilation", "0");
  cfg.set("loss", "mae");
  cfg.set("optimizer", "sgd");
  const AeConfig ae = cfg.ae_config(32, 32, 1);
  EXPECT_EQ(ae.encoder_channels, (std::vector<std::size_t>{4, 4, 8}));
  EXPECT_EQ(ae.placement, Placement::early);
  EXPECT_EQ(ae.block.k_prime, 2u);
  EXPECT_EQ(ae.block.dilation, 0u);
  EXPECT_EQ(ae.block.loss, LossKind::mae);
  const TrainConfig t = cfg.train_config();
  EXPECT_EQ(t.optimizer, OptimizerKind::sgd);
  EXPECT_EQ(t.batch_size, 4u);
  EXPECT_EQ(t.seed, 3u);
  const std::string dump = cfg.dump();
  EXPECT_EQ(dump.find("out="), 0u);
  EXPECT_NE(dump.find("\nplacement=early\n"), std::string::npos);
}

TEST(Commands, TrainWritesCheckpointAndLossLog) {
  const Fixture& f = fixture();
  const Checkpoint ck = load_checkpoint(f.checkpoint);
  EXPECT_EQ(ck.state.epochs_done, 2u);
  const std::string log = slurp(f.checkpoint.string() + ".loss.csv");
  std::istringstream rows(log);
  std::string line;
  std::getline(rows, line);
  EXPECT_EQ(line, "epoch,L_total,L_F,L_SSPCAB");
  std::size_t n = 0;
  while (std::getline(rows, line)) {
    ++n;
    EXPECT_EQ(line.rfind(std::to_string(n) + ",", 0), 0u) << line;
  }
  EXPECT_EQ(n, 2u);
}

TEST(Commands, PlainModelLogsZeroBlockLoss) {
  const Fixture& f = fixture();
  RunConfig t = small_config();
  t.set("placement", "none");
  t.set("lambda", "0.1");
  t.set("manifest", f.train_manifest.string());
  t.set("checkpoint", (root() / "none.ckpt").string());
  t.set("log", (root() / "none.csv").string());
  run_train(t, quiet);
  std::istringstream rows(slurp(root() / "none.csv"));
  std::string line;
  std::getline(rows, line);
  std::size_t n = 0;
  while (std::getline(rows, line)) {
    ++n;
    EXPECT_EQ(line.substr(line.rfind(',') + 1), "0") << line;
  }
  EXPECT_EQ(n, 2u);
}

TEST(Commands, ZeroEpochsSavesTheInitialization) {
  const Fixture& f = fixture();
  RunConfig t = small_config();
  t.set("epochs", "0");
  t.set("manifest", f.train_manifest.string());
  t.set("checkpoint", (root() / "init.ckpt").string());
  run_train(t, quiet);
  const Checkpoint ck = load_checkpoint(root() / "init.ckpt");
  const AutoEncoder fresh = AutoEncoder::build(t.ae_config(32, 32, 1), 3);
  EXPECT_EQ(encode_checkpoint(ck.model, ck.train, ck.state), encode_checkpoint(fresh, t.train_config(), TrainState{}));
}

TEST(Commands, ResumeContinuesAndRejectsMismatches) {
  const Fixture& f = fixture();
  RunConfig t = small_config();
  t.set("epochs", "3");
  t.set("manifest", f.train_manifest.string());
  t.set("checkpoint", (root() / "straight.ckpt").string());
  run_train(t, quiet);

  RunConfig r;
  r.set("epochs", "3");
  r.set("resume", f.checkpoint.string());
  r.set("manifest", f.train_manifest.string());
  r.set("checkpoint", (root() / "resumed.ckpt").string());
  run_train(r, quiet);
  EXPECT_EQ(slurp(root() / "resumed.ckpt"), slurp(root() / "straight.ckpt"));

  r.set("placement", "early");
  try {
    run_train(r, quiet);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("placement"), std::string::npos);
  }
}

TEST(Commands, TrainRefusesTestSplit) {
  const Fixture& f = fixture();
  RunConfig t = small_config();
  t.set("manifest", f.test_manifest.string());
  t.set("checkpoint", (root() / "never.ckpt").string());
  EXPECT_THROW(run_train(t, quiet), ProtocolError);
  EXPECT_FALSE(fs::exists(root() / "never.ckpt"));
}

TEST(Commands, MissingPathsAreUsageErrors) {
  EXPECT_THROW(run_synth(RunConfig{}, quiet), UsageError);
  EXPECT_THROW(run_train(RunConfig{}, quiet), UsageError);
  EXPECT_THROW(run_score(RunConfig{}, quiet), UsageError);
  EXPECT_THROW(run_eval(RunConfig{}, quiet), UsageError);
}

TEST(Commands, ScoringTrainSplitGivesNormalLabels) {
  const Fixture& f = fixture();
  RunConfig s;
  s.set("manifest", f.train_manifest.string());
  s.set("checkpoint", f.checkpoint.string());
  s.set("scores", (root() / "train_scores.txt").string());
  run_score(s, quiet);
  const auto records = read_score_file(root() / "train_scores.txt");
  ASSERT_EQ(records.size(), 16u);
  for (const auto& r : records) EXPECT_EQ(r.label, 0);
  EXPECT_EQ(records[10].group, "train01");
  EXPECT_EQ(records[10].frame, 0u);
}

TEST(Commands, ScoringIsDeterministicAndWritesMaps) {
  const Fixture& f = fixture();
  RunConfig s;
  s.set("manifest", f.test_manifest.string());
  s.set("checkpoint", f.checkpoint.string());
  s.set("scores", (root() / "a.txt").string());
  s.set("maps", (root() / "maps").string());
  Capture out;
  run_score(s, out.sink());
  EXPECT_EQ(out.lines.front(), "frames=20");
  s.set("scores", (root() / "b.txt").string());
  s.set("maps", "");
  run_score(s, quiet);
  EXPECT_EQ(slurp(root() / "a.txt"), slurp(root() / "b.txt"));

  const RasterImage map = load_raster(root() / "maps" / "map_00007.pgm");
  EXPECT_EQ(map.width, 32u);
  EXPECT_EQ(*std::max_element(map.pixels.begin(), map.pixels.end()), 255);
  EXPECT_EQ(*std::min_element(map.pixels.begin(), map.pixels.end()), 0);
  std::istringstream scales(slurp(root() / "maps" / "scales.txt"));
  std::string line;
  std::size_t n = 0;
  while (std::getline(scales, line)) {
    EXPECT_EQ(line.find("map_"), 0u);
    EXPECT_NE(line.find(" min="), std::string::npos);
    ++n;
  }
  EXPECT_EQ(n, 20u);
}

TEST(Commands, ScoreOverridesAndNormalization) {
  const Fixture& f = fixture();
  RunConfig s;
  s.set("manifest", f.test_manifest.string());
  s.set("checkpoint", f.checkpoint.string());
  s.set("scores", (root() / "max.txt").string());
  s.set("score_mode", "max");
  s.set("normalize", "minmax");
  run_score(s, quiet);
  const ScoredSet set = to_scored_set(read_score_file(root() / "max.txt"));
  for (double v : set.scores) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  s.set("reduction", "8");
  EXPECT_THROW(run_score(s, quiet), ConfigError);
}

TEST(Commands, EvalFixtures) {
  write_text(root() / "fixture.txt", "A 0 0.1 0\nA 1 0.9 1\nB 0 0.8 0\nB 1 0.2 1\n");
  RunConfig e;
  e.set("scores", (root() / "fixture.txt").string());
  e.set("out", (root() / "report.txt").string());
  Capture out;
  const EvalReport r = run_eval(e, out.sink());
  EXPECT_EQ(r.micro_auc, 0.75);
  EXPECT_EQ(r.macro_auc, 0.5);
  EXPECT_EQ(slurp(root() / "report.txt"), format_report(r));
  EXPECT_EQ(out.lines[4], "micro_auc=0.750000");
  EXPECT_EQ(out.lines[5], "macro_auc=0.500000");

  write_text(root() / "perfect.txt", "v 0 0.1 0\nv 1 0.2 0\nv 2 0.7 1\n");
  e.set("scores", (root() / "perfect.txt").string());
  e.set("out", "");
  Capture perfect;
  run_eval(e, perfect.sink());
  EXPECT_EQ(perfect.lines[2], "auroc=1.000000");

  write_text(root() / "empty.txt", "");
  e.set("scores", (root() / "empty.txt").string());
  EXPECT_THROW(run_eval(e, quiet), UsageError);
  write_text(root() / "single.txt", "v 0 0.1 0\nv 1 0.2 0\n");
  e.set("scores", (root() / "single.txt").string());
  EXPECT_THROW(run_eval(e, quiet), MetricError);
}

TEST(Commands, GradcheckReportsEveryComponent) {
  RunConfig g;
  g.set("gradcheck_seeds", "3");
  Capture out;
  const SuiteReport ok = run_gradcheck(g, out.sink());
  EXPECT_TRUE(ok.passed);
  EXPECT_EQ(out.lines.back(), "result=pass");
  EXPECT_EQ(out.lines.size(), ok.components.size() + 1);

  g.set("inject_fault", "se");
  Capture bad;
  EXPECT_FALSE(run_gradcheck(g, bad.sink()).passed);
  EXPECT_EQ(bad.lines.back(), "result=fail");
  bool named = false;
  for (const auto& l : bad.lines) named |= l.rfind("se ", 0) == 0 && l.find(" FAIL") != std::string::npos;
  EXPECT_TRUE(named);
}

TEST(Binary, UsageErrorsExitTwo) {
  std::string out;
  EXPECT_EQ(run_cli("synth", &out), 2);
  EXPECT_NE(out.find("--out"), std::string::npos) << out;
  EXPECT_EQ(run_cli("synth --out " + (root() / "x").string() + " --anomaly-fraction 1.5", &out), 2);
  EXPECT_NE(out.find("[0, 1]"), std::string::npos) << out;
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("eval --scores a --set nonsense=1"), 2);
  EXPECT_EQ(run_cli("train --placement sideways"), 2);
}

TEST(Binary, RuntimeFailuresExitOne) {
  std::string out;
  write_text(root() / "single_cli.txt", "v 0 0.1 0\nv 1 0.2 0\n");
  EXPECT_EQ(run_cli("eval --scores " + (root() / "single_cli.txt").string(), &out), 1);
  EXPECT_NE(out.find("error:"), std::string::npos);
  EXPECT_EQ(run_cli("eval --scores " + (root() / "missing.txt").string()), 1);
}

TEST(Binary, SynthTwiceIsIdentical) {
  const fs::path a = root() / "cli_a", b = root() / "cli_b";
  ASSERT_EQ(run_cli("synth --out " + a.string() + " --seed 7 --n-train 4 --n-test 6"), 0);
  ASSERT_EQ(run_cli("synth --out " + b.string() + " --seed 7 --n-train 4 --n-test 6"), 0);
  for (const auto& f : fs::recursive_directory_iterator(a))
    if (f.is_regular_file()) EXPECT_EQ(slurp(f.path()), slurp(b / fs::relative(f.path(), a)));
}

TEST(Binary, MatchesLibraryCommands) {
  const Fixture& f = fixture();
  const fs::path cli_scores = root() / "cli_scores.txt";
  ASSERT_EQ(run_cli("score --manifest " + f.test_manifest.string() + " --checkpoint " + f.checkpoint.string() +
                    " --scores " + cli_scores.string()),
            0);
  RunConfig s;
  s.set("manifest", f.test_manifest.string());
  s.set("checkpoint", f.checkpoint.string());
  s.set("scores", (root() / "lib_scores.txt").string());
  run_score(s, quiet);
  EXPECT_EQ(slurp(cli_scores), slurp(root() / "lib_scores.txt"));

  write_text(root() / "run.cfg", "score_mode=max\nscores=" + cli_scores.string() + "\n");
  std::string out;
  ASSERT_EQ(run_cli("eval --config " + (root() / "run.cfg").string(), &out), 0);
  EXPECT_NE(out.find("micro_auc="), std::string::npos);
}

TEST(Binary, GradcheckExitCodes) {
  std::string out;
  EXPECT_EQ(run_cli("gradcheck --seeds 2", &out), 0);
  EXPECT_NE(out.find("result=pass"), std::string::npos);
  EXPECT_NE(run_cli("gradcheck --seeds 2 --inject-fault masked_conv", &out), 0);
  EXPECT_NE(out.find("masked_conv"), std::string::npos);
}
