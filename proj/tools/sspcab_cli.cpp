#include <cstdio>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "sspcab/sspcab.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct FlagSpec {
  const char* flag;
  const char* key;
  const char* help;
};

const std::vector<FlagSpec> kModelFlags = {
    {"--encoder-channels", "encoder_channels", "Encoder widths, comma separated"},
    {"--placement", "placement", "SSPCAB placement: none, early, middle or late"},
    {"--lambda", "lambda", "Weight of the block's reconstruction loss"},
    {"--kprime", "kprime", "Sub-kernel size k'"},
    {"--dilation", "dilation", "Gap d between the masked centre and the sub-kernels"},
    {"--reduction", "reduction", "Channel reduction ratio of the attention bottleneck"},
    {"--loss", "loss", "Block reconstruction loss: mse or mae"},
};

const std::vector<FlagSpec> kScoringFlags = {
    {"--score-mode", "score_mode", "Frame score: mean or max"},
    {"--w-recon", "w_recon", "Weight of the output reconstruction error in the anomaly map"},
    {"--w-block", "w_block", "Weight of the block reconstruction error in the anomaly map"},
};

const std::vector<FlagSpec> kTrainFlags = {
    {"--manifest", "manifest", "Train-split manifest"},
    {"--checkpoint", "checkpoint", "Checkpoint to write"},
    {"--log", "log", "Per-epoch loss CSV (default <checkpoint>.loss.csv)"},
    {"--resume", "resume", "Checkpoint to continue training from"},
    {"--epochs", "epochs", "Total number of epochs"},
    {"--batch-size", "batch_size", "Mini-batch size"},
    {"--learning-rate", "learning_rate", "Optimizer step size"},
    {"--optimizer", "optimizer", "adam or sgd"},
};

const std::vector<FlagSpec> kScoreFlags = {
    {"--manifest", "manifest", "Manifest of the frames to score"},
    {"--checkpoint", "checkpoint", "Trained checkpoint"},
    {"--scores", "scores", "Score file to write"},
    {"--maps", "maps", "Directory for per-frame anomaly-map PGMs"},
    {"--normalize", "normalize", "Per-group score normalization: none or minmax"},
};

const std::vector<FlagSpec> kSynthFlags = {
    {"--out", "out", "Output directory"},
    {"--n-train", "n_train", "Number of training images"},
    {"--n-test", "n_test", "Number of test images"},
    {"--anomaly-fraction", "anomaly_fraction", "Fraction of anomalous test images"},
};

const std::vector<FlagSpec> kEvalFlags = {
    {"--scores", "scores", "Score file to evaluate"},
    {"--out", "out", "Write the report here as well"},
};

const std::vector<FlagSpec> kGradcheckFlags = {
    {"--seeds", "gradcheck_seeds", "Number of seeded instances per component"},
    {"--inject-fault", "inject_fault", "Corrupt one component's gradient (self-test)"},
};

using RunFn = sspcab_status (*)(const sspcab_config*, sspcab_line_fn, void*);

struct Command {
  CLI::App* app = nullptr;
  RunFn run = nullptr;
  std::vector<std::pair<std::string, std::string>> values;  // (key, value) in flag-table order
  std::vector<std::pair<const char*, CLI::Option*>> options;
  std::string config_file;
  std::vector<std::string> overrides;
};

void add_flags(Command& cmd, const std::vector<FlagSpec>& specs) {
  for (const auto& s : specs) {
    cmd.values.emplace_back(s.key, "");
    // values is reserved up front, so this reference stays valid.
    cmd.options.emplace_back(s.key, cmd.app->add_option(s.flag, cmd.values.back().second, s.help));
  }
}

std::unique_ptr<Command> make_command(CLI::App& root, const char* name, const char* help, RunFn run,
                                      std::initializer_list<const std::vector<FlagSpec>*> groups) {
  auto cmd = std::make_unique<Command>();
  cmd->app = root.add_subcommand(name, help);
  cmd->run = run;
  std::size_t total = 1;
  for (const auto* g : groups) total += g->size();
  cmd->values.reserve(total);
  cmd->app->add_option("--config", cmd->config_file, "key=value config file (flags take precedence)");
  cmd->values.emplace_back("seed", "");
  cmd->options.emplace_back("seed", cmd->app->add_option("--seed", cmd->values.back().second, "Random seed"));
  for (const auto* g : groups) add_flags(*cmd, *g);
  cmd->app->add_option("--set", cmd->overrides, "Override any config key: --set key=value");
  return cmd;
}

void print_line(const char* line, void*) { std::printf("%s\n", line); }

int exit_code(sspcab_status status) {
  switch (status) {
    case SSPCAB_OK: return kExitOk;
    case SSPCAB_ERR_USAGE:
    case SSPCAB_ERR_CONFIG:
    case SSPCAB_ERR_INVALID_ARGUMENT: return kExitUsage;
    default: return kExitFailure;
  }
}

int report(sspcab_status status) {
  if (status != SSPCAB_OK) std::fprintf(stderr, "error: %s\n", sspcab_last_error());
  return exit_code(status);
}

int execute(const Command& cmd) {
  sspcab_config* raw = nullptr;
  if (sspcab_config_create(&raw) != SSPCAB_OK) return report(SSPCAB_ERR_INTERNAL);
  std::unique_ptr<sspcab_config, decltype(&sspcab_config_destroy)> cfg(raw, sspcab_config_destroy);

  for (std::size_t i = 0; i < cmd.values.size(); ++i) {
    if (cmd.options[i].second->count() == 0) continue;
    const sspcab_status s = sspcab_config_set(cfg.get(), cmd.values[i].first.c_str(), cmd.values[i].second.c_str());
    if (s != SSPCAB_OK) return report(s);
  }
  for (const std::string& kv : cmd.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "error: --set expects key=value, got '%s'\n", kv.c_str());
      return kExitUsage;
    }
    const sspcab_status s = sspcab_config_set(cfg.get(), kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str());
    if (s != SSPCAB_OK) return report(s);
  }
  if (!cmd.config_file.empty()) {
    const sspcab_status s = sspcab_config_load_file(cfg.get(), cmd.config_file.c_str());
    if (s != SSPCAB_OK) return report(s);
  }
  std::fflush(stdout);
  const int code = report(cmd.run(cfg.get(), print_line, nullptr));
  std::fflush(stdout);
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Anomaly detection with a self-supervised masked-convolution block"};
  app.require_subcommand(1);
  app.set_version_flag("--version", sspcab_version());

  std::vector<std::unique_ptr<Command>> commands;
  commands.push_back(make_command(app, "synth", "Write a seeded synthetic corpus and manifests", sspcab_run_synth,
                                  {&kSynthFlags}));
  commands.push_back(make_command(app, "train", "Train an auto-encoder on a train-split manifest", sspcab_run_train,
                                  {&kTrainFlags, &kModelFlags, &kScoringFlags}));
  commands.push_back(make_command(app, "score", "Write per-frame anomaly scores for a manifest", sspcab_run_score,
                                  {&kScoreFlags, &kModelFlags, &kScoringFlags}));
  commands.push_back(make_command(app, "eval", "Compute AUROC, AP and micro/macro AUC from a score file",
                                  sspcab_run_eval, {&kEvalFlags}));
  commands.push_back(make_command(app, "gradcheck", "Check every analytic gradient against finite differences",
                                  sspcab_run_gradcheck, {&kGradcheckFlags}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  for (const auto& cmd : commands) {
    if (cmd->app->parsed()) return execute(*cmd);
  }
  return kExitUsage;
}
