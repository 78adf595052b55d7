#include "sspcab/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "sspcab/dataio.hpp"
#include "sspcab/errors.hpp"
#include "sspcab/kv_text.hpp"
#include "sspcab/model.hpp"
#include "sspcab/trainer.hpp"

namespace sspcab {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kScoreBatch = 16;

const std::string& require_path(const RunConfig& cfg, const std::string& key, const char* command) {
  const std::string& v = cfg.get(key);
  if (v.empty()) throw UsageError(std::string(command) + ": missing required --" + key);
  return v;
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

std::ofstream open_output(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  ensure_parent(path);
  std::ofstream out(path, mode | std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

// Architecture and training keys given explicitly must agree with the
// checkpoint; silently ignoring them would score or resume a different model
// from the one requested.
void require_consistent(const RunConfig& cfg, const AeConfig& model, const TrainConfig* train) {
  auto mismatch = [&](const std::string& key, const std::string& stored) {
    if (cfg.is_explicit(key)) {
      throw ConfigError("checkpoint mismatch: " + key + " is '" + stored + "' in the checkpoint but '" + cfg.get(key) +
                        "' was requested");
    }
  };
  auto check_uint = [&](const std::string& key, std::uint64_t stored) {
    if (cfg.is_explicit(key) && cfg.get_uint(key) != stored) mismatch(key, std::to_string(stored));
  };
  auto check_double = [&](const std::string& key, double stored) {
    if (cfg.is_explicit(key) && cfg.get_double(key) != stored) mismatch(key, format_double(stored));
  };
  if (cfg.is_explicit("encoder_channels") &&
      parse_size_list(cfg.get("encoder_channels"), "encoder_channels") != model.encoder_channels) {
    mismatch("encoder_channels", format_size_list(model.encoder_channels));
  }
  if (cfg.is_explicit("placement") && parse_placement(cfg.get("placement")) != model.placement) {
    mismatch("placement", to_string(model.placement));
  }
  if (cfg.is_explicit("loss") && parse_loss_kind(cfg.get("loss")) != model.block.loss) {
    mismatch("loss", to_string(model.block.loss));
  }
  check_double("lambda", model.lambda);
  check_uint("kprime", model.block.k_prime);
  check_uint("dilation", model.block.dilation);
  check_uint("reduction", model.block.reduction);
  if (train == nullptr) return;
  check_uint("batch_size", train->batch_size);
  check_double("learning_rate", train->learning_rate);
  check_uint("seed", train->seed);
  if (cfg.is_explicit("optimizer") && parse_optimizer(cfg.get("optimizer")) != train->optimizer) {
    mismatch("optimizer", to_string(train->optimizer));
  }
}

void require_input_size(const AeConfig& model, const Tensor& data, const std::string& manifest) {
  if (data.dim(1) != model.height || data.dim(2) != model.width || data.dim(3) != model.channels) {
    throw ConfigError("checkpoint mismatch: model expects " + std::to_string(model.height) + "x" +
                      std::to_string(model.width) + "x" + std::to_string(model.channels) + " images but " + manifest +
                      " holds " + std::to_string(data.dim(1)) + "x" + std::to_string(data.dim(2)) + "x" +
                      std::to_string(data.dim(3)));
  }
}

std::string loss_row(const EpochLog& e) {
  return std::to_string(e.epoch) + "," + format_double(e.mean.total) + "," + format_double(e.mean.reconstruction) +
         "," + format_double(e.mean.block);
}

// Linear rescale of one (h, w) map to 0..255; a constant map becomes all 0.
RasterImage map_to_raster(const Tensor& maps, std::size_t index, double& lo, double& hi) {
  const std::size_t h = maps.dim(1), w = maps.dim(2);
  const double* m = maps.raw() + index * h * w;
  lo = *std::min_element(m, m + h * w);
  hi = *std::max_element(m, m + h * w);
  RasterImage img{w, h, 1, std::vector<std::uint8_t>(h * w, 0)};
  if (hi > lo) {
    for (std::size_t i = 0; i < h * w; ++i) {
      img.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * (m[i] - lo) / (hi - lo)));
    }
  }
  return img;
}

std::string format_sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

}  // namespace

void run_synth(const RunConfig& cfg, const LineSink& sink) {
  const fs::path out = require_path(cfg, "out", "synth");
  const SynthCorpus corpus = synth_generate(out, cfg.get_uint("n_train"), cfg.get_uint("n_test"),
                                            cfg.get_double("anomaly_fraction"), cfg.get_uint("seed"));
  std::size_t anomalies = 0;
  for (const auto& e : corpus.test.entries) anomalies += e.label == 1 ? 1 : 0;
  sink("train_manifest=" + corpus.train_manifest.string());
  sink("test_manifest=" + corpus.test_manifest.string());
  sink("train_images=" + std::to_string(corpus.train.entries.size()));
  sink("test_images=" + std::to_string(corpus.test.entries.size()));
  sink("test_anomalies=" + std::to_string(anomalies));
}

void run_train(const RunConfig& cfg, const LineSink& sink) {
  const fs::path manifest_path = require_path(cfg, "manifest", "train");
  const fs::path checkpoint = require_path(cfg, "checkpoint", "train");
  const fs::path log_path = cfg.has_value("log") ? fs::path(cfg.get("log")) : fs::path(checkpoint.string() + ".loss.csv");

  const DatasetManifest manifest = load_manifest(manifest_path);
  if (manifest.split != Split::train) {
    throw ProtocolError("train: " + manifest_path.string() + " is a " + to_string(manifest.split) +
                        " manifest; training uses normal data from a train split only");
  }
  const Tensor data = load_manifest_images(manifest, manifest_path);

  const bool resuming = cfg.has_value("resume");
  std::optional<Checkpoint> start;
  TrainConfig train;
  if (resuming) {
    start = load_checkpoint(cfg.get("resume"));
    require_consistent(cfg, start->model.config(), &start->train);
    require_input_size(start->model.config(), data, manifest_path.string());
    train = start->train;
    if (cfg.is_explicit("epochs")) train.epochs = cfg.get_uint("epochs");
    train.validate();
  } else {
    train = cfg.train_config();
    const AeConfig model_cfg = cfg.ae_config(data.dim(1), data.dim(2), data.dim(3));
    start = Checkpoint{AutoEncoder::build(model_cfg, cfg.get_uint("seed")), train, TrainState{}};
  }
  AutoEncoder& model = start->model;
  TrainState& state = start->state;

  const bool append = resuming && fs::exists(log_path);
  std::ofstream log = open_output(log_path, append ? std::ios::app : std::ios::trunc);
  if (!append) log << "epoch,L_total,L_F,L_SSPCAB\n";

  sink("images=" + std::to_string(data.dim(0)) + " size=" + std::to_string(data.dim(1)) + "x" +
       std::to_string(data.dim(2)) + "x" + std::to_string(data.dim(3)) + " placement=" +
       to_string(model.config().placement) + " parameters=" + std::to_string(model.parameter_count()));
  fit(model, data, train, state, [&](const EpochLog& e) {
    log << loss_row(e) << '\n';
    log.flush();
    sink("epoch=" + std::to_string(e.epoch) + " L_total=" + format_double(e.mean.total) +
         " L_F=" + format_double(e.mean.reconstruction) + " L_SSPCAB=" + format_double(e.mean.block));
  });
  if (!log) throw IoError("failed writing loss log " + log_path.string());
  save_checkpoint(checkpoint, model, train, state);
  sink("checkpoint=" + checkpoint.string());
  sink("loss_log=" + log_path.string());
}

void run_score(const RunConfig& cfg, const LineSink& sink) {
  const fs::path manifest_path = require_path(cfg, "manifest", "score");
  const fs::path checkpoint = require_path(cfg, "checkpoint", "score");
  const fs::path scores_path = require_path(cfg, "scores", "score");

  Checkpoint ck = load_checkpoint(checkpoint);
  require_consistent(cfg, ck.model.config(), nullptr);
  const AeConfig& stored = ck.model.config();
  ck.model.set_scoring(cfg.is_explicit("score_mode") ? parse_score_mode(cfg.get("score_mode")) : stored.score_mode,
                       cfg.is_explicit("w_recon") ? cfg.get_double("w_recon") : stored.w_recon,
                       cfg.is_explicit("w_block") ? cfg.get_double("w_block") : stored.w_block);

  const DatasetManifest manifest = load_manifest(manifest_path);
  const Tensor data = load_manifest_images(manifest, manifest_path);
  require_input_size(ck.model.config(), data, manifest_path.string());

  const bool write_maps = cfg.has_value("maps");
  const fs::path maps_dir = write_maps ? fs::path(cfg.get("maps")) : fs::path();
  std::ofstream scales;
  if (write_maps) {
    fs::create_directories(maps_dir);
    scales = open_output(maps_dir / "scales.txt");
  }

  const std::size_t n = data.dim(0), h = data.dim(1), w = data.dim(2);
  std::vector<ScoreRecord> records;
  records.reserve(n);
  std::map<std::string, std::size_t> next_frame;
  for (std::size_t first = 0; first < n; first += kScoreBatch) {
    const std::size_t count = std::min(kScoreBatch, n - first);
    std::vector<std::size_t> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = first + i;
    const Tensor maps = anomaly_map(ck.model, gather_batch(data, idx));
    for (std::size_t i = 0; i < count; ++i) {
      const ManifestEntry& e = manifest.entries[first + i];
      Tensor map({h, w}, std::vector<double>(maps.raw() + i * h * w, maps.raw() + (i + 1) * h * w));
      records.push_back(ScoreRecord{e.group, next_frame[e.group]++, frame_score(map, ck.model.config().score_mode),
                                    e.label});
      if (write_maps) {
        double lo = 0.0, hi = 0.0;
        char name[32];
        std::snprintf(name, sizeof name, "map_%05zu.pgm", first + i);
        save_raster(map_to_raster(maps, i, lo, hi), maps_dir / name);
        scales << name << " min=" << format_double(lo) << " max=" << format_double(hi) << '\n';
      }
    }
  }

  if (cfg.get("normalize") == "minmax") {
    ScoredSet set = to_scored_set(records);
    minmax_normalize_per_group(set);
    for (std::size_t i = 0; i < records.size(); ++i) records[i].score = set.scores[i];
  }
  write_score_file(scores_path, records);
  if (write_maps && !scales) throw IoError("failed writing " + (maps_dir / "scales.txt").string());
  sink("frames=" + std::to_string(records.size()));
  sink("scores=" + scores_path.string());
  if (write_maps) sink("maps=" + maps_dir.string());
}

EvalReport run_eval(const RunConfig& cfg, const LineSink& sink) {
  const fs::path scores_path = require_path(cfg, "scores", "eval");
  const std::vector<ScoreRecord> records = read_score_file(scores_path);
  if (records.empty()) throw UsageError("eval: score file " + scores_path.string() + " contains no records");
  const EvalReport report = evaluate(to_scored_set(records));
  const std::string text = format_report(report);
  if (cfg.has_value("out")) {
    std::ofstream out = open_output(cfg.get("out"));
    out << text;
    if (!out) throw IoError("failed writing report " + cfg.get("out"));
  }
  std::size_t start = 0;
  while (start < text.size()) {
    const std::size_t end = text.find('\n', start);
    sink(text.substr(start, end - start));
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return report;
}

SuiteReport run_gradcheck(const RunConfig& cfg, const LineSink& sink) {
  SuiteOptions options;
  options.first_seed = cfg.get_uint("seed");
  options.seeds = cfg.get_uint("gradcheck_seeds");
  options.inject_fault = cfg.get("inject_fault");
  const SuiteReport report = run_gradcheck_suite(options);
  for (const ComponentResult& r : report.components) {
    std::string line = r.component + " worst=" + format_sci(r.worst) + " tolerance=" + format_sci(r.tolerance) +
                       " seed=" + std::to_string(r.worst_seed) + " param=" + r.worst_param;
    if (r.probes > 0) line += " skipped=" + std::to_string(r.skipped) + "/" + std::to_string(r.probes);
    sink(line + (r.passed ? " PASS" : " FAIL"));
  }
  sink(std::string("result=") + (report.passed ? "pass" : "fail"));
  return report;
}

}  // namespace sspcab
