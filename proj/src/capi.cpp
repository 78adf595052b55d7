#include "sspcab/sspcab.h"

#include <cstring>
#include <new>
#include <string>

#include "sspcab/commands.hpp"
#include "sspcab/errors.hpp"
#include "sspcab/metrics.hpp"
#include "sspcab/model.hpp"
#include "sspcab/run_config.hpp"
#include "sspcab/trainer.hpp"

struct sspcab_config {
  sspcab::RunConfig cfg;
};

struct sspcab_model {
  sspcab::Checkpoint state;
};

namespace {

thread_local std::string last_error;

sspcab_status fail(sspcab_status status, const std::string& message) {
  last_error = message;
  return status;
}

// Most derived classes first so each error keeps its own code.
template <typename Fn>
sspcab_status guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const sspcab::UnsupportedVersionError& e) {
    return fail(SSPCAB_ERR_UNSUPPORTED_VERSION, e.what());
  } catch (const sspcab::FormatError& e) {
    return fail(SSPCAB_ERR_FORMAT, e.what());
  } catch (const sspcab::UsageError& e) {
    return fail(SSPCAB_ERR_USAGE, e.what());
  } catch (const sspcab::ConfigError& e) {
    return fail(SSPCAB_ERR_CONFIG, e.what());
  } catch (const sspcab::ShapeError& e) {
    return fail(SSPCAB_ERR_SHAPE, e.what());
  } catch (const sspcab::IoError& e) {
    return fail(SSPCAB_ERR_IO, e.what());
  } catch (const sspcab::ProtocolError& e) {
    return fail(SSPCAB_ERR_PROTOCOL, e.what());
  } catch (const sspcab::MetricError& e) {
    return fail(SSPCAB_ERR_METRIC, e.what());
  } catch (const sspcab::NumericError& e) {
    return fail(SSPCAB_ERR_NUMERIC, e.what());
  } catch (const std::bad_alloc&) {
    return fail(SSPCAB_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(SSPCAB_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(SSPCAB_ERR_INTERNAL, "unknown error");
  }
}

sspcab::LineSink make_sink(sspcab_line_fn fn, void* user) {
  if (fn == nullptr) return [](const std::string&) {};
  return [fn, user](const std::string& line) { fn(line.c_str(), user); };
}

template <typename Command>
sspcab_status run_command(const sspcab_config* cfg, sspcab_line_fn sink, void* user, Command&& command) {
  if (cfg == nullptr) return fail(SSPCAB_ERR_INVALID_ARGUMENT, "config handle is null");
  return guarded([&] {
    command(cfg->cfg, make_sink(sink, user));
    return SSPCAB_OK;
  });
}

sspcab::Tensor image_batch(const sspcab_model* model, const double* images, size_t n) {
  const auto& c = model->state.model.config();
  const std::size_t count = n * c.height * c.width * c.channels;
  return sspcab::Tensor({n, c.height, c.width, c.channels}, std::vector<double>(images, images + count));
}

}  // namespace

extern "C" {

const char* sspcab_version(void) { return "1.0.0"; }

const char* sspcab_status_name(sspcab_status status) {
  switch (status) {
    case SSPCAB_OK: return "ok";
    case SSPCAB_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case SSPCAB_ERR_USAGE: return "usage";
    case SSPCAB_ERR_CONFIG: return "config";
    case SSPCAB_ERR_SHAPE: return "shape";
    case SSPCAB_ERR_FORMAT: return "format";
    case SSPCAB_ERR_UNSUPPORTED_VERSION: return "unsupported_version";
    case SSPCAB_ERR_IO: return "io";
    case SSPCAB_ERR_PROTOCOL: return "protocol";
    case SSPCAB_ERR_METRIC: return "metric";
    case SSPCAB_ERR_NUMERIC: return "numeric";
    case SSPCAB_ERR_CHECK_FAILED: return "check_failed";
    case SSPCAB_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* sspcab_last_error(void) { return last_error.c_str(); }

sspcab_status sspcab_config_create(sspcab_config** out) {
  if (out == nullptr) return fail(SSPCAB_ERR_INVALID_ARGUMENT, "output pointer is null");
  return guarded([&] {
    *out = new sspcab_config{};
    return SSPCAB_OK;
  });
}

void sspcab_config_destroy(sspcab_config* cfg) { delete cfg; }

sspcab_status sspcab_config_load_file(sspcab_config* cfg, const char* path) {
  if (cfg == nullptr || path == nullptr) return fail(SSPCAB_ERR_INVALID_ARGUMENT, "null argument");
  return guarded([&] {
    cfg->cfg.load_file(path);
    return SSPCAB_OK;
  });
}

sspcab_status sspcab_config_set(sspcab_config* cfg, const char* key, const char* value) {
  if (cfg == nullptr || key == nullptr || value == nullptr) return fail(SSPCAB_ERR_INVALID_ARGUMENT, "null argument");
  return guarded([&] {
    cfg->cfg.set(key, value);
    return SSPCAB_OK;
  });
}

sspcab_status sspcab_config_get(const sspcab_config* cfg, const char* key, char* buf, size_t buf_len,
                                size_t* needed) {
  if (cfg == nullptr || key == nullptr) return fail(SSPCAB_ERR_INVALID_ARGUMENT, "null argument");
  return guarded([&] {
    const std::string& v = cfg->cfg.get(key);
    if (needed != nullptr) *needed = v.size() + 1;
    if (buf == nullptr || buf_len < v.size() + 1) {
      return fail(SSPCAB_ERR_INVALID_ARGUMENT,
                  "buffer of " + std::to_string(buf_len) + " bytes too small for value of '" + key + "'");
    }
    std::memcpy(buf, v.c_str(), v.size() + 1);
    return SSPCAB_OK;
  });
}

sspcab_status sspcab_run_synth(const sspcab_config* cfg, sspcab_line_fn sink, void* user) {
  return run_command(cfg, sink, user, sspcab::run_synth);
}

sspcab_status sspcab_run_train(const sspcab_config* cfg, sspcab_line_fn sink, void* user) {
  return run_command(cfg, sink, user, sspcab::run_train);
}

sspcab_status sspcab_run_score(const sspcab_config* cfg, sspcab_line_fn sink, void* user) {
  return run_command(cfg, sink, user, sspcab::run_score);
}

sspcab_status sspcab_run_eval(const sspcab_config* cfg, sspcab_line_fn sink, void* user) {
  return run_command(cfg, sink, user, [](const sspcab::RunConfig& c, const sspcab::LineSink& s) {
    sspcab::run_eval(c, s);
  });
}

sspcab_status sspcab_run_gradcheck(const sspcab_config* cfg, sspcab_line_fn sink, void* user) {
  if (cfg == nullptr) return fail(SSPCAB_ERR_INVALID_ARGUMENT, "config handle is null");
  return guarded([&] {
    const sspcab::SuiteReport report = sspcab::run_gradcheck(cfg->cfg, make_sink(sink, user));
    if (report.passed) return SSPCAB_OK;
    std::string failed;
    for (const auto& c : report.components) {
      if (!c.passed) failed += (failed.empty() ? "" : ", ") + c.component;
    }
    return fail(SSPCAB_ERR_CHECK_FAILED, "gradient check failed: " + failed);
  });
}

sspcab_status sspcab_model_create(const sspcab_config* cfg, size_t height, size_t width, size_t channels,
                                  sspcab_model** out) {
  if (cfg == nullptr || out == nullptr) return fail(SSPCAB_ERR_INVALID_ARGUMENT, "null argument");
  return guarded([&] {
    const sspcab::AeConfig ae = cfg->cfg.ae_config(height, width, channels);
    *out = new sspcab_model{sspcab::Checkpoint{sspcab::AutoEncoder::build(ae, cfg->cfg.get_uint("seed")),
                                               cfg->cfg.train_config(), sspcab::TrainState{}}};
    return SSPCAB_OK;
  });
}

sspcab_status sspcab_model_load(const char* path, sspcab_model** out) {
  if (path == nullptr || out == nullptr) return fail(SSPCAB_ERR_INVALID_ARGUMENT, "null argument");
  return guarded([&] {
    *out = new sspcab_model{sspcab::load_checkpoint(path)};
    return SSPCAB_OK;
  });
}

sspcab_status sspcab_model_save(const sspcab_model* model, const char* path) {
  if (model == nullptr || path == nullptr) return fail(SSPCAB_ERR_INVALID_ARGUMENT, "null argument");
  return guarded([&] {
    sspcab::save_checkpoint(path, model->state.model, model->state.train, model->state.state);
    return SSPCAB_OK;
  });
}

void sspcab_model_destroy(sspcab_model* model) { delete model; }

sspcab_status sspcab_model_input_shape(const sspcab_model* model, size_t* height, size_t* width, size_t* channels) {
  if (model == nullptr) return fail(SSPCAB_ERR_INVALID_ARGUMENT, "model handle is null");
  const auto& c = model->state.model.config();
  if (height != nullptr) *height = c.height;
  if (width != nullptr) *width = c.width;
  if (channels != nullptr) *channels = c.channels;
  return SSPCAB_OK;
}

sspcab_status sspcab_model_anomaly_map(const sspcab_model* model, const double* images, size_t n, double* maps) {
  if (model == nullptr || images == nullptr || maps == nullptr || n == 0) {
    return fail(SSPCAB_ERR_INVALID_ARGUMENT, "null argument or empty batch");
  }
  return guarded([&] {
    const sspcab::Tensor m = sspcab::anomaly_map(model->state.model, image_batch(model, images, n));
    std::memcpy(maps, m.raw(), m.size() * sizeof(double));
    return SSPCAB_OK;
  });
}

sspcab_status sspcab_model_frame_scores(const sspcab_model* model, const double* images, size_t n, double* scores) {
  if (model == nullptr || images == nullptr || scores == nullptr || n == 0) {
    return fail(SSPCAB_ERR_INVALID_ARGUMENT, "null argument or empty batch");
  }
  return guarded([&] {
    const auto& c = model->state.model.config();
    const sspcab::Tensor m = sspcab::anomaly_map(model->state.model, image_batch(model, images, n));
    const std::size_t area = c.height * c.width;
    for (std::size_t i = 0; i < n; ++i) {
      const sspcab::Tensor one({c.height, c.width}, std::vector<double>(m.raw() + i * area, m.raw() + (i + 1) * area));
      scores[i] = sspcab::frame_score(one, c.score_mode);
    }
    return SSPCAB_OK;
  });
}

sspcab_status sspcab_roc_auc(const double* scores, const int* labels, size_t n, double* out) {
  if (scores == nullptr || labels == nullptr || out == nullptr) return fail(SSPCAB_ERR_INVALID_ARGUMENT, "null argument");
  return guarded([&] {
    *out = sspcab::roc_auc(std::span<const double>(scores, n), std::span<const int>(labels, n));
    return SSPCAB_OK;
  });
}

sspcab_status sspcab_average_precision(const double* scores, const int* labels, size_t n, double* out) {
  if (scores == nullptr || labels == nullptr || out == nullptr) return fail(SSPCAB_ERR_INVALID_ARGUMENT, "null argument");
  return guarded([&] {
    *out = sspcab::average_precision(std::span<const double>(scores, n), std::span<const int>(labels, n));
    return SSPCAB_OK;
  });
}

}  // extern "C"
