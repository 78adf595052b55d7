#include "sspcab/trainer.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>

#include "sspcab/errors.hpp"
#include "sspcab/kv_text.hpp"

namespace sspcab {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("adam epsilon must be > 0");
}

void optim_step(std::span<Tensor* const> params, std::span<const Tensor> grads, OptimState& state,
                const TrainConfig& cfg) {
  if (params.size() != grads.size()) {
    throw ShapeError("optim_step: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) require_same_shape(*params[i], grads[i], "optim_step");
  ++state.step;

  if (cfg.optimizer == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->add_scaled(grads[i], -cfg.learning_rate);
    return;
  }

  if (state.m.empty()) {
    for (Tensor* p : params) {
      state.m.push_back(Tensor::zeros_like(*p));
      state.v.push_back(Tensor::zeros_like(*p));
    }
  }
  if (state.m.size() != params.size()) {
    throw ShapeError("optim_step: optimizer state tracks " + std::to_string(state.m.size()) + " tensors, got " +
                     std::to_string(params.size()));
  }
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(state.m[i], grads[i], "optim_step");
    Tensor& theta = *params[i];
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    const Tensor& g = grads[i];
    for (std::size_t k = 0; k < theta.size(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      theta[k] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
}

Tensor gather_batch(const Tensor& dataset, std::span<const std::size_t> indices) {
  require_rank4(dataset, "gather_batch");
  const std::size_t per = dataset.size() / dataset.dim(0);
  Tensor batch({indices.size(), dataset.dim(1), dataset.dim(2), dataset.dim(3)});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const double* src = dataset.raw() + indices[k] * per;
    std::copy(src, src + per, batch.raw() + k * per);
  }
  return batch;
}

TrainLog fit(AutoEncoder& model, const Tensor& dataset, const TrainConfig& cfg, TrainState& state,
             const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  require_rank4(dataset, "fit");
  const std::size_t n = dataset.dim(0);
  if (cfg.batch_size > n) {
    throw ConfigError("batch_size " + std::to_string(cfg.batch_size) + " exceeds dataset size " + std::to_string(n));
  }

  TrainLog log;
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = state.epochs_done + 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(cfg.seed, 1000 + epoch);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    Losses sum;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size, ++batch_no) {
      const std::size_t count = std::min(cfg.batch_size, n - start);
      const Tensor batch = gather_batch(dataset, std::span(order).subspan(start, count));
      LossGradients lg = loss_and_gradients(model, batch);
      if (!std::isfinite(lg.losses.total)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch_no));
      }
      std::vector<Tensor*> params;
      for (ParamRef& p : model.parameters()) params.push_back(p.tensor);
      optim_step(params, lg.grads, state.optim, cfg);
      if (SspcabBlock* block = model.block()) block->last_loss = lg.losses.block;

      const double w = static_cast<double>(count);
      sum.total += w * lg.losses.total;
      sum.reconstruction += w * lg.losses.reconstruction;
      sum.block += w * lg.losses.block;
    }
    const double inv = 1.0 / static_cast<double>(n);
    EpochLog entry{epoch, Losses{sum.total * inv, sum.reconstruction * inv, sum.block * inv}};
    state.epochs_done = epoch;
    log.epochs.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  return log;
}

const char* to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("optimizer must be sgd or adam; got '" + s + "'");
}

namespace {

constexpr std::array<char, 4> kMagic = {'S', 'S', 'P', 'C'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename T>
  void le(T v) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    const U u = std::bit_cast<U>(v);
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

  std::span<const std::uint8_t> bytes(std::size_t n, const char* what) {
    if (data_.size() - pos_ < n) throw FormatError(std::string("checkpoint truncated while reading ") + what, pos_);
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename T>
  T le(const char* what) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
    auto b = bytes(sizeof(U), what);
    U u = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) u |= static_cast<U>(b[i]) << (8 * i);
    return std::bit_cast<T>(u);
  }
  std::size_t pos() const { return pos_; }
  bool at_end() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

std::string config_text(const AutoEncoder& model, const TrainConfig& train, const TrainState& state) {
  const AeConfig& c = model.config();
  std::string s;
  auto put = [&](const std::string& k, const std::string& v) { s += k + "=" + v + "\n"; };
  put("height", std::to_string(c.height));
  put("width", std::to_string(c.width));
  put("channels", std::to_string(c.channels));
  put("encoder_channels", format_size_list(c.encoder_channels));
  put("placement", to_string(c.placement));
  put("lambda", format_double(c.lambda));
  put("kprime", std::to_string(c.block.k_prime));
  put("dilation", std::to_string(c.block.dilation));
  put("reduction", std::to_string(c.block.reduction));
  put("loss", to_string(c.block.loss));
  put("score_mode", to_string(c.score_mode));
  put("w_recon", format_double(c.w_recon));
  put("w_block", format_double(c.w_block));
  put("block_last_loss", format_double(model.block() ? model.block()->last_loss : 0.0));
  put("epochs", std::to_string(train.epochs));
  put("batch_size", std::to_string(train.batch_size));
  put("learning_rate", format_double(train.learning_rate));
  put("optimizer", to_string(train.optimizer));
  put("beta1", format_double(train.beta1));
  put("beta2", format_double(train.beta2));
  put("epsilon", format_double(train.epsilon));
  put("train_seed", std::to_string(train.seed));
  put("epochs_done", std::to_string(state.epochs_done));
  put("optim_step", std::to_string(state.optim.step));
  return s;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const AutoEncoder& model, const TrainConfig& train,
                                            const TrainState& state) {
  Writer w;
  w.bytes(kMagic.data(), kMagic.size());
  w.le(kCheckpointVersion);
  const std::string text = config_text(model, train, state);
  w.le(static_cast<std::uint64_t>(text.size()));
  w.bytes(text.data(), text.size());

  std::vector<std::pair<std::string, const Tensor*>> tensors;
  const auto params = model.parameters();
  for (const auto& p : params) tensors.emplace_back(p.name, p.tensor);
  if (!state.optim.m.empty()) {
    if (state.optim.m.size() != params.size() || state.optim.v.size() != params.size()) {
      throw ShapeError("checkpoint: optimizer state does not mirror the model parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) tensors.emplace_back("optim.m." + params[i].name, &state.optim.m[i]);
    for (std::size_t i = 0; i < params.size(); ++i) tensors.emplace_back("optim.v." + params[i].name, &state.optim.v[i]);
  }
  w.le(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.le(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.le(static_cast<std::uint32_t>(t->rank()));
    for (std::size_t d : t->shape()) w.le(static_cast<std::uint64_t>(d));
    for (double v : t->data()) w.le(v);
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.bytes(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), kMagic.begin())) throw FormatError("checkpoint: bad magic bytes", 0);
  const std::size_t version_at = r.pos();
  const auto version = r.le<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw UnsupportedVersionError("checkpoint: unsupported version " + std::to_string(version) + " (expected " +
                                      std::to_string(kCheckpointVersion) + ")",
                                  version_at);
  }
  const std::size_t text_len_at = r.pos();
  const auto text_len = r.le<std::uint64_t>("config length");
  if (text_len > r.remaining()) throw FormatError("checkpoint truncated inside config text", text_len_at);
  auto text_bytes = r.bytes(static_cast<std::size_t>(text_len), "config text");
  const std::string text(text_bytes.begin(), text_bytes.end());

  std::map<std::string, std::string> kv;
  try {
    for (auto& e : parse_key_values(text, "checkpoint config")) kv[e.key] = e.value;
  } catch (const ConfigError& e) {
    throw FormatError(e.what(), text_len_at + 8);
  }
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(std::string("checkpoint config lacks key '") + key + "'", text_len_at + 8);
    return it->second;
  };

  AeConfig ae;
  TrainConfig train;
  TrainState state;
  double last_loss = 0.0;
  try {
    ae.height = parse_uint(get("height"), "height");
    ae.width = parse_uint(get("width"), "width");
    ae.channels = parse_uint(get("channels"), "channels");
    ae.encoder_channels = parse_size_list(get("encoder_channels"), "encoder_channels");
    ae.placement = parse_placement(get("placement"));
    ae.lambda = parse_double(get("lambda"), "lambda");
    ae.block.k_prime = parse_uint(get("kprime"), "kprime");
    ae.block.dilation = parse_uint(get("dilation"), "dilation");
    ae.block.reduction = parse_uint(get("reduction"), "reduction");
    ae.block.loss = parse_loss_kind(get("loss"));
    ae.score_mode = parse_score_mode(get("score_mode"));
    ae.w_recon = parse_double(get("w_recon"), "w_recon");
    ae.w_block = parse_double(get("w_block"), "w_block");
    last_loss = parse_double(get("block_last_loss"), "block_last_loss");
    train.epochs = parse_uint(get("epochs"), "epochs");
    train.batch_size = parse_uint(get("batch_size"), "batch_size");
    train.learning_rate = parse_double(get("learning_rate"), "learning_rate");
    train.optimizer = parse_optimizer(get("optimizer"));
    train.beta1 = parse_double(get("beta1"), "beta1");
    train.beta2 = parse_double(get("beta2"), "beta2");
    train.epsilon = parse_double(get("epsilon"), "epsilon");
    train.seed = parse_uint(get("train_seed"), "train_seed");
    state.epochs_done = parse_uint(get("epochs_done"), "epochs_done");
    state.optim.step = parse_uint(get("optim_step"), "optim_step");
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what(), text_len_at + 8);
  }

  AutoEncoder model = [&] {
    try {
      return AutoEncoder::build(ae, 0);
    } catch (const ConfigError& e) {
      throw FormatError(std::string("checkpoint config: ") + e.what(), text_len_at + 8);
    }
  }();
  if (SspcabBlock* block = model.block()) block->last_loss = last_loss;
  auto params = model.parameters();
  std::map<std::string, Tensor*> slots;
  for (auto& p : params) slots[p.name] = p.tensor;

  std::map<std::string, Tensor> optim_tensors;
  std::map<std::string, bool> seen;
  const auto count = r.le<std::uint32_t>("tensor count");
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::size_t record_at = r.pos();
    const auto name_len = r.le<std::uint32_t>("tensor name length");
    auto name_bytes = r.bytes(name_len, "tensor name");
    const std::string name(name_bytes.begin(), name_bytes.end());
    const auto rank = r.le<std::uint32_t>("tensor rank");
    if (rank == 0 || rank > 8) throw FormatError("checkpoint: tensor '" + name + "' has invalid rank", record_at);
    Shape shape;
    std::uint64_t elements = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = r.le<std::uint64_t>("tensor dims");
      if (dim == 0 || elements > r.remaining() / dim) {
        throw FormatError("checkpoint: tensor '" + name + "' has implausible dimensions", record_at);
      }
      elements *= dim;
      shape.push_back(static_cast<std::size_t>(dim));
    }
    if (elements * 8 > r.remaining()) throw FormatError("checkpoint truncated inside tensor '" + name + "'", r.pos());
    std::vector<double> values(static_cast<std::size_t>(elements));
    for (double& v : values) v = r.le<double>("tensor values");
    Tensor tensor(shape, std::move(values));

    if (seen[name]) throw FormatError("checkpoint: duplicate tensor '" + name + "'", record_at);
    seen[name] = true;
    if (auto it = slots.find(name); it != slots.end()) {
      if (it->second->shape() != tensor.shape()) {
        throw FormatError("checkpoint: tensor '" + name + "' has shape " + to_string(tensor.shape()) + ", model expects " +
                              to_string(it->second->shape()),
                          record_at);
      }
      *it->second = std::move(tensor);
    } else if (name.rfind("optim.", 0) == 0) {
      optim_tensors.emplace(name, std::move(tensor));
    } else {
      throw FormatError("checkpoint: unknown tensor '" + name + "'", record_at);
    }
  }
  if (!r.at_end()) throw FormatError("checkpoint: trailing bytes after last tensor", r.pos());
  for (const auto& p : params) {
    if (!seen[p.name]) throw FormatError("checkpoint: missing tensor '" + p.name + "'", r.pos());
  }
  if (!optim_tensors.empty()) {
    for (const auto& p : params) {
      auto m = optim_tensors.find("optim.m." + p.name);
      auto v = optim_tensors.find("optim.v." + p.name);
      if (m == optim_tensors.end() || v == optim_tensors.end() || m->second.shape() != p.tensor->shape() ||
          v->second.shape() != p.tensor->shape()) {
        throw FormatError("checkpoint: optimizer moments for '" + p.name + "' missing or misshapen", r.pos());
      }
      state.optim.m.push_back(std::move(m->second));
      state.optim.v.push_back(std::move(v->second));
    }
  }
  return Checkpoint{std::move(model), train, std::move(state)};
}

void save_checkpoint(const std::filesystem::path& path, const AutoEncoder& model, const TrainConfig& train,
                     const TrainState& state) {
  const auto bytes = encode_checkpoint(model, train, state);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace sspcab
