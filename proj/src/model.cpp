#include "sspcab/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sspcab/errors.hpp"

namespace sspcab {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

// Seed streams per layer slot.
constexpr std::uint64_t kEncoderStream = 0;
constexpr std::uint64_t kDecoderStream = 100;
constexpr std::uint64_t kOutputStream = 200;
constexpr std::uint64_t kBlockStream = 300;

ConvLayer make_conv(std::string name, std::size_t in, std::size_t out, std::size_t stride, double bound, Rng rng) {
  ConvLayer layer{std::move(name), ConvParams{Tensor({out, 3, 3, in}), Tensor({out}), stride, 1}};
  fill_uniform(layer.params.weights, rng, bound);
  return layer;
}

double he_bound(std::size_t fan_in) { return std::sqrt(6.0 / static_cast<double>(fan_in)); }

}  // namespace

void AeConfig::validate() const {
  if (encoder_channels.empty()) throw ConfigError("encoder_channels must not be empty");
  for (std::size_t c : encoder_channels)
    if (c == 0) throw ConfigError("encoder_channels entries must be >= 1");
  if (channels == 0 || height == 0 || width == 0) throw ConfigError("input dimensions must be >= 1");
  const std::size_t factor = std::size_t{1} << encoder_channels.size();
  if (height % factor != 0 || width % factor != 0) {
    throw ConfigError("input " + std::to_string(height) + "x" + std::to_string(width) + " must be a multiple of " +
                      std::to_string(factor) + " for " + std::to_string(encoder_channels.size()) +
                      " stride-2 stages");
  }
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be a finite non-negative number");
  if (!(w_recon >= 0.0) || !(w_block >= 0.0)) throw ConfigError("score combiner weights must be non-negative");
  if (w_block > 0.0 && placement == Placement::none) {
    throw ConfigError("w_block > 0 requires an SSPCAB block (placement is none)");
  }
  if (block.k_prime == 0) throw ConfigError("k' must be >= 1");
  if (placement != Placement::none) {
    const std::size_t c = placement == Placement::middle ? encoder_channels.back() : encoder_channels.front();
    if (block.reduction == 0 || c % block.reduction != 0) {
      throw ConfigError("SSPCAB at placement " + std::string(to_string(placement)) + " sees " + std::to_string(c) +
                        " channels, not divisible by reduction ratio " + std::to_string(block.reduction));
    }
  }
}

AutoEncoder AutoEncoder::build(const AeConfig& config, std::uint64_t seed) {
  config.validate();
  AutoEncoder model;
  model.config_ = config;
  auto& layers = model.layers_;
  const auto& enc = config.encoder_channels;
  const std::size_t depth = enc.size();

  auto add_block = [&](std::size_t channels) {
    Rng rng(seed, kBlockStream);
    layers.emplace_back(SspcabLayer{make_sspcab_block(channels, config.block, rng)});
  };

  for (std::size_t i = 0; i < depth; ++i) {
    const std::size_t in = i == 0 ? config.channels : enc[i - 1];
    layers.emplace_back(make_conv("enc" + std::to_string(i), in, enc[i], 2, he_bound(9 * in),
                                  Rng(seed, kEncoderStream + i)));
    layers.emplace_back(ReluLayer{});
    if (i == 0 && config.placement == Placement::early) add_block(enc[0]);
  }
  if (config.placement == Placement::middle) add_block(enc.back());

  for (std::size_t i = 0; i < depth; ++i) {
    const std::size_t in = enc[depth - 1 - i];
    const std::size_t out = i + 1 < depth ? enc[depth - 2 - i] : enc[0];
    layers.emplace_back(UpsampleLayer{});
    if (i + 1 == depth && config.placement == Placement::late) {
      add_block(out);
    } else {
      layers.emplace_back(make_conv("dec" + std::to_string(i), in, out, 1, he_bound(9 * in),
                                    Rng(seed, kDecoderStream + i)));
      layers.emplace_back(ReluLayer{});
    }
  }
  layers.emplace_back(make_conv("out", enc[0], config.channels, 1, 1.0 / std::sqrt(9.0 * static_cast<double>(enc[0])),
                                Rng(seed, kOutputStream)));
  return model;
}

void AutoEncoder::set_scoring(ScoreMode mode, double w_recon, double w_block) {
  AeConfig next = config_;
  next.score_mode = mode;
  next.w_recon = w_recon;
  next.w_block = w_block;
  next.validate();
  config_ = next;
}

std::vector<ParamRef> AutoEncoder::parameters() {
  std::vector<ParamRef> out;
  for (Layer& layer : layers_) {
    std::visit(Overloaded{[&](ConvLayer& c) {
                            out.push_back({c.name + ".weight", &c.params.weights});
                            out.push_back({c.name + ".bias", &c.params.bias});
                          },
                          [&](SspcabLayer& s) {
                            out.push_back({"sspcab.sub_kernels", &s.block.conv.sub_kernels});
                            out.push_back({"sspcab.w1", &s.block.se.w1.weights});
                            out.push_back({"sspcab.w2", &s.block.se.w2.weights});
                          },
                          [](auto&) {}},
               layer);
  }
  return out;
}

std::vector<ConstParamRef> AutoEncoder::parameters() const {
  std::vector<ConstParamRef> out;
  for (ParamRef& p : const_cast<AutoEncoder*>(this)->parameters()) out.push_back({std::move(p.name), p.tensor});
  return out;
}

std::size_t AutoEncoder::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor->size();
  return n;
}

std::optional<std::size_t> AutoEncoder::block_index() const {
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (std::holds_alternative<SspcabLayer>(layers_[i])) return i;
  return std::nullopt;
}

SspcabBlock* AutoEncoder::block() {
  auto idx = block_index();
  return idx ? &std::get<SspcabLayer>(layers_[*idx]).block : nullptr;
}

const SspcabBlock* AutoEncoder::block() const { return const_cast<AutoEncoder*>(this)->block(); }

namespace {

struct Trace {
  std::vector<Tensor> acts;  // acts[i] is the input of layer i; acts.back() the output
  std::optional<SspcabCache> block_cache;
};

Trace run_forward(const AutoEncoder& model, const Tensor& x) {
  const AeConfig& cfg = model.config();
  require_rank4(x, "ae_forward");
  const Shape expected{x.dim(0), cfg.height, cfg.width, cfg.channels};
  if (x.shape() != expected) {
    throw ShapeError("ae_forward: input " + to_string(x.shape()) + " does not match configured (n, " +
                     std::to_string(cfg.height) + ", " + std::to_string(cfg.width) + ", " +
                     std::to_string(cfg.channels) + ")");
  }
  Trace t;
  t.acts.reserve(model.layers().size() + 1);
  t.acts.push_back(x);
  for (const Layer& layer : model.layers()) {
    const Tensor& in = t.acts.back();
    Tensor out = std::visit(Overloaded{[&](const ConvLayer& c) { return conv2d_forward(in, c.params); },
                                       [&](const ReluLayer&) { return relu_forward(in); },
                                       [&](const UpsampleLayer&) { return upsample2x_forward(in); },
                                       [&](const SspcabLayer& s) {
                                         SspcabForward f = sspcab_forward_cached(in, s.block);
                                         t.block_cache = std::move(f.cache);
                                         return std::move(f.output);
                                       }},
                            layer);
    t.acts.push_back(std::move(out));
  }
  return t;
}

double mse(const Tensor& a, const Tensor& b) { return sspcab_loss(a, b, LossKind::mse); }

}  // namespace

AeForward ae_forward(const AutoEncoder& model, const Tensor& x) {
  Trace t = run_forward(model, x);
  AeForward f;
  if (auto idx = model.block_index()) {
    f.block_input = t.acts[*idx];
    f.block_output = t.acts[*idx + 1];
  }
  f.output = std::move(t.acts.back());
  return f;
}

Losses total_loss(const AutoEncoder& model, const Tensor& x) {
  const AeForward f = ae_forward(model, x);
  Losses l;
  l.reconstruction = mse(f.output, x);
  if (const SspcabBlock* block = model.block()) l.block = sspcab_loss(f.block_output, f.block_input, block->loss);
  l.total = l.reconstruction + model.config().lambda * l.block;
  return l;
}

LossGradients loss_and_gradients(const AutoEncoder& model, const Tensor& x) {
  Trace t = run_forward(model, x);
  const double lambda = model.config().lambda;
  const auto& layers = model.layers();

  LossGradients result;
  result.losses.reconstruction = mse(t.acts.back(), x);

  // Gradient slots per layer, in parameters() order.
  std::vector<std::size_t> first_slot(layers.size());
  std::size_t slots = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    first_slot[i] = slots;
    if (std::holds_alternative<ConvLayer>(layers[i])) slots += 2;
    if (std::holds_alternative<SspcabLayer>(layers[i])) slots += 3;
  }
  result.grads.resize(slots);

  Tensor g = sspcab_loss_grad(t.acts.back(), x, LossKind::mse);
  for (std::size_t i = layers.size(); i-- > 0;) {
    const Tensor& in = t.acts[i];
    std::visit(Overloaded{[&](const ConvLayer& c) {
                            ConvGrads cg = conv2d_backward(in, c.params, g);
                            result.grads[first_slot[i]] = std::move(cg.weights);
                            result.grads[first_slot[i] + 1] = std::move(cg.bias);
                            g = std::move(cg.x);
                          },
                          [&](const ReluLayer&) { g = relu_backward(in, g); },
                          [&](const UpsampleLayer&) { g = upsample2x_backward(g); },
                          [&](const SspcabLayer& s) {
                            const Tensor& out = t.acts[i + 1];
                            result.losses.block = sspcab_loss(out, in, s.block.loss);
                            Tensor block_grad;
                            if (lambda != 0.0) {
                              block_grad = sspcab_loss_grad(out, in, s.block.loss);
                              g.add_scaled(block_grad, lambda);
                            }
                            SspcabGrads sg = sspcab_backward(*t.block_cache, s.block, g);
                            if (lambda != 0.0) sg.x.add_scaled(block_grad, -lambda);
                            result.grads[first_slot[i]] = std::move(sg.sub_kernels);
                            result.grads[first_slot[i] + 1] = std::move(sg.w1);
                            result.grads[first_slot[i] + 2] = std::move(sg.w2);
                            g = std::move(sg.x);
                          }},
               layers[i]);
  }
  result.losses.total = result.losses.reconstruction + lambda * result.losses.block;
  return result;
}

std::uint64_t activation_pattern(const AutoEncoder& model, const Tensor& x) {
  const Trace t = run_forward(model, x);
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < model.layers().size(); ++i)
    if (std::holds_alternative<ReluLayer>(model.layers()[i])) hash = hash_signs(t.acts[i], hash);
  if (t.block_cache) hash = activation_pattern(*t.block_cache, hash);
  return hash;
}

Tensor channel_mean_sq_error(const Tensor& a, const Tensor& b) {
  require_rank4(a, "channel_mean_sq_error");
  require_same_shape(a, b, "channel_mean_sq_error");
  const std::size_t n = a.dim(0), h = a.dim(1), w = a.dim(2), c = a.dim(3);
  Tensor m({n, h, w});
  for (std::size_t p = 0; p < n * h * w; ++p) {
    double s = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double r = a[p * c + ch] - b[p * c + ch];
      s += r * r;
    }
    m[p] = s / static_cast<double>(c);
  }
  return m;
}

Tensor bilinear_resize(const Tensor& maps, std::size_t height, std::size_t width) {
  if (maps.rank() != 3) throw ShapeError("bilinear_resize: expected (n, h, w), got " + to_string(maps.shape()));
  const std::size_t n = maps.dim(0), h = maps.dim(1), w = maps.dim(2);
  if (h == height && w == width) return maps;
  Tensor out({n, height, width});
  auto source = [](std::size_t dst, std::size_t in, std::size_t out_extent, std::size_t& i0, std::size_t& i1,
                   double& frac) {
    double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(out_extent) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    i0 = static_cast<std::size_t>(std::floor(s));
    i1 = std::min(i0 + 1, in - 1);
    frac = s - static_cast<double>(i0);
  };
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < height; ++i) {
      std::size_t r0, r1;
      double fr;
      source(i, h, height, r0, r1, fr);
      for (std::size_t j = 0; j < width; ++j) {
        std::size_t c0, c1;
        double fc;
        source(j, w, width, c0, c1, fc);
        auto v = [&](std::size_t r, std::size_t c) { return maps[(b * h + r) * w + c]; };
        const double top = v(r0, c0) * (1.0 - fc) + v(r0, c1) * fc;
        const double bottom = v(r1, c0) * (1.0 - fc) + v(r1, c1) * fc;
        out[(b * height + i) * width + j] = top * (1.0 - fr) + bottom * fr;
      }
    }
  return out;
}

Tensor anomaly_map(const AutoEncoder& model, const Tensor& x) {
  const AeConfig& cfg = model.config();
  if (cfg.w_block > 0.0 && !model.block()) {
    throw ConfigError("anomaly_map: w_block > 0 requires an SSPCAB block");
  }
  const AeForward f = ae_forward(model, x);
  Tensor map = channel_mean_sq_error(f.output, x);
  for (double& v : map.data()) v *= cfg.w_recon;
  if (cfg.w_block > 0.0) {
    const Tensor block = bilinear_resize(channel_mean_sq_error(f.block_output, f.block_input), cfg.height, cfg.width);
    map.add_scaled(block, cfg.w_block);
  }
  return map;
}

double frame_score(const Tensor& map, ScoreMode mode) {
  if (map.rank() != 2) throw ShapeError("frame_score: expected an (h, w) map, got " + to_string(map.shape()));
  const std::size_t h = map.dim(0), w = map.dim(1);
  if (mode == ScoreMode::mean) {
    double s = 0.0;
    for (double v : map.data()) s += v;
    return s / static_cast<double>(map.size());
  }
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      double s = 0.0;
      for (std::size_t di = 0; di < 3; ++di)
        for (std::size_t dj = 0; dj < 3; ++dj) {
          const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i + di) - 1;
          const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j + dj) - 1;
          if (ii < 0 || jj < 0 || ii >= static_cast<std::ptrdiff_t>(h) || jj >= static_cast<std::ptrdiff_t>(w)) continue;
          s += map[static_cast<std::size_t>(ii) * w + static_cast<std::size_t>(jj)];
        }
      best = std::max(best, s / 9.0);
    }
  return best;
}

const char* to_string(Placement p) {
  switch (p) {
    case Placement::none: return "none";
    case Placement::early: return "early";
    case Placement::middle: return "middle";
    case Placement::late: return "late";
  }
  return "?";
}

const char* to_string(ScoreMode m) { return m == ScoreMode::mean ? "mean" : "max"; }
const char* to_string(LossKind k) { return k == LossKind::mse ? "mse" : "mae"; }

Placement parse_placement(const std::string& s) {
  if (s == "none") return Placement::none;
  if (s == "early") return Placement::early;
  if (s == "middle") return Placement::middle;
  if (s == "late") return Placement::late;
  throw ConfigError("placement must be one of none, early, middle, late; got '" + s + "'");
}

ScoreMode parse_score_mode(const std::string& s) {
  if (s == "mean") return ScoreMode::mean;
  if (s == "max") return ScoreMode::max;
  throw ConfigError("score mode must be mean or max; got '" + s + "'");
}

LossKind parse_loss_kind(const std::string& s) {
  if (s == "mse") return LossKind::mse;
  if (s == "mae") return LossKind::mae;
  throw ConfigError("loss must be mse or mae; got '" + s + "'");
}

}  // namespace sspcab
