#include "sspcab/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>

#include "sspcab/errors.hpp"
#include "sspcab/layers.hpp"
#include "sspcab/model.hpp"
#include "sspcab/sspcab_block.hpp"

namespace sspcab {

namespace {

constexpr const char* kOracle = "masked_conv_oracle";
constexpr double kOracleTolerance = 1e-12;

Tensor random_tensor(Shape shape, Rng& rng, double bound = 1.0) {
  Tensor t(std::move(shape));
  fill_uniform(t, rng, bound);
  return t;
}

// Uniform magnitude in [0.1, 1] with a random sign, so no entry sits near the
// ReLU kink.
Tensor away_from_zero(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 1.0);
  return t;
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Everything a probe function reads lives here so the closures can hold raw
// pointers into it for the duration of the check.
struct Instance {
  std::vector<std::unique_ptr<Tensor>> owned;
  std::unique_ptr<AutoEncoder> model;
  std::unique_ptr<SspcabBlock> block;
  std::unique_ptr<ConvParams> conv;
  std::unique_ptr<FcParams> fc;
  std::unique_ptr<SeParams> se;
  std::unique_ptr<MaskedConvParams> masked;
  DifferentiableFn fn;

  Tensor* own(Tensor t) {
    owned.push_back(std::make_unique<Tensor>(std::move(t)));
    return owned.back().get();
  }
};

std::pair<std::size_t, std::size_t> sweep_geometry(std::uint64_t seed) {
  return {1 + seed % 3, (seed / 3) % 3};
}

// f(x) = <R, layer(x)> for a fixed random projection R.
void build_conv(Instance& in, std::uint64_t seed, Rng& rng) {
  const std::size_t stride = 1 + seed % 2;
  in.conv = std::make_unique<ConvParams>(
      ConvParams{random_tensor({3, 3, 3, 2}, rng), random_tensor({3}, rng), stride, 1});
  Tensor* x = in.own(random_tensor({1, 5, 5, 2}, rng));
  const std::size_t out = conv_output_extent(5, 3, stride, 1);
  Tensor* r = in.own(random_tensor({1, out, out, 3}, rng));
  ConvParams* p = in.conv.get();
  in.fn.params = {x, &p->weights, &p->bias};
  in.fn.names = {"x", "weights", "bias"};
  in.fn.value = [=] { return dot(*r, conv2d_forward(*x, *p)); };
  in.fn.gradient = [=] {
    ConvGrads g = conv2d_backward(*x, *p, *r);
    return std::vector<Tensor>{std::move(g.x), std::move(g.weights), std::move(g.bias)};
  };
}

void build_fc(Instance& in, Rng& rng) {
  in.fc = std::make_unique<FcParams>(FcParams{random_tensor({5, 4}, rng), random_tensor({5}, rng), true});
  Tensor* z = in.own(random_tensor({3, 4}, rng));
  Tensor* r = in.own(random_tensor({3, 5}, rng));
  FcParams* p = in.fc.get();
  in.fn.params = {z, &p->weights, &p->bias};
  in.fn.names = {"z", "weights", "bias"};
  in.fn.value = [=] { return dot(*r, fc_forward(*z, *p)); };
  in.fn.gradient = [=] {
    FcGrads g = fc_backward(*z, *p, *r);
    return std::vector<Tensor>{std::move(g.x), std::move(g.weights), std::move(g.bias)};
  };
}

void build_elementwise(Instance& in, const std::string& component, Rng& rng) {
  Tensor* x = in.own(component == "relu" ? away_from_zero({2, 3, 3, 2}, rng) : random_tensor({2, 3, 3, 2}, rng, 2.0));
  const Shape out_shape = component == "upsample" ? Shape{2, 6, 6, 2} : Shape{2, 3, 3, 2};
  Tensor* r = in.own(random_tensor(out_shape, rng));
  in.fn.params = {x};
  in.fn.names = {"x"};
  if (component == "relu") {
    in.fn.value = [=] { return dot(*r, relu_forward(*x)); };
    in.fn.gradient = [=] { return std::vector<Tensor>{relu_backward(*x, *r)}; };
    in.fn.piece = [=] { return hash_signs(*x); };
  } else if (component == "sigmoid") {
    in.fn.value = [=] { return dot(*r, sigmoid_forward(*x)); };
    in.fn.gradient = [=] { return std::vector<Tensor>{sigmoid_backward(sigmoid_forward(*x), *r)}; };
  } else {
    in.fn.value = [=] { return dot(*r, upsample2x_forward(*x)); };
    in.fn.gradient = [=] { return std::vector<Tensor>{upsample2x_backward(*r)}; };
  }
}

void build_masked_conv(Instance& in, std::uint64_t seed, Rng& rng) {
  const auto [kp, d] = sweep_geometry(seed);
  in.masked = std::make_unique<MaskedConvParams>(MaskedConvParams::zeros(2, kp, d));
  fill_uniform(in.masked->sub_kernels, rng, 1.0);
  Tensor* x = in.own(random_tensor({1, 7, 7, 2}, rng));
  Tensor* r = in.own(random_tensor({1, 7, 7, 2}, rng));
  MaskedConvParams* p = in.masked.get();
  in.fn.params = {x, &p->sub_kernels};
  in.fn.names = {"x", "sub_kernels"};
  in.fn.value = [=] { return dot(*r, masked_conv_forward(*x, *p)); };
  in.fn.gradient = [=] {
    MaskedConvGrads g = masked_conv_backward(*x, *p, *r);
    return std::vector<Tensor>{std::move(g.x), std::move(g.sub_kernels)};
  };
}

void build_se(Instance& in, Rng& rng) {
  in.se = std::make_unique<SeParams>(SeParams::zeros(4, 2));
  fill_uniform(in.se->w1.weights, rng, 1.0);
  fill_uniform(in.se->w2.weights, rng, 1.0);
  Tensor* z = in.own(random_tensor({2, 4, 4, 4}, rng));
  Tensor* r = in.own(random_tensor({2, 4, 4, 4}, rng));
  SeParams* p = in.se.get();
  in.fn.params = {z, &p->w1.weights, &p->w2.weights};
  in.fn.names = {"z", "w1", "w2"};
  in.fn.value = [=] { return dot(*r, se_forward(*z, *p).x_hat); };
  in.fn.gradient = [=] {
    SeGrads g = se_backward(se_forward(*z, *p).cache, *p, *r);
    return std::vector<Tensor>{std::move(g.z), std::move(g.w1), std::move(g.w2)};
  };
  in.fn.piece = [=] { return hash_signs(se_forward(*z, *p).cache.hidden_pre); };
}

// The block's own reconstruction loss; x feeds both the block and the target.
void build_sspcab(Instance& in, std::uint64_t seed, Rng& rng) {
  const auto [kp, d] = sweep_geometry(seed);
  const LossKind kind = seed % 4 == 3 ? LossKind::mae : LossKind::mse;
  in.block = std::make_unique<SspcabBlock>(make_sspcab_block(4, SspcabOptions{kp, d, 2, kind}, rng));
  Tensor* x = in.own(random_tensor({1, 7, 7, 4}, rng));
  SspcabBlock* b = in.block.get();
  in.fn.params = {x, &b->conv.sub_kernels, &b->se.w1.weights, &b->se.w2.weights};
  in.fn.names = {"x", "sub_kernels", "w1", "w2"};
  in.fn.value = [=] { return sspcab_loss(sspcab_forward(*x, *b), *x, b->loss); };
  in.fn.gradient = [=] {
    const SspcabForward f = sspcab_forward_cached(*x, *b);
    const Tensor g = sspcab_loss_grad(f.output, *x, b->loss);
    SspcabGrads sg = sspcab_backward(f.cache, *b, g);
    sg.x.add_scaled(g, -1.0);
    return std::vector<Tensor>{std::move(sg.x), std::move(sg.sub_kernels), std::move(sg.w1), std::move(sg.w2)};
  };
  in.fn.piece = [=] {
    const SspcabForward f = sspcab_forward_cached(*x, *b);
    std::uint64_t h = activation_pattern(f.cache);
    if (b->loss == LossKind::mae) {
      Tensor residual = f.output;
      residual.add_scaled(*x, -1.0);
      h = hash_signs(residual, h);
    }
    return h;
  };
}

void build_autoencoder(Instance& in, Placement placement, std::uint64_t seed, Rng& rng) {
  AeConfig cfg;
  cfg.height = 16;
  cfg.width = 16;
  cfg.channels = 1;
  cfg.encoder_channels = {4, 4, 8};
  cfg.placement = placement;
  cfg.lambda = 0.5;
  const auto [kp, d] = sweep_geometry(seed);
  cfg.block = SspcabOptions{kp, d, 4, LossKind::mse};
  in.model = std::make_unique<AutoEncoder>(AutoEncoder::build(cfg, seed));
  Tensor* x = in.own(random_tensor({2, 16, 16, 1}, rng));
  for (double& v : x->data()) v = 0.5 + 0.5 * v;
  AutoEncoder* m = in.model.get();
  // Freshly built biases are zero, which puts every dead receptive field's
  // pre-activation exactly on the ReLU kink; jitter to a generic point.
  for (ParamRef& p : m->parameters()) {
    for (double& v : p.tensor->data()) v += rng.uniform(-0.05, 0.05);
    in.fn.params.push_back(p.tensor);
    in.fn.names.push_back(p.name);
  }
  in.fn.value = [=] { return total_loss(*m, *x).total; };
  in.fn.gradient = [=] { return loss_and_gradients(*m, *x).grads; };
  in.fn.piece = [=] { return activation_pattern(*m, *x); };
}

std::optional<Placement> ae_placement(const std::string& component) {
  if (component.rfind("ae_", 0) != 0) return std::nullopt;
  return parse_placement(component.substr(3));
}

}  // namespace

const std::vector<std::string>& gradcheck_components() {
  static const std::vector<std::string> names{"conv2d",   "fc",      "relu",     "sigmoid",   "upsample",
                                              "masked_conv", "se",   "sspcab",   "ae_none",   "ae_early",
                                              "ae_middle", "ae_late", kOracle};
  return names;
}

GradCheckReport check_component(const std::string& component, std::uint64_t seed, const GradCheckOptions& options,
                                bool inject_fault) {
  Rng rng(seed, 500);
  Instance in;
  GradCheckOptions opts = options;
  if (component == "conv2d") {
    build_conv(in, seed, rng);
  } else if (component == "fc") {
    build_fc(in, rng);
  } else if (component == "relu" || component == "sigmoid" || component == "upsample") {
    build_elementwise(in, component, rng);
  } else if (component == "masked_conv") {
    build_masked_conv(in, seed, rng);
  } else if (component == "se") {
    build_se(in, rng);
  } else if (component == "sspcab") {
    build_sspcab(in, seed, rng);
  } else if (auto placement = ae_placement(component)) {
    build_autoencoder(in, *placement, seed, rng);
    if (opts.max_probes_per_tensor == 0) opts.max_probes_per_tensor = 12;
  } else {
    throw ConfigError("unknown gradient-check component '" + component + "'");
  }
  if (inject_fault) {
    auto exact = in.fn.gradient;
    in.fn.gradient = [exact] {
      std::vector<Tensor> g = exact();
      g.front()[0] += 1.0;
      return g;
    };
  }
  return grad_check(in.fn, opts);
}

double masked_conv_oracle_gap(std::uint64_t seed, bool inject_fault) {
  Rng rng(seed, 600);
  const auto [kp, d] = sweep_geometry(seed);
  const std::size_t c = 1 + rng.below(3);
  MaskedConvParams p = MaskedConvParams::zeros(c, kp, d);
  fill_uniform(p.sub_kernels, rng, 1.0);
  const Tensor x = random_tensor({1 + rng.below(2), 5 + rng.below(6), 5 + rng.below(6), c}, rng);
  Tensor masked = masked_conv_forward(x, p);
  if (inject_fault) masked[0] += 1.0;
  return max_abs_diff(masked, conv2d_forward(x, dense_equivalent_kernel(p)));
}

SuiteReport run_gradcheck_suite(const SuiteOptions& options) {
  if (!options.inject_fault.empty()) {
    const auto& names = gradcheck_components();
    if (std::find(names.begin(), names.end(), options.inject_fault) == names.end()) {
      throw ConfigError("inject_fault: unknown component '" + options.inject_fault + "'");
    }
  }
  SuiteReport report;
  for (const std::string& component : gradcheck_components()) {
    const bool fault = component == options.inject_fault;
    ComponentResult r;
    r.component = component;
    r.tolerance = component == kOracle ? kOracleTolerance : options.check.tolerance;
    for (std::uint64_t s = options.first_seed; s < options.first_seed + options.seeds; ++s) {
      if (component == kOracle) {
        const double gap = masked_conv_oracle_gap(s, fault);
        if (gap > r.worst || s == options.first_seed) {
          r.worst = gap;
          r.worst_seed = s;
          r.worst_param = "output";
        }
        r.passed = r.passed && gap <= r.tolerance;
        continue;
      }
      // Kink straddles are rare but cluster on a few seeds, so their share is
      // capped over the whole sweep rather than per instance.
      GradCheckOptions per_seed = options.check;
      per_seed.max_skipped_fraction = 1.0;
      const GradCheckReport g = check_component(component, s, per_seed, fault);
      r.probes += g.probes;
      r.skipped += g.skipped;
      r.passed = r.passed && g.passed;
      if (g.max_rel_error > r.worst || s == options.first_seed) {
        r.worst = g.max_rel_error;
        r.worst_seed = s;
        for (const ParamCheck& pc : g.params)
          if (pc.max_rel_error == g.max_rel_error) r.worst_param = pc.name;
      }
    }
    if (r.probes > 0 &&
        static_cast<double>(r.skipped) > options.check.max_skipped_fraction * static_cast<double>(r.probes)) {
      r.passed = false;
    }
    report.passed = report.passed && r.passed;
    report.components.push_back(std::move(r));
  }
  return report;
}

}  // namespace sspcab
