#pragma once

#include <optional>
#include <variant>
#include <vector>

#include "sspcab/model.hpp"

namespace sspcab::oracle {

inline double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double concordant = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      pairs += 1.0;
      concordant += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  return concordant / pairs;
}

// Top-k membership by explicit rank: higher score first, earlier index first
// among equal scores.
inline double sweep_ap(const std::vector<double>& s, const std::vector<int>& y) {
  const std::size_t n = s.size();
  std::vector<std::size_t> rank(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (s[j] > s[i] || (s[j] == s[i] && j < i)) ++rank[i];
  double positives = 0.0;
  for (int v : y) positives += v;
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    double tp = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (rank[i] < k && y[i] == 1) tp += 1.0;
    const double recall = tp / positives, precision = tp / static_cast<double>(k);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

// Reverse-mode pass over the public layer primitives, seeded only with the
// output reconstruction loss: the gradient of L_F alone.
inline std::vector<Tensor> reconstruction_only_gradients(const AutoEncoder& model, const Tensor& x) {
  const auto& layers = model.layers();
  std::vector<Tensor> acts{x};
  std::optional<SspcabCache> cache;
  for (const Layer& layer : layers) {
    const Tensor& in = acts.back();
    if (auto* c = std::get_if<ConvLayer>(&layer)) acts.push_back(conv2d_forward(in, c->params));
    if (std::holds_alternative<ReluLayer>(layer)) acts.push_back(relu_forward(in));
    if (std::holds_alternative<UpsampleLayer>(layer)) acts.push_back(upsample2x_forward(in));
    if (auto* s = std::get_if<SspcabLayer>(&layer)) {
      SspcabForward f = sspcab_forward_cached(in, s->block);
      cache = f.cache;
      acts.push_back(f.output);
    }
  }
  std::vector<std::vector<Tensor>> per_layer(layers.size());
  Tensor g = sspcab_loss_grad(acts.back(), x, LossKind::mse);
  for (std::size_t i = layers.size(); i-- > 0;) {
    const Layer& layer = layers[i];
    if (auto* c = std::get_if<ConvLayer>(&layer)) {
      ConvGrads cg = conv2d_backward(acts[i], c->params, g);
      per_layer[i] = {cg.weights, cg.bias};
      g = cg.x;
    }
    if (std::holds_alternative<ReluLayer>(layer)) g = relu_backward(acts[i], g);
    if (std::holds_alternative<UpsampleLayer>(layer)) g = upsample2x_backward(g);
    if (auto* s = std::get_if<SspcabLayer>(&layer)) {
      SspcabGrads sg = sspcab_backward(*cache, s->block, g);
      per_layer[i] = {sg.sub_kernels, sg.w1, sg.w2};
      g = sg.x;
    }
  }
  std::vector<Tensor> out;
  for (auto& v : per_layer)
    for (auto& t : v) out.push_back(std::move(t));
  return out;
}

}  // namespace sspcab::oracle
