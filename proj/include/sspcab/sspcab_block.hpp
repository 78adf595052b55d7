#pragma once

#include <cstddef>

#include "sspcab/layers.hpp"
#include "sspcab/tensor.hpp"

namespace sspcab {

enum class LossKind { mse, mae };

/// Corner order of the four learnable sub-kernels inside the receptive field.
enum class Corner : std::size_t { top_left = 0, top_right = 1, bottom_left = 2, bottom_right = 3 };

/// Masked dilated convolution. Only the four k'×k' corner patches of the
/// k×k receptive field carry weights; the centre cell is never read.
/// `sub_kernels` is laid out (c_out, corner, k', k', c_in) with c_out = c_in.
struct MaskedConvParams {
  std::size_t k_prime = 1;
  std::size_t dilation = 1;
  std::size_t channels = 1;
  Tensor sub_kernels;

  static MaskedConvParams zeros(std::size_t channels, std::size_t k_prime, std::size_t dilation);

  /// k = 2k' + 2d + 1.
  std::size_t receptive_field() const { return 2 * k_prime + 2 * dilation + 1; }
  /// Zero padding that keeps the output the size of the input.
  std::size_t padding() const { return k_prime + dilation; }
  double& weight(std::size_t out, Corner corner, std::size_t row, std::size_t col, std::size_t in);
  double weight(std::size_t out, Corner corner, std::size_t row, std::size_t col, std::size_t in) const;
};

/// Squeeze-and-excitation: W1 is (c/r, c), W2 is (c, c/r), no biases.
struct SeParams {
  std::size_t reduction = 8;
  FcParams w1;
  FcParams w2;

  static SeParams zeros(std::size_t channels, std::size_t reduction);
  std::size_t channels() const { return w1.in_dim(); }
};

struct SspcabOptions {
  std::size_t k_prime = 1;
  std::size_t dilation = 1;
  std::size_t reduction = 8;
  LossKind loss = LossKind::mse;
};

struct SspcabBlock {
  MaskedConvParams conv;
  SeParams se;
  LossKind loss = LossKind::mse;
  /// Most recent reconstruction loss of this block, written by the trainer.
  double last_loss = 0.0;

  std::size_t channels() const { return conv.channels; }
};

/// Validates the options against the channel count and draws parameters from
/// U(±1/sqrt(fan_in)).
SspcabBlock make_sspcab_block(std::size_t channels, const SspcabOptions& options, Rng& rng);

Tensor masked_conv_forward(const Tensor& x, const MaskedConvParams& p);

struct MaskedConvGrads {
  Tensor x;
  Tensor sub_kernels;
};

MaskedConvGrads masked_conv_backward(const Tensor& x, const MaskedConvParams& p, const Tensor& grad_out);

/// The equivalent dense k×k convolution (zero outside the corner patches,
/// padding k'+d, stride 1, zero bias).
ConvParams dense_equivalent_kernel(const MaskedConvParams& p);

struct SeCache {
  Tensor z;
  Tensor pooled;      // (n, c) spatial means
  Tensor hidden_pre;  // (n, c/r)
  Tensor scale;       // (n, c), each entry in (0, 1)
};

struct SeForward {
  Tensor x_hat;
  SeCache cache;
};

SeForward se_forward(const Tensor& z, const SeParams& p);

struct SeGrads {
  Tensor z;
  Tensor w1;
  Tensor w2;
};

SeGrads se_backward(const SeCache& cache, const SeParams& p, const Tensor& grad_out);

struct SspcabCache {
  Tensor x;
  Tensor conv_out;  // masked convolution before ReLU
  SeCache se;
};

struct SspcabForward {
  Tensor output;
  SspcabCache cache;
};

/// G(x) = SE(ReLU(masked_conv(x))).
SspcabForward sspcab_forward_cached(const Tensor& x, const SspcabBlock& block);
Tensor sspcab_forward(const Tensor& x, const SspcabBlock& block);

struct SspcabGrads {
  Tensor x;
  Tensor sub_kernels;
  Tensor w1;
  Tensor w2;
};

/// Hash of the block's ReLU sign patterns (masked conv output and SE
/// bottleneck); constant while the block stays on one smooth piece.
std::uint64_t activation_pattern(const SspcabCache& cache, std::uint64_t hash = 0xcbf29ce484222325ULL);

SspcabGrads sspcab_backward(const SspcabCache& cache, const SspcabBlock& block, const Tensor& grad_out);

/// Mean of (x_hat - x)^2 over all cells, or mean |x_hat - x| for LossKind::mae.
double sspcab_loss(const Tensor& x_hat, const Tensor& x, LossKind kind = LossKind::mse);
/// Gradient of sspcab_loss with respect to x_hat; the gradient with respect
/// to x is its negation.
Tensor sspcab_loss_grad(const Tensor& x_hat, const Tensor& x, LossKind kind = LossKind::mse);

}  // namespace sspcab
