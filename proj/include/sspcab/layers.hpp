#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

#include "sspcab/tensor.hpp"

namespace sspcab {

/// Weights are laid out (c_out, kh, kw, c_in); padding is zeros on all four sides.
struct ConvParams {
  Tensor weights;
  Tensor bias;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_channels() const { return weights.dim(0); }
  std::size_t kernel_h() const { return weights.dim(1); }
  std::size_t kernel_w() const { return weights.dim(2); }
  std::size_t in_channels() const { return weights.dim(3); }
};

struct ConvGrads {
  Tensor x;
  Tensor weights;
  Tensor bias;
};

/// Output spatial extent of a convolution: floor((in + 2*pad - k) / stride) + 1.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding);

Tensor conv2d_forward(const Tensor& x, const ConvParams& p);
ConvGrads conv2d_backward(const Tensor& x, const ConvParams& p, const Tensor& grad_out);

/// Fully connected map out = W z. Weights are (out_dim, in_dim); the bias is
/// only read when `use_bias` is set.
struct FcParams {
  Tensor weights;
  Tensor bias;
  bool use_bias = false;

  std::size_t out_dim() const { return weights.dim(0); }
  std::size_t in_dim() const { return weights.dim(1); }
};

struct FcGrads {
  Tensor x;
  Tensor weights;
  Tensor bias;  // empty unless use_bias
};

Tensor fc_forward(const Tensor& z, const FcParams& p);
FcGrads fc_backward(const Tensor& z, const FcParams& p, const Tensor& grad_out);

Tensor relu_forward(const Tensor& x);
/// `x` is the forward input; cells with x > 0 pass the gradient through.
Tensor relu_backward(const Tensor& x, const Tensor& grad_out);

Tensor sigmoid_forward(const Tensor& x);
/// `y` is the forward output; dy/dx = y (1 - y).
Tensor sigmoid_backward(const Tensor& y, const Tensor& grad_out);

/// Nearest-neighbour 2x upsampling of (n, h, w, c) to (n, 2h, 2w, c).
Tensor upsample2x_forward(const Tensor& x);
/// Sums each 2x2 block of `grad_out` back into its source cell.
Tensor upsample2x_backward(const Tensor& grad_out);

/// Portable seeded generator: identical draws on every platform, unlike the
/// std distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, std::uint64_t stream);

  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();

 private:
  std::mt19937_64 engine_;
};

/// Fills `t` with draws from U(-bound, bound).
void fill_uniform(Tensor& t, Rng& rng, double bound);

}  // namespace sspcab
