#include "sspcab/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "sspcab/errors.hpp"

namespace sspcab {

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (stride == 0) throw ConfigError("convolution stride must be >= 1");
  if (in + 2 * padding < kernel) {
    throw ShapeError("convolution kernel extent " + std::to_string(kernel) + " exceeds padded input extent " +
                     std::to_string(in + 2 * padding));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

namespace {

void check_conv(const Tensor& x, const ConvParams& p) {
  require_rank4(x, "conv2d");
  if (p.weights.rank() != 4) {
    throw ShapeError("conv2d: weights must be (c_out, kh, kw, c_in), got " + to_string(p.weights.shape()));
  }
  if (x.dim(3) != p.in_channels()) {
    throw ShapeError("conv2d: input " + to_string(x.shape()) + " has " + std::to_string(x.dim(3)) +
                     " channels but weights " + to_string(p.weights.shape()) + " expect " +
                     std::to_string(p.in_channels()));
  }
  if (p.bias.shape() != Shape{p.out_channels()}) {
    throw ShapeError("conv2d: bias " + to_string(p.bias.shape()) + " does not match c_out of weights " +
                     to_string(p.weights.shape()));
  }
}

}  // namespace

Tensor conv2d_forward(const Tensor& x, const ConvParams& p) {
  check_conv(x, p);
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3);
  const std::size_t kh = p.kernel_h(), kw = p.kernel_w(), cout = p.out_channels();
  const std::size_t oh = conv_output_extent(h, kh, p.stride, p.padding);
  const std::size_t ow = conv_output_extent(w, kw, p.stride, p.padding);

  // (kh, kw, c_in, c_out) so the innermost loop runs contiguously over outputs.
  std::vector<double> wt(p.weights.size());
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t k = 0; k < kh * kw; ++k)
      for (std::size_t ci = 0; ci < cin; ++ci) wt[(k * cin + ci) * cout + co] = p.weights[(co * kh * kw + k) * cin + ci];

  Tensor out({n, oh, ow, cout});
  const double* bias = p.bias.raw();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        double* o = &out.at(b, i, j, 0);
        std::copy(bias, bias + cout, o);
        for (std::size_t ki = 0; ki < kh; ++ki) {
          const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i * p.stride + ki) - static_cast<std::ptrdiff_t>(p.padding);
          if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kj = 0; kj < kw; ++kj) {
            const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j * p.stride + kj) - static_cast<std::ptrdiff_t>(p.padding);
            if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(w)) continue;
            const double* xin = &x.at(b, static_cast<std::size_t>(ii), static_cast<std::size_t>(jj), 0);
            const double* wk = &wt[(ki * kw + kj) * cin * cout];
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const double xv = xin[ci];
              if (xv == 0.0) continue;
              const double* wrow = wk + ci * cout;
              for (std::size_t co = 0; co < cout; ++co) o[co] += xv * wrow[co];
            }
          }
        }
      }
    }
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor& x, const ConvParams& p, const Tensor& grad_out) {
  check_conv(x, p);
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3);
  const std::size_t kh = p.kernel_h(), kw = p.kernel_w(), cout = p.out_channels();
  const std::size_t oh = conv_output_extent(h, kh, p.stride, p.padding);
  const std::size_t ow = conv_output_extent(w, kw, p.stride, p.padding);
  if (grad_out.shape() != Shape{n, oh, ow, cout}) {
    throw ShapeError("conv2d_backward: grad_out " + to_string(grad_out.shape()) + " does not match output shape " +
                     to_string({n, oh, ow, cout}));
  }

  ConvGrads g{Tensor::zeros_like(x), Tensor::zeros_like(p.weights), Tensor::zeros_like(p.bias)};
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        const double* go = &grad_out.at(b, i, j, 0);
        for (std::size_t co = 0; co < cout; ++co) g.bias[co] += go[co];
        for (std::size_t ki = 0; ki < kh; ++ki) {
          const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i * p.stride + ki) - static_cast<std::ptrdiff_t>(p.padding);
          if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kj = 0; kj < kw; ++kj) {
            const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j * p.stride + kj) - static_cast<std::ptrdiff_t>(p.padding);
            if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(w)) continue;
            const std::size_t xoff = x.offset(b, static_cast<std::size_t>(ii), static_cast<std::size_t>(jj), 0);
            const double* xin = x.raw() + xoff;
            double* gx = g.x.raw() + xoff;
            for (std::size_t co = 0; co < cout; ++co) {
              const double gv = go[co];
              if (gv == 0.0) continue;
              const std::size_t woff = ((co * kh + ki) * kw + kj) * cin;
              const double* wrow = p.weights.raw() + woff;
              double* gw = g.weights.raw() + woff;
              for (std::size_t ci = 0; ci < cin; ++ci) {
                gx[ci] += gv * wrow[ci];
                gw[ci] += gv * xin[ci];
              }
            }
          }
        }
      }
    }
  }
  return g;
}

namespace {

void check_fc(const Tensor& z, const FcParams& p) {
  if (p.weights.rank() != 2) {
    throw ShapeError("fc: weights must be (out_dim, in_dim), got " + to_string(p.weights.shape()));
  }
  if (z.rank() != 2 || z.dim(1) != p.in_dim()) {
    throw ShapeError("fc: input " + to_string(z.shape()) + " incompatible with weights " +
                     to_string(p.weights.shape()));
  }
  if (p.use_bias && p.bias.shape() != Shape{p.out_dim()}) {
    throw ShapeError("fc: bias " + to_string(p.bias.shape()) + " does not match weights " +
                     to_string(p.weights.shape()));
  }
}

}  // namespace

Tensor fc_forward(const Tensor& z, const FcParams& p) {
  check_fc(z, p);
  const std::size_t n = z.dim(0), in = p.in_dim(), out_dim = p.out_dim();
  Tensor out({n, out_dim});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t o = 0; o < out_dim; ++o) {
      double acc = p.use_bias ? p.bias[o] : 0.0;
      for (std::size_t i = 0; i < in; ++i) acc += p.weights[o * in + i] * z[b * in + i];
      out[b * out_dim + o] = acc;
    }
  }
  return out;
}

FcGrads fc_backward(const Tensor& z, const FcParams& p, const Tensor& grad_out) {
  check_fc(z, p);
  const std::size_t n = z.dim(0), in = p.in_dim(), out_dim = p.out_dim();
  if (grad_out.shape() != Shape{n, out_dim}) {
    throw ShapeError("fc_backward: grad_out " + to_string(grad_out.shape()) + " does not match output shape " +
                     to_string({n, out_dim}));
  }
  FcGrads g{Tensor::zeros_like(z), Tensor::zeros_like(p.weights), p.use_bias ? Tensor({out_dim}) : Tensor()};
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t o = 0; o < out_dim; ++o) {
      const double gv = grad_out[b * out_dim + o];
      if (p.use_bias) g.bias[o] += gv;
      for (std::size_t i = 0; i < in; ++i) {
        g.weights[o * in + i] += gv * z[b * in + i];
        g.x[b * in + i] += gv * p.weights[o * in + i];
      }
    }
  }
  return g;
}

Tensor relu_forward(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
  require_same_shape(x, grad_out, "relu_backward");
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(x[i] > 0.0)) g[i] = 0.0;
  return g;
}

Tensor sigmoid_forward(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data()) v = 1.0 / (1.0 + std::exp(-v));
  return y;
}

Tensor sigmoid_backward(const Tensor& y, const Tensor& grad_out) {
  require_same_shape(y, grad_out, "sigmoid_backward");
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= y[i] * (1.0 - y[i]);
  return g;
}

Tensor upsample2x_forward(const Tensor& x) {
  require_rank4(x, "upsample2x");
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  Tensor y({n, 2 * h, 2 * w, c});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < 2 * h; ++i)
      for (std::size_t j = 0; j < 2 * w; ++j) {
        const double* src = &x.at(b, i / 2, j / 2, 0);
        std::copy(src, src + c, &y.at(b, i, j, 0));
      }
  return y;
}

Tensor upsample2x_backward(const Tensor& grad_out) {
  require_rank4(grad_out, "upsample2x_backward");
  if (grad_out.dim(1) % 2 != 0 || grad_out.dim(2) % 2 != 0) {
    throw ShapeError("upsample2x_backward: spatial dims of " + to_string(grad_out.shape()) + " must be even");
  }
  const std::size_t n = grad_out.dim(0), h = grad_out.dim(1) / 2, w = grad_out.dim(2) / 2, c = grad_out.dim(3);
  Tensor g({n, h, w, c});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        double* dst = &g.at(b, i, j, 0);
        for (std::size_t di = 0; di < 2; ++di)
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const double* src = &grad_out.at(b, 2 * i + di, 2 * j + dj, 0);
            for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
          }
      }
  return g;
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  engine_.seed(seq);
}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::below(std::uint64_t n) {
  if (n <= 1) return 0;
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v;
  do v = engine_();
  while (v >= limit);
  return v % n;
}

double Rng::normal() {
  // Box-Muller; 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void fill_uniform(Tensor& t, Rng& rng, double bound) {
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
}

}  // namespace sspcab
