#include "sspcab/sspcab_block.hpp"

#include <array>
#include <cmath>

#include "sspcab/errors.hpp"

namespace sspcab {

namespace {

constexpr std::array<Corner, 4> kCorners = {Corner::top_left, Corner::top_right, Corner::bottom_left,
                                            Corner::bottom_right};

bool is_top(Corner c) { return c == Corner::top_left || c == Corner::top_right; }
bool is_left(Corner c) { return c == Corner::top_left || c == Corner::bottom_left; }

// Offset of a corner patch's first row (or column) relative to the centre.
std::ptrdiff_t corner_offset(bool leading, const MaskedConvParams& p) {
  return leading ? -static_cast<std::ptrdiff_t>(p.k_prime + p.dilation) : static_cast<std::ptrdiff_t>(p.dilation + 1);
}

void check_masked(const Tensor& x, const MaskedConvParams& p) {
  require_rank4(x, "masked_conv");
  const Shape expected{p.channels, 4, p.k_prime, p.k_prime, p.channels};
  if (p.sub_kernels.shape() != expected) {
    throw ShapeError("masked_conv: sub_kernels " + to_string(p.sub_kernels.shape()) + " do not match expected " +
                     to_string(expected));
  }
  if (x.dim(3) != p.channels) {
    throw ShapeError("masked_conv: input " + to_string(x.shape()) + " has " + std::to_string(x.dim(3)) +
                     " channels but sub_kernels " + to_string(p.sub_kernels.shape()) + " expect " +
                     std::to_string(p.channels));
  }
}

// Visits every (output cell, corner tap, input cell) triple of the masked
// convolution. `fn(out_offset, in_offset, corner_index, row, col)`.
template <typename Fn>
void for_each_tap(const Tensor& x, const MaskedConvParams& p, Fn&& fn) {
  const auto n = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto kp = p.k_prime;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t out_off = x.offset(b, i, j, 0);
        for (std::size_t ci = 0; ci < 4; ++ci) {
          const Corner corner = kCorners[ci];
          const std::ptrdiff_t r0 = static_cast<std::ptrdiff_t>(i) + corner_offset(is_top(corner), p);
          const std::ptrdiff_t c0 = static_cast<std::ptrdiff_t>(j) + corner_offset(is_left(corner), p);
          for (std::size_t a = 0; a < kp; ++a) {
            const std::ptrdiff_t ii = r0 + static_cast<std::ptrdiff_t>(a);
            if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t bb = 0; bb < kp; ++bb) {
              const std::ptrdiff_t jj = c0 + static_cast<std::ptrdiff_t>(bb);
              if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(w)) continue;
              fn(out_off, x.offset(b, static_cast<std::size_t>(ii), static_cast<std::size_t>(jj), 0), ci, a, bb);
            }
          }
        }
      }
}

}  // namespace

MaskedConvParams MaskedConvParams::zeros(std::size_t channels, std::size_t k_prime, std::size_t dilation) {
  if (channels == 0 || k_prime == 0) throw ConfigError("masked_conv: channels and k' must be >= 1");
  return MaskedConvParams{k_prime, dilation, channels, Tensor({channels, 4, k_prime, k_prime, channels})};
}

double& MaskedConvParams::weight(std::size_t out, Corner corner, std::size_t row, std::size_t col, std::size_t in) {
  return sub_kernels[(((out * 4 + static_cast<std::size_t>(corner)) * k_prime + row) * k_prime + col) * channels + in];
}

double MaskedConvParams::weight(std::size_t out, Corner corner, std::size_t row, std::size_t col,
                                std::size_t in) const {
  return sub_kernels[(((out * 4 + static_cast<std::size_t>(corner)) * k_prime + row) * k_prime + col) * channels + in];
}

SeParams SeParams::zeros(std::size_t channels, std::size_t reduction) {
  if (reduction == 0 || channels % reduction != 0) {
    throw ConfigError("SE: channel count " + std::to_string(channels) + " is not divisible by reduction ratio " +
                      std::to_string(reduction));
  }
  const std::size_t squeezed = channels / reduction;
  SeParams p;
  p.reduction = reduction;
  p.w1.weights = Tensor({squeezed, channels});
  p.w2.weights = Tensor({channels, squeezed});
  return p;
}

SspcabBlock make_sspcab_block(std::size_t channels, const SspcabOptions& options, Rng& rng) {
  SspcabBlock block;
  block.conv = MaskedConvParams::zeros(channels, options.k_prime, options.dilation);
  block.se = SeParams::zeros(channels, options.reduction);
  block.loss = options.loss;
  fill_uniform(block.conv.sub_kernels, rng,
               1.0 / std::sqrt(static_cast<double>(4 * options.k_prime * options.k_prime * channels)));
  fill_uniform(block.se.w1.weights, rng, 1.0 / std::sqrt(static_cast<double>(channels)));
  fill_uniform(block.se.w2.weights, rng, 1.0 / std::sqrt(static_cast<double>(channels / options.reduction)));
  return block;
}

Tensor masked_conv_forward(const Tensor& x, const MaskedConvParams& p) {
  check_masked(x, p);
  const std::size_t c = p.channels, kp = p.k_prime;
  // (corner, row, col, c_in, c_out) for contiguous accumulation over outputs.
  std::vector<double> wt(p.sub_kernels.size());
  for (std::size_t co = 0; co < c; ++co)
    for (std::size_t t = 0; t < 4 * kp * kp; ++t)
      for (std::size_t ci = 0; ci < c; ++ci) wt[(t * c + ci) * c + co] = p.sub_kernels[(co * 4 * kp * kp + t) * c + ci];

  Tensor out = Tensor::zeros_like(x);
  for_each_tap(x, p, [&](std::size_t out_off, std::size_t in_off, std::size_t corner, std::size_t a, std::size_t b) {
    double* o = out.raw() + out_off;
    const double* xin = x.raw() + in_off;
    const double* wk = &wt[((corner * kp + a) * kp + b) * c * c];
    for (std::size_t ci = 0; ci < c; ++ci) {
      const double xv = xin[ci];
      if (xv == 0.0) continue;
      const double* wrow = wk + ci * c;
      for (std::size_t co = 0; co < c; ++co) o[co] += xv * wrow[co];
    }
  });
  return out;
}

MaskedConvGrads masked_conv_backward(const Tensor& x, const MaskedConvParams& p, const Tensor& grad_out) {
  check_masked(x, p);
  require_same_shape(grad_out, x, "masked_conv_backward");
  const std::size_t c = p.channels, kp = p.k_prime;
  MaskedConvGrads g{Tensor::zeros_like(x), Tensor::zeros_like(p.sub_kernels)};
  for_each_tap(x, p, [&](std::size_t out_off, std::size_t in_off, std::size_t corner, std::size_t a, std::size_t b) {
    const double* go = grad_out.raw() + out_off;
    const double* xin = x.raw() + in_off;
    double* gx = g.x.raw() + in_off;
    for (std::size_t co = 0; co < c; ++co) {
      const double gv = go[co];
      if (gv == 0.0) continue;
      const std::size_t woff = (((co * 4 + corner) * kp + a) * kp + b) * c;
      const double* wrow = p.sub_kernels.raw() + woff;
      double* gw = g.sub_kernels.raw() + woff;
      for (std::size_t ci = 0; ci < c; ++ci) {
        gx[ci] += gv * wrow[ci];
        gw[ci] += gv * xin[ci];
      }
    }
  });
  return g;
}

ConvParams dense_equivalent_kernel(const MaskedConvParams& p) {
  const std::size_t k = p.receptive_field(), kp = p.k_prime, c = p.channels;
  ConvParams dense{Tensor({c, k, k, c}), Tensor({c}), 1, p.padding()};
  for (std::size_t co = 0; co < c; ++co)
    for (Corner corner : kCorners) {
      const std::size_t r0 = is_top(corner) ? 0 : k - kp;
      const std::size_t c0 = is_left(corner) ? 0 : k - kp;
      for (std::size_t a = 0; a < kp; ++a)
        for (std::size_t b = 0; b < kp; ++b)
          for (std::size_t ci = 0; ci < c; ++ci)
            dense.weights[((co * k + r0 + a) * k + c0 + b) * c + ci] = p.weight(co, corner, a, b, ci);
    }
  return dense;
}

SeForward se_forward(const Tensor& z, const SeParams& p) {
  require_rank4(z, "se_forward");
  const std::size_t n = z.dim(0), h = z.dim(1), w = z.dim(2), c = z.dim(3);
  if (c != p.channels() || p.w2.out_dim() != c) {
    throw ShapeError("se_forward: input " + to_string(z.shape()) + " incompatible with W1 " +
                     to_string(p.w1.weights.shape()) + " / W2 " + to_string(p.w2.weights.shape()));
  }
  SeForward f;
  f.cache.z = z;
  f.cache.pooled = Tensor({n, c});
  const double inv_area = 1.0 / static_cast<double>(h * w);
  for (std::size_t b = 0; b < n; ++b) {
    double* pooled = &f.cache.pooled[b * c];
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const double* zz = &z.at(b, i, j, 0);
        for (std::size_t ch = 0; ch < c; ++ch) pooled[ch] += zz[ch];
      }
    for (std::size_t ch = 0; ch < c; ++ch) pooled[ch] *= inv_area;
  }
  f.cache.hidden_pre = fc_forward(f.cache.pooled, p.w1);
  f.cache.scale = sigmoid_forward(fc_forward(relu_forward(f.cache.hidden_pre), p.w2));

  f.x_hat = z;
  for (std::size_t b = 0; b < n; ++b) {
    const double* s = &f.cache.scale[b * c];
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        double* xh = &f.x_hat.at(b, i, j, 0);
        for (std::size_t ch = 0; ch < c; ++ch) xh[ch] *= s[ch];
      }
  }
  return f;
}

SeGrads se_backward(const SeCache& cache, const SeParams& p, const Tensor& grad_out) {
  require_same_shape(grad_out, cache.z, "se_backward");
  const Tensor& z = cache.z;
  const std::size_t n = z.dim(0), h = z.dim(1), w = z.dim(2), c = z.dim(3);

  Tensor grad_scale({n, c});
  SeGrads g;
  g.z = grad_out;
  for (std::size_t b = 0; b < n; ++b) {
    const double* s = &cache.scale[b * c];
    double* gs = &grad_scale[b * c];
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t off = z.offset(b, i, j, 0);
        for (std::size_t ch = 0; ch < c; ++ch) {
          gs[ch] += grad_out[off + ch] * z[off + ch];
          g.z[off + ch] *= s[ch];
        }
      }
  }

  const Tensor grad_logits = sigmoid_backward(cache.scale, grad_scale);
  const Tensor hidden = relu_forward(cache.hidden_pre);
  FcGrads g2 = fc_backward(hidden, p.w2, grad_logits);
  const Tensor grad_hidden_pre = relu_backward(cache.hidden_pre, g2.x);
  FcGrads g1 = fc_backward(cache.pooled, p.w1, grad_hidden_pre);
  g.w1 = std::move(g1.weights);
  g.w2 = std::move(g2.weights);

  // The pooling path spreads each channel's gradient uniformly over the map.
  const double inv_area = 1.0 / static_cast<double>(h * w);
  for (std::size_t b = 0; b < n; ++b) {
    const double* gp = &g1.x[b * c];
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        double* gz = &g.z.at(b, i, j, 0);
        for (std::size_t ch = 0; ch < c; ++ch) gz[ch] += gp[ch] * inv_area;
      }
  }
  return g;
}

SspcabForward sspcab_forward_cached(const Tensor& x, const SspcabBlock& block) {
  if (block.se.channels() != block.conv.channels) {
    throw ShapeError("sspcab: masked conv has " + std::to_string(block.conv.channels) + " channels but SE has " +
                     std::to_string(block.se.channels()));
  }
  SspcabForward f;
  f.cache.x = x;
  f.cache.conv_out = masked_conv_forward(x, block.conv);
  SeForward se = se_forward(relu_forward(f.cache.conv_out), block.se);
  f.output = std::move(se.x_hat);
  f.cache.se = std::move(se.cache);
  return f;
}

Tensor sspcab_forward(const Tensor& x, const SspcabBlock& block) { return sspcab_forward_cached(x, block).output; }

std::uint64_t activation_pattern(const SspcabCache& cache, std::uint64_t hash) {
  return hash_signs(cache.se.hidden_pre, hash_signs(cache.conv_out, hash));
}

SspcabGrads sspcab_backward(const SspcabCache& cache, const SspcabBlock& block, const Tensor& grad_out) {
  SeGrads se = se_backward(cache.se, block.se, grad_out);
  const Tensor grad_conv = relu_backward(cache.conv_out, se.z);
  MaskedConvGrads mc = masked_conv_backward(cache.x, block.conv, grad_conv);
  return SspcabGrads{std::move(mc.x), std::move(mc.sub_kernels), std::move(se.w1), std::move(se.w2)};
}

double sspcab_loss(const Tensor& x_hat, const Tensor& x, LossKind kind) {
  require_same_shape(x_hat, x, "sspcab_loss");
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = x_hat[i] - x[i];
    sum += kind == LossKind::mse ? r * r : std::abs(r);
  }
  return sum / static_cast<double>(x.size());
}

Tensor sspcab_loss_grad(const Tensor& x_hat, const Tensor& x, LossKind kind) {
  require_same_shape(x_hat, x, "sspcab_loss_grad");
  Tensor g = Tensor::zeros_like(x);
  const double inv = 1.0 / static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = x_hat[i] - x[i];
    if (kind == LossKind::mse) {
      g[i] = 2.0 * r * inv;
    } else {
      g[i] = r > 0.0 ? inv : (r < 0.0 ? -inv : 0.0);
    }
  }
  return g;
}

}  // namespace sspcab
