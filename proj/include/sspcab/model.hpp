#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "sspcab/layers.hpp"
#include "sspcab/sspcab_block.hpp"
#include "sspcab/tensor.hpp"

namespace sspcab {

/// Where the SSPCAB block sits in the auto-encoder.
///  - early:  after the first encoder convolution + ReLU
///  - middle: at the bottleneck, after the last encoder convolution + ReLU
///  - late:   replaces the penultimate (last decoder) convolution + ReLU
enum class Placement { none, early, middle, late };
enum class ScoreMode { mean, max };

struct AeConfig {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 1;
  std::vector<std::size_t> encoder_channels{16, 32, 64};
  Placement placement = Placement::late;
  double lambda = 0.1;
  SspcabOptions block;
  ScoreMode score_mode = ScoreMode::mean;
  double w_recon = 1.0;
  double w_block = 0.0;

  /// Throws ConfigError describing the first violated constraint.
  void validate() const;
};

struct ConvLayer {
  std::string name;
  ConvParams params;
};
struct ReluLayer {};
struct UpsampleLayer {};
struct SspcabLayer {
  SspcabBlock block;
};

using Layer = std::variant<ConvLayer, ReluLayer, UpsampleLayer, SspcabLayer>;

struct ParamRef {
  std::string name;
  Tensor* tensor;
};

struct ConstParamRef {
  std::string name;
  const Tensor* tensor;
};

/// Encoder: [conv 3×3 stride 2, ReLU] per entry of encoder_channels.
/// Decoder: mirrored [upsample 2×, conv 3×3, ReLU] stages, then a linear
/// 3×3 convolution back to the input channel count.
class AutoEncoder {
 public:
  /// Deterministic in (config, seed). Each layer draws from its own seeded
  /// stream, so layers shared between placements start identical.
  static AutoEncoder build(const AeConfig& config, std::uint64_t seed);

  const AeConfig& config() const noexcept { return config_; }
  /// Inference-time scoring knobs may change after training.
  void set_scoring(ScoreMode mode, double w_recon, double w_block);

  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::vector<Layer>& layers() noexcept { return layers_; }

  std::vector<ParamRef> parameters();
  std::vector<ConstParamRef> parameters() const;
  std::size_t parameter_count() const;

  std::optional<std::size_t> block_index() const;
  SspcabBlock* block();
  const SspcabBlock* block() const;

 private:
  AeConfig config_;
  std::vector<Layer> layers_;
};

struct AeForward {
  Tensor output;
  /// Empty when the model has no SSPCAB block.
  Tensor block_input;
  Tensor block_output;
};

AeForward ae_forward(const AutoEncoder& model, const Tensor& x);

struct Losses {
  double total = 0.0;
  double reconstruction = 0.0;  // L_F
  double block = 0.0;           // L_SSPCAB
};

/// L_total = L_F + λ·L_SSPCAB with L_F the MSE between reconstruction and input.
Losses total_loss(const AutoEncoder& model, const Tensor& x);

struct LossGradients {
  Losses losses;
  /// One tensor per entry of AutoEncoder::parameters(), same order.
  std::vector<Tensor> grads;
};

LossGradients loss_and_gradients(const AutoEncoder& model, const Tensor& x);

/// Hash of every ReLU sign pattern in a forward pass over `x`.
std::uint64_t activation_pattern(const AutoEncoder& model, const Tensor& x);

/// Per-pixel anomaly map of shape (n, h, w):
/// w_recon · channel-mean squared reconstruction error
/// + w_block · channel-mean squared block error, resized bilinearly to (h, w).
Tensor anomaly_map(const AutoEncoder& model, const Tensor& x);

/// Channel-mean squared error between two (n, h, w, c) tensors, shape (n, h, w).
Tensor channel_mean_sq_error(const Tensor& a, const Tensor& b);

/// Bilinear resize of an (n, h, w) stack with half-pixel centres.
Tensor bilinear_resize(const Tensor& maps, std::size_t height, std::size_t width);

/// Scalar score of an (h, w) map: spatial mean, or the maximum after a
/// zero-padded 3×3 box mean.
double frame_score(const Tensor& map, ScoreMode mode);

const char* to_string(Placement p);
const char* to_string(ScoreMode m);
const char* to_string(LossKind k);
Placement parse_placement(const std::string& s);
ScoreMode parse_score_mode(const std::string& s);
LossKind parse_loss_kind(const std::string& s);

}  // namespace sspcab
