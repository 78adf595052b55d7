#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "sspcab/model.hpp"
#include "sspcab/tensor.hpp"

namespace sspcab {

enum class OptimizerKind { sgd, adam };

struct TrainConfig {
  /// Total number of epochs; a resumed run continues up to this count.
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 7;

  void validate() const;
};

/// Adam moments mirror the parameter shapes; both stay empty for SGD.
struct OptimState {
  std::uint64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

struct TrainState {
  OptimState optim;
  std::size_t epochs_done = 0;
};

void optim_step(std::span<Tensor* const> params, std::span<const Tensor> grads, OptimState& state,
                const TrainConfig& cfg);

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  Losses mean;            // sample-weighted mean over the epoch's batches
};

struct TrainLog {
  std::vector<EpochLog> epochs;
};

/// Runs epochs state.epochs_done+1 .. cfg.epochs over `dataset` (N, h, w, c).
/// Each epoch's shuffle depends only on (seed, epoch), so a run resumed from a
/// checkpoint follows the uninterrupted trajectory exactly.
TrainLog fit(AutoEncoder& model, const Tensor& dataset, const TrainConfig& cfg, TrainState& state,
             const std::function<void(const EpochLog&)>& on_epoch = {});

/// Copies the listed samples of `dataset` into one batch tensor.
Tensor gather_batch(const Tensor& dataset, std::span<const std::size_t> indices);

// Checkpoint file layout (little-endian):
//   "SSPC" | u32 version | u64 text length | key=value config text
//   | u32 tensor count | per tensor: u32 name length, name, u32 rank,
//   u64 dims[rank], f64 values[prod(dims)]
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  AutoEncoder model;
  TrainConfig train;
  TrainState state;
};

void save_checkpoint(const std::filesystem::path& path, const AutoEncoder& model, const TrainConfig& train,
                     const TrainState& state);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_checkpoint(const AutoEncoder& model, const TrainConfig& train,
                                            const TrainState& state);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

const char* to_string(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& s);

}  // namespace sspcab
