#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nfnoise/adam.hpp"
#include "nfnoise/dataset.hpp"
#include "nfnoise/flow_model.hpp"

namespace nfnoise::inline NFNOISE_ABI {

/// 0.5 * log(2 pi)
inline constexpr double kHalfLog2Pi = 0.91893853320467274178;

/// Mean over the batch of -[log N(f(n); 0, I) + log|det Df|] / D with
/// D = 3 * H * W. Differentiable. Throws NumericError naming the layer when
/// a layer produces non-finite values, or "loss" for a non-finite result.
Tensor nll_per_dim(const FlowModel& model, const Tensor& noise, const ConditioningContext& ctx);

/// z ~ N(0, I) of the clean patch's shape mapped through the inverse flow.
Tensor sample_noise(const FlowModel& model, const ConditioningContext& ctx, Rng& rng);

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 128;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  std::optional<double> clip_norm;  // global gradient-norm clip, off by default
  std::size_t eval_interval = 1;    // validate every n epochs and after the last
  std::size_t eval_batch = 256;

  /// Throws ConfigError unless epochs, batch sizes and the interval are
  /// positive and lr is positive and finite.
  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_nll = 0;
  double val_nll = 0;
  double val_dkl = 0;
  std::vector<double> sampled_std;  // per cell; NaN where the cell is absent
  bool evaluated = false;
  double wall_seconds = 0;
};

struct TrainRunLog {
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  double best_val_nll = 0;
};

struct TrainOutputs {
  /// Directory for init.nfck, best.nfck, last.nfck; empty for none.
  std::filesystem::path checkpoint_dir;
  std::function<void(const EpochLog&)> on_epoch;
};

/// Shuffled mini-batch Adam on the train split with validation after each
/// interval. The best validation checkpoint is kept and restored into
/// `model` at the end. Fully deterministic given cfg.seed. On a non-finite
/// loss or gradient the last good parameters are written to last.nfck and
/// NumericError is thrown.
TrainRunLog train(FlowModel& model, const Dataset& data, const TrainConfig& cfg, const TrainOutputs& outputs = {});

/// CSV with columns epoch, train_nll, val_nll, val_dkl and one sampled-std
/// column per cell ("std_c{camera}_iso{iso}"). Wall time is not included so
/// that logs of identical runs are byte-identical.
void write_run_log(const std::filesystem::path& path, const TrainRunLog& log, const DatasetManifest& manifest);
/// epoch, wall_seconds
void write_timing(const std::filesystem::path& path, const TrainRunLog& log);

/// Shortest representation that parses back to the same double.
std::string format_number(double v);

}  // namespace nfnoise::inline NFNOISE_ABI
