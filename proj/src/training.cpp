#include "nfnoise/training.hpp"

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "nfnoise/error.hpp"
#include "nfnoise/metrics.hpp"
#include "nfnoise/ops.hpp"

namespace nfnoise::inline NFNOISE_ABI {

Tensor nll_per_dim(const FlowModel& model, const Tensor& noise, const ConditioningContext& ctx) {
  const auto out = model.forward(noise, ctx);
  const double count = static_cast<double>(noise.numel());
  const Tensor quad = sum(square(out.y)) * real(0.5);
  const Tensor loss = (quad - sum(out.logdet)) * static_cast<real>(1.0 / count) + static_cast<real>(kHalfLog2Pi);
  if (!std::isfinite(loss.item())) throw NumericError("loss: non-finite NLL");
  return loss;
}

Tensor sample_noise(const FlowModel& model, const ConditioningContext& ctx, Rng& rng) {
  NoGradGuard guard;
  const Tensor z = Tensor::randn(ctx.clean.shape(), rng);
  Tensor x = model.inverse(z, ctx);
  require_finite(x, "sampled noise");
  return x;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1 || eval_batch < 1) throw ConfigError("batch size must be at least 1");
  if (eval_interval < 1) throw ConfigError("eval_interval must be at least 1");
  if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
  if (clip_norm && !(*clip_norm > 0)) throw ConfigError("clip_norm must be positive");
}

namespace {

bool grads_finite(const std::vector<Tensor>& params) {
  for (const auto& p : params) {
    for (auto g : p.grad()) {
      if (!std::isfinite(g)) return false;
    }
  }
  return true;
}

}  // namespace

TrainRunLog train(FlowModel& model, const Dataset& data, const TrainConfig& cfg, const TrainOutputs& outputs) {
  cfg.validate();
  if (data.train.empty()) throw DataError("training split is empty");
  if (data.val.empty()) throw DataError("validation split is empty");
  const auto& dir = outputs.checkpoint_dir;
  const bool write = !dir.empty();
  if (write) {
    std::filesystem::create_directories(dir);
    save_checkpoint(dir / "init.nfck", model.state());
  }

  std::vector<Tensor> params = model.parameters();
  AdamConfig adam;
  adam.lr = static_cast<real>(cfg.lr);
  AdamState state = make_adam_state(params, adam);
  Rng rng(derive_seed(cfg.seed, 1));
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainRunLog log;
  log.best_val_nll = std::numeric_limits<double>::infinity();
  auto best_state = model.state();

  auto abort = [&](const std::string& why, std::size_t epoch) {
    if (write) save_checkpoint(dir / "last.nfck", model.state());
    throw NumericError(why + " (epoch " + std::to_string(epoch) + ")");
  };

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    rng.shuffle(std::span<std::size_t>(order));
    EpochLog entry;
    entry.epoch = epoch;
    double total = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      const auto batch =
          make_batch(data.train, std::span<const std::size_t>(order).subspan(start, n), data.manifest, rng);
      for (auto& p : params) p.zero_grad();
      Tensor loss;
      try {
        loss = nll_per_dim(model, batch.noise, batch.ctx);
      } catch (const NumericError& e) {
        abort(e.what(), epoch);
      }
      loss.backward();
      if (!grads_finite(params)) abort("non-finite gradient", epoch);
      if (cfg.clip_norm) clip_grad_norm(params, *cfg.clip_norm);
      adam_step(params, state);
      total += static_cast<double>(loss.item()) * static_cast<double>(n);
    }
    entry.train_nll = total / static_cast<double>(order.size());

    if (epoch % cfg.eval_interval == 0 || epoch == cfg.epochs) {
      EvalResult eval;
      try {
        eval = eval_model(model, data.val, data.manifest, {cfg.eval_batch, derive_seed(cfg.seed, 2)});
      } catch (const NumericError& e) {
        abort(e.what(), epoch);
      }
      entry.evaluated = true;
      entry.val_nll = eval.nll_per_dim;
      entry.val_dkl = eval.d_kl;
      for (const auto& c : eval.cells) {
        entry.sampled_std.push_back(c.present ? c.sampled_std : std::numeric_limits<double>::quiet_NaN());
      }
      if (entry.val_nll < log.best_val_nll) {
        log.best_val_nll = entry.val_nll;
        log.best_epoch = epoch;
        best_state = model.state();
        if (write) save_checkpoint(dir / "best.nfck", best_state);
      }
    }
    if (write) save_checkpoint(dir / "last.nfck", model.state());
    entry.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    log.epochs.push_back(entry);
    if (outputs.on_epoch) outputs.on_epoch(entry);
  }
  model.load_state(best_state);
  return log;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "";
  return fmt::format("{}", v);
}

void write_run_log(const std::filesystem::path& path, const TrainRunLog& log, const DatasetManifest& manifest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "epoch,train_nll,val_nll,val_dkl";
  for (std::size_t cell = 0; cell < manifest.n_cells(); ++cell) out << ",std_" << cell_label(manifest, cell);
  out << '\n';
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& e : log.epochs) {
    out << e.epoch << ',' << format_number(e.train_nll) << ',' << format_number(e.evaluated ? e.val_nll : nan) << ','
        << format_number(e.evaluated ? e.val_dkl : nan);
    for (std::size_t cell = 0; cell < manifest.n_cells(); ++cell) {
      out << ',' << format_number(cell < e.sampled_std.size() ? e.sampled_std[cell] : nan);
    }
    out << '\n';
  }
  if (!out) throw DataError("write failed for " + path.string());
}

void write_timing(const std::filesystem::path& path, const TrainRunLog& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "epoch,wall_seconds\n";
  for (const auto& e : log.epochs) out << e.epoch << ',' << format_number(e.wall_seconds) << '\n';
}

}  // namespace nfnoise::inline NFNOISE_ABI
