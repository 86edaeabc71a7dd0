#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <vector>

#include "nfnoise/dataset.hpp"

namespace nfnoise::inline NFNOISE_ABI {

/// Controllable stand-in for a camera pipeline. Raw noise is N(0, b1 * x + b2)
/// per (camera, ISO) cell; clean and noisy raw values then go through white
/// balance gains, a color matrix, clipping to [0,1], a tone curve
/// (1 - k) v + k (3v^2 - 2v^3), gamma v^(1/gamma) and 8-bit quantization.
struct SynthIspConfig {
  std::size_t n_cam = 5;
  std::vector<std::uint32_t> iso_values{100, 200, 400, 800, 1600};
  std::vector<double> beta1;  // per cell, index camera * n_iso + iso index
  std::vector<double> beta2;
  std::array<double, 3> wb_gains{1.0, 1.0, 1.0};
  std::array<double, 9> color_matrix{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major
  double gamma = 1.0;
  double tone = 0.0;  // k in [0,1]
  std::size_t patch = 32;
  std::size_t n_per_cell = 200;
  double texture_lo = 0.02;  // range of target clean intensities
  double texture_hi = 0.98;
  std::uint64_t seed = 0;

  std::size_t n_iso() const { return iso_values.size(); }
  std::size_t n_cells() const { return n_cam * n_iso(); }
  /// Throws ConfigError for negative betas, color-matrix rows not summing to
  /// one, a singular matrix, gamma <= 0, tone outside [0,1], and so on.
  void validate() const;
};

/// Default grid: nonlinear pipeline (gamma 2.2, tone 0.3, non-diagonal color
/// matrix, unequal gains); raw variance grows with ISO and camera index.
SynthIspConfig default_synth_config(std::size_t n_cam = 5, std::size_t n_iso = 5);
/// Identity pipeline with zero signal dependence and per-cell std `sigma`.
SynthIspConfig awgn_config(const std::vector<double>& sigma, std::size_t n_cam, std::size_t n_iso);

nlohmann::json to_json(const SynthIspConfig& cfg);
/// Strict: unknown keys throw ConfigError. Omitted keys keep defaults.
SynthIspConfig synth_config_from_json(const nlohmann::json& j);

/// Raw RGB -> display value in [0,1] before quantization.
std::array<double, 3> isp_forward(const SynthIspConfig& cfg, const std::array<double, 3>& raw);
/// Inverse of isp_forward for display values inside (0,1).
std::array<double, 3> isp_inverse(const SynthIspConfig& cfg, const std::array<double, 3>& display);
/// floor(256 v) clamped to [0,255].
std::uint8_t quantize(double v);

/// Raw value whose processed clean pixel sits at the center of `code`.
std::array<double, 3> raw_for_codes(const SynthIspConfig& cfg, const std::array<std::uint8_t, 3>& codes);

/// Exact P(noisy code | clean code) for one channel. Needs an identity color
/// matrix so that channels do not mix (ConfigError otherwise).
double code_probability(const SynthIspConfig& cfg, std::size_t cell, std::size_t channel, std::uint8_t clean,
                        std::uint8_t noisy);

/// Mean negative log-density per dimension of dequantized noise under the
/// true generator, evaluated on `records`: mean(-log P(q | c)) - log 256.
double true_nll_per_dim(const SynthIspConfig& cfg, std::span<const NoisePatchRecord> records);

/// Generates n_per_cell records per cell, cell by cell in parallel on up to
/// `threads` workers (0 = hardware concurrency). Bit-reproducible for a seed.
std::vector<NoisePatchRecord> synth_isp_records(const SynthIspConfig& cfg, unsigned threads = 0);

/// Generates and splits (train_frac, seeded by cfg.seed) in memory.
Dataset synth_isp_dataset(const SynthIspConfig& cfg, double train_frac = 0.8, unsigned threads = 0);

/// Generates, splits (train_frac, seeded by cfg.seed) and writes a dataset to
/// `dir`, including the generator config as synth_config.json.
Dataset synth_isp_generate(const SynthIspConfig& cfg, const std::filesystem::path& dir, double train_frac = 0.8,
                           unsigned threads = 0);

}  // namespace nfnoise::inline NFNOISE_ABI
