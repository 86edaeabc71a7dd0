#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "nfnoise/dataset.hpp"
#include "nfnoise/flow_model.hpp"

namespace nfnoise::inline NFNOISE_ABI {

/// Real and sampled noise histograms on a shared uniform grid over [-1, 1).
/// Values outside the range are counted in the end bins.
struct HistogramPair {
  double lo = -1.0;
  double hi = 1.0;
  std::vector<std::uint64_t> counts_real;
  std::vector<std::uint64_t> counts_sampled;
  double smoothing_eps = 1e-6;

  std::size_t bins() const { return counts_real.size(); }
  /// Index of the bin holding v (clamped to the end bins).
  std::size_t bin_of(double v) const;
};

HistogramPair make_histograms(std::span<const real> real_noise, std::span<const real> sampled_noise,
                              std::size_t n_bins = 256, double smoothing_eps = 1e-6);

/// sum_i p_i log(p_i / q_i) over histograms with `smoothing_eps` added to
/// every bin before normalizing.
double kl_divergence(const HistogramPair& h);

/// D_KL(real || sampled) with the default binning. Throws DataError for
/// empty inputs.
double marginal_kl(std::span<const real> real_noise, std::span<const real> sampled_noise, std::size_t n_bins = 256,
                   double smoothing_eps = 1e-6);

struct CellStats {
  bool present = false;
  std::size_t patches = 0;
  double real_std = 0;
  double sampled_std = 0;
};

struct EvalResult {
  double nll_per_dim = 0;
  double d_kl = 0;
  std::vector<CellStats> cells;  // indexed by cell
};

struct EvalOptions {
  std::size_t batch = 256;
  std::uint64_t seed = 0;
};

/// NLL/dim on dequantized noise, D_KL against one sampled patch per real
/// patch at the same context, and per-cell std (all channels pooled) of real
/// and sampled noise. Cells without records are marked absent.
EvalResult eval_model(const FlowModel& model, std::span<const NoisePatchRecord> records,
                      const DatasetManifest& manifest, const EvalOptions& options = {});

struct IntensityBin {
  double lo = 0;
  double hi = 0;
  std::size_t count = 0;
  double mean_intensity = 0;
  double variance = 0;
  bool reliable = false;
};

struct IntensityVarianceCurve {
  std::size_t cell = 0;
  std::size_t channel = 0;
  std::vector<IntensityBin> bins;
};

/// Per-bin sample variance of noise against clean intensity over [0, 1).
/// Bins with fewer than `min_count` samples are flagged unreliable. Throws
/// DataError for empty or mismatched input.
IntensityVarianceCurve variance_vs_intensity(std::span<const real> clean, std::span<const real> noise,
                                             std::size_t n_bins = 64, std::size_t min_count = 100);

/// Dequantized (clean, noise) values of one channel of one cell.
struct ChannelSamples {
  std::vector<real> clean;
  std::vector<real> noise;
};

ChannelSamples channel_samples(std::span<const NoisePatchRecord> records, const DatasetManifest& manifest,
                               std::size_t cell, std::size_t channel, Rng& rng);
/// Same clean patches, with noise sampled from `model`.
ChannelSamples sampled_channel_samples(const FlowModel& model, std::span<const NoisePatchRecord> records,
                                       const DatasetManifest& manifest, std::size_t cell, std::size_t channel,
                                       Rng& rng);

struct LinearFit {
  double slope = 0;
  double intercept = 0;
  double r2 = 0;
};

/// Least squares of variance on mean intensity over reliable bins.
LinearFit fit_linear(const IntensityVarianceCurve& curve);
/// max / min variance over reliable bins; infinity if the minimum is zero.
double variance_ratio(const IntensityVarianceCurve& curve);

void write_curve_csv(const std::filesystem::path& path, const IntensityVarianceCurve& curve);

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Minimal SVG line plot with axes and a legend.
void write_svg_plot(const std::filesystem::path& path, const std::vector<PlotSeries>& series,
                    const std::string& title, const std::string& x_label, const std::string& y_label);

/// "c{camera}_iso{iso}"
std::string cell_label(const DatasetManifest& manifest, std::size_t cell);

}  // namespace nfnoise::inline NFNOISE_ABI
