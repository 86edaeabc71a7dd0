#include "nfnoise/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "nfnoise/error.hpp"
#include "nfnoise/training.hpp"

namespace nfnoise::inline NFNOISE_ABI {

namespace {

/// Running mean and variance in double.
struct Moments {
  std::size_t n = 0;
  double mean = 0;
  double m2 = 0;

  void add(double x) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
  double population_std() const { return n ? std::sqrt(m2 / static_cast<double>(n)) : 0.0; }
  double sample_variance() const { return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0; }
};

std::vector<std::size_t> cell_members(std::span<const NoisePatchRecord> records, const DatasetManifest& manifest,
                                      std::size_t cell) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (manifest.cell_index(records[i].camera, records[i].iso) == cell) out.push_back(i);
  }
  if (out.empty()) throw DataError("no records for cell " + cell_label(manifest, cell));
  return out;
}

/// Channel `channel` of every patch in a [N,3,H,W] tensor, appended to out.
void append_channel(const Tensor& t, std::size_t channel, std::vector<real>& out) {
  const std::size_t n = t.size(0), plane = t.size(2) * t.size(3);
  const auto v = t.values();
  for (std::size_t b = 0; b < n; ++b) {
    const auto first = v.begin() + static_cast<std::ptrdiff_t>((b * 3 + channel) * plane);
    out.insert(out.end(), first, first + static_cast<std::ptrdiff_t>(plane));
  }
}

}  // namespace

std::size_t HistogramPair::bin_of(double v) const {
  const double width = (hi - lo) / static_cast<double>(bins());
  const double k = std::floor((v - lo) / width);
  if (!(k >= 0)) return 0;  // also catches NaN
  return std::min(static_cast<std::size_t>(k), bins() - 1);
}

HistogramPair make_histograms(std::span<const real> real_noise, std::span<const real> sampled_noise,
                              std::size_t n_bins, double smoothing_eps) {
  if (real_noise.empty() || sampled_noise.empty()) throw DataError("marginal_kl: empty sample set");
  if (n_bins == 0) throw ConfigError("marginal_kl: need at least one bin");
  HistogramPair h;
  h.smoothing_eps = smoothing_eps;
  h.counts_real.assign(n_bins, 0);
  h.counts_sampled.assign(n_bins, 0);
  for (auto v : real_noise) ++h.counts_real[h.bin_of(v)];
  for (auto v : sampled_noise) ++h.counts_sampled[h.bin_of(v)];
  return h;
}

double kl_divergence(const HistogramPair& h) {
  const auto total = [&](const std::vector<std::uint64_t>& c) {
    return static_cast<double>(std::accumulate(c.begin(), c.end(), std::uint64_t{0})) +
           h.smoothing_eps * static_cast<double>(c.size());
  };
  const double zp = total(h.counts_real), zq = total(h.counts_sampled);
  double kl = 0;
  for (std::size_t i = 0; i < h.bins(); ++i) {
    const double p = (static_cast<double>(h.counts_real[i]) + h.smoothing_eps) / zp;
    const double q = (static_cast<double>(h.counts_sampled[i]) + h.smoothing_eps) / zq;
    kl += p * std::log(p / q);
  }
  return std::max(kl, 0.0);
}

double marginal_kl(std::span<const real> real_noise, std::span<const real> sampled_noise, std::size_t n_bins,
                   double smoothing_eps) {
  return kl_divergence(make_histograms(real_noise, sampled_noise, n_bins, smoothing_eps));
}

EvalResult eval_model(const FlowModel& model, std::span<const NoisePatchRecord> records,
                      const DatasetManifest& manifest, const EvalOptions& options) {
  if (records.empty()) throw DataError("evaluation split is empty");
  if (options.batch == 0) throw ConfigError("evaluation batch must be at least 1");
  NoGradGuard guard;
  Rng rng(options.seed);
  std::vector<Moments> real_m(manifest.n_cells()), sampled_m(manifest.n_cells());
  std::vector<std::size_t> patches(manifest.n_cells(), 0);
  std::vector<real> real_all, sampled_all;
  double nll_total = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < records.size(); start += options.batch) {
    const std::size_t n = std::min(options.batch, records.size() - start);
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), start);
    const auto batch = make_batch(records, idx, manifest, rng);
    nll_total += static_cast<double>(nll_per_dim(model, batch.noise, batch.ctx).item()) * static_cast<double>(n);
    const Tensor sampled = sample_noise(model, batch.ctx, rng);
    const std::size_t per = batch.noise.numel() / n;
    const auto rv = batch.noise.values(), sv = sampled.values();
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t cell = batch.cells[b];
      ++patches[cell];
      for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
        real_m[cell].add(rv[i]);
        sampled_m[cell].add(sv[i]);
      }
    }
    real_all.insert(real_all.end(), rv.begin(), rv.end());
    sampled_all.insert(sampled_all.end(), sv.begin(), sv.end());
  }
  EvalResult result;
  result.nll_per_dim = nll_total / static_cast<double>(records.size());
  result.d_kl = marginal_kl(real_all, sampled_all);
  result.cells.resize(manifest.n_cells());
  for (std::size_t c = 0; c < manifest.n_cells(); ++c) {
    auto& s = result.cells[c];
    s.present = patches[c] > 0;
    s.patches = patches[c];
    s.real_std = real_m[c].population_std();
    s.sampled_std = sampled_m[c].population_std();
  }
  return result;
}

IntensityVarianceCurve variance_vs_intensity(std::span<const real> clean, std::span<const real> noise,
                                             std::size_t n_bins, std::size_t min_count) {
  if (clean.empty()) throw DataError("variance_vs_intensity: no samples");
  if (clean.size() != noise.size()) throw DataError("variance_vs_intensity: clean and noise sizes differ");
  if (n_bins == 0) throw ConfigError("variance_vs_intensity: need at least one bin");
  std::vector<Moments> noise_m(n_bins), clean_m(n_bins);
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const double k = std::floor(static_cast<double>(clean[i]) * static_cast<double>(n_bins));
    const std::size_t b = std::min(static_cast<std::size_t>(std::max(k, 0.0)), n_bins - 1);
    noise_m[b].add(noise[i]);
    clean_m[b].add(clean[i]);
  }
  IntensityVarianceCurve curve;
  for (std::size_t b = 0; b < n_bins; ++b) {
    IntensityBin bin;
    bin.lo = static_cast<double>(b) / static_cast<double>(n_bins);
    bin.hi = static_cast<double>(b + 1) / static_cast<double>(n_bins);
    bin.count = noise_m[b].n;
    bin.mean_intensity = bin.count ? clean_m[b].mean : 0.5 * (bin.lo + bin.hi);
    bin.variance = noise_m[b].sample_variance();
    bin.reliable = bin.count >= std::max<std::size_t>(min_count, 2);
    curve.bins.push_back(bin);
  }
  return curve;
}

ChannelSamples channel_samples(std::span<const NoisePatchRecord> records, const DatasetManifest& manifest,
                               std::size_t cell, std::size_t channel, Rng& rng) {
  if (channel >= 3) throw ConfigError("channel must be 0, 1 or 2");
  const auto idx = cell_members(records, manifest, cell);
  const auto batch = make_batch(records, idx, manifest, rng);
  ChannelSamples out;
  append_channel(batch.ctx.clean, channel, out.clean);
  append_channel(batch.noise, channel, out.noise);
  return out;
}

ChannelSamples sampled_channel_samples(const FlowModel& model, std::span<const NoisePatchRecord> records,
                                       const DatasetManifest& manifest, std::size_t cell, std::size_t channel,
                                       Rng& rng) {
  if (channel >= 3) throw ConfigError("channel must be 0, 1 or 2");
  const auto idx = cell_members(records, manifest, cell);
  ChannelSamples out;
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < idx.size(); start += kChunk) {
    const auto part = std::span<const std::size_t>(idx).subspan(start, std::min(kChunk, idx.size() - start));
    const auto batch = make_batch(records, part, manifest, rng);
    append_channel(batch.ctx.clean, channel, out.clean);
    append_channel(sample_noise(model, batch.ctx, rng), channel, out.noise);
  }
  return out;
}

LinearFit fit_linear(const IntensityVarianceCurve& curve) {
  double sx = 0, sy = 0, n = 0;
  for (const auto& b : curve.bins) {
    if (!b.reliable) continue;
    sx += b.mean_intensity;
    sy += b.variance;
    n += 1;
  }
  if (n < 2) throw DataError("fit_linear: fewer than two reliable bins");
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (const auto& b : curve.bins) {
    if (!b.reliable) continue;
    sxx += (b.mean_intensity - mx) * (b.mean_intensity - mx);
    sxy += (b.mean_intensity - mx) * (b.variance - my);
    syy += (b.variance - my) * (b.variance - my);
  }
  LinearFit fit;
  fit.slope = sxx > 0 ? sxy / sxx : 0.0;
  fit.intercept = my - fit.slope * mx;
  double ss_res = 0;
  for (const auto& b : curve.bins) {
    if (!b.reliable) continue;
    const double r = b.variance - (fit.intercept + fit.slope * b.mean_intensity);
    ss_res += r * r;
  }
  fit.r2 = syy > 0 ? 1.0 - ss_res / syy : (ss_res == 0 ? 1.0 : 0.0);
  return fit;
}

double variance_ratio(const IntensityVarianceCurve& curve) {
  double lo = std::numeric_limits<double>::infinity(), hi = 0;
  for (const auto& b : curve.bins) {
    if (!b.reliable) continue;
    lo = std::min(lo, b.variance);
    hi = std::max(hi, b.variance);
  }
  if (hi == 0 && std::isinf(lo)) throw DataError("variance_ratio: no reliable bins");
  return lo > 0 ? hi / lo : std::numeric_limits<double>::infinity();
}

void write_curve_csv(const std::filesystem::path& path, const IntensityVarianceCurve& curve) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "bin_lo,bin_hi,mean_intensity,count,variance,reliable\n";
  for (const auto& b : curve.bins) {
    out << format_number(b.lo) << ',' << format_number(b.hi) << ',' << format_number(b.mean_intensity) << ','
        << b.count << ',' << format_number(b.variance) << ',' << (b.reliable ? 1 : 0) << '\n';
  }
}

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

void write_svg_plot(const std::filesystem::path& path, const std::vector<PlotSeries>& series,
                    const std::string& title, const std::string& x_label, const std::string& y_label) {
  constexpr double kW = 640, kH = 420, kLeft = 80, kRight = 20, kTop = 40, kBottom = 60;
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw DataError("plot series '" + s.label + "' has mismatched x and y");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * (kW - kLeft - kRight); };
  const auto py = [&](double y) { return kH - kBottom - (y - y0) / (y1 - y0) * (kH - kTop - kBottom); };

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << fmt::format(R"(<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="12">)", kW, kH)
      << '\n';
  out << fmt::format(R"(<rect width="{}" height="{}" fill="white"/>)", kW, kH) << '\n';
  out << fmt::format(R"(<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>)", kW / 2, xml_escape(title))
      << '\n';
  out << fmt::format(R"(<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="black"/>)", kLeft, kH - kBottom, kW - kRight)
      << '\n';
  out << fmt::format(R"(<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="black"/>)", kLeft, kTop, kH - kBottom) << '\n';
  for (int t = 0; t <= 4; ++t) {
    const double xv = x0 + (x1 - x0) * t / 4, yv = y0 + (y1 - y0) * t / 4;
    out << fmt::format(R"(<text x="{:.1f}" y="{}" text-anchor="middle">{:.3g}</text>)", px(xv), kH - kBottom + 18, xv)
        << '\n';
    out << fmt::format(R"(<text x="{}" y="{:.1f}" text-anchor="end">{:.3g}</text>)", kLeft - 6, py(yv) + 4, yv) << '\n';
  }
  out << fmt::format(R"(<text x="{}" y="{}" text-anchor="middle">{}</text>)", (kLeft + kW - kRight) / 2, kH - 18,
                     xml_escape(x_label))
      << '\n';
  out << fmt::format(R"svg(<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>)svg",
                     (kTop + kH - kBottom) / 2, xml_escape(y_label))
      << '\n';
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kColors[k % std::size(kColors)];
    std::string points;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      points += fmt::format("{:.1f},{:.1f} ", px(s.x[i]), py(s.y[i]));
    }
    out << fmt::format(R"(<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>)", color, points) << '\n';
    const double ly = kTop + 14 + 16 * static_cast<double>(k);
    out << fmt::format(R"(<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="{3}" stroke-width="2"/>)", kW - kRight - 150,
                       ly - 4, kW - kRight - 130, color)
        << '\n';
    out << fmt::format(R"(<text x="{}" y="{}">{}</text>)", kW - kRight - 124, ly, xml_escape(s.label)) << '\n';
  }
  out << "</svg>\n";
}

std::string cell_label(const DatasetManifest& manifest, std::size_t cell) {
  return "c" + std::to_string(cell / manifest.n_iso()) + "_iso" + std::to_string(manifest.iso_values[cell % manifest.n_iso()]);
}

}  // namespace nfnoise::inline NFNOISE_ABI
