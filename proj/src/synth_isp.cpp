#include "nfnoise/synth_isp.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <thread>

#include "nfnoise/error.hpp"

namespace nfnoise::inline NFNOISE_ABI {

namespace {

using nlohmann::json;

constexpr double kLevels = 256.0;

double tone_curve(double v, double k) { return (1 - k) * v + k * v * v * (3 - 2 * v); }

double tone_inverse(double y, double k) {
  double lo = 0, hi = 1;
  for (int i = 0; i < 64; ++i) {
    const double mid = 0.5 * (lo + hi);
    (tone_curve(mid, k) < y ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Display value -> linear value before tone and gamma.
double linearize(const SynthIspConfig& cfg, double display) {
  return tone_inverse(std::pow(display, cfg.gamma), cfg.tone);
}

Eigen::Matrix3d color_matrix_of(const SynthIspConfig& cfg) {
  return Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(cfg.color_matrix.data());
}

/// Precomputed inverse pipeline for clean-code centers.
struct Pipeline {
  explicit Pipeline(const SynthIspConfig& cfg) : cfg(cfg), m_inv(color_matrix_of(cfg).inverse()) {
    for (int c = 0; c < 256; ++c) center_linear[c] = linearize(cfg, (c + 0.5) / kLevels);
  }

  std::array<double, 3> raw(const std::array<std::uint8_t, 3>& codes) const {
    const Eigen::Vector3d lin(center_linear[codes[0]], center_linear[codes[1]], center_linear[codes[2]]);
    const Eigen::Vector3d balanced = m_inv * lin;
    return {balanced[0] / cfg.wb_gains[0], balanced[1] / cfg.wb_gains[1], balanced[2] / cfg.wb_gains[2]};
  }

  const SynthIspConfig& cfg;
  Eigen::Matrix3d m_inv;
  std::array<double, 256> center_linear{};
};

/// Smooth random target intensities in [lo, hi] for one patch, [3,H,W].
std::vector<double> render_texture(const SynthIspConfig& cfg, Rng& rng) {
  const std::size_t n = cfg.patch;
  const double level = rng.uniform();
  const double amplitude = rng.uniform(0.05, 0.5);
  const double gx = rng.normal(), gy = rng.normal(), wg = rng.uniform();
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::array<Wave, 3> waves{};
  double norm = wg * (std::abs(gx) + std::abs(gy));
  for (auto& w : waves) {
    w = {rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0, 2 * std::numbers::pi), rng.uniform()};
    norm += w.amp;
  }
  std::array<double, 3> offset{};
  for (auto& o : offset) o = rng.uniform(-0.08, 0.08);
  std::vector<double> out(3 * n * n);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double u = static_cast<double>(x) / n - 0.5, v = static_cast<double>(y) / n - 0.5;
      double s = wg * (gx * u + gy * v) * 2;
      for (const auto& w : waves) s += w.amp * std::sin(2 * std::numbers::pi * (w.fx * u + w.fy * v) + w.phase);
      s /= std::max(norm, 1e-12);
      for (std::size_t c = 0; c < 3; ++c) {
        const double t = std::clamp(level + amplitude * s + offset[c], 0.0, 1.0);
        out[(c * n + y) * n + x] = cfg.texture_lo + (cfg.texture_hi - cfg.texture_lo) * t;
      }
    }
  }
  return out;
}

NoisePatchRecord render_record(const Pipeline& pipe, std::size_t cell, std::uint32_t scene, Rng& rng) {
  const auto& cfg = pipe.cfg;
  const std::size_t plane = cfg.patch * cfg.patch;
  const auto target = render_texture(cfg, rng);
  NoisePatchRecord r;
  r.camera = static_cast<std::uint16_t>(cell / cfg.n_iso());
  r.iso = cfg.iso_values[cell % cfg.n_iso()];
  r.scene = scene;
  r.clean.resize(3 * plane);
  r.noisy.resize(3 * plane);
  const double b1 = cfg.beta1[cell], b2 = cfg.beta2[cell];
  for (std::size_t i = 0; i < plane; ++i) {
    std::array<std::uint8_t, 3> codes{};
    for (std::size_t c = 0; c < 3; ++c) codes[c] = quantize(target[c * plane + i]);
    const auto raw = pipe.raw(codes);
    std::array<double, 3> noisy{};
    for (std::size_t c = 0; c < 3; ++c) {
      const double var = b1 * std::max(raw[c], 0.0) + b2;
      noisy[c] = raw[c] + std::sqrt(var) * rng.normal();
    }
    const auto display = isp_forward(cfg, noisy);
    for (std::size_t c = 0; c < 3; ++c) {
      r.clean[c * plane + i] = codes[c];
      r.noisy[c * plane + i] = quantize(display[c]);
    }
  }
  return r;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError("synthetic ISP: " + message);
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

}  // namespace

void SynthIspConfig::validate() const {
  require(n_cam >= 1 && n_cam <= 0xFFFF, "n_cam must be in [1, 65535]");
  require(!iso_values.empty(), "iso_values must not be empty");
  require(std::set<std::uint32_t>(iso_values.begin(), iso_values.end()).size() == iso_values.size(),
          "iso_values must be distinct");
  require(beta1.size() == n_cells() && beta2.size() == n_cells(), "beta1 and beta2 need one value per cell");
  for (std::size_t i = 0; i < n_cells(); ++i) {
    require(beta1[i] >= 0 && beta2[i] >= 0 && std::isfinite(beta1[i]) && std::isfinite(beta2[i]),
            "beta1 and beta2 must be finite and non-negative");
  }
  for (double g : wb_gains) require(g > 0 && std::isfinite(g), "white balance gains must be positive");
  for (int r = 0; r < 3; ++r) {
    const double sum = color_matrix[3 * r] + color_matrix[3 * r + 1] + color_matrix[3 * r + 2];
    require(std::abs(sum - 1.0) < 1e-9, "color matrix rows must sum to 1");
  }
  require(std::abs(color_matrix_of(*this).determinant()) > 1e-9, "color matrix must be invertible");
  require(gamma > 0 && std::isfinite(gamma), "gamma must be positive");
  require(tone >= 0 && tone <= 1, "tone must lie in [0, 1]");
  require(patch >= 1 && patch <= 0xFFFF, "patch size must be in [1, 65535]");
  require(n_per_cell >= 1, "n_per_cell must be at least 1");
  require(texture_lo >= 0 && texture_lo < texture_hi && texture_hi <= 1, "texture range must satisfy 0 <= lo < hi <= 1");
}

SynthIspConfig default_synth_config(std::size_t n_cam, std::size_t n_iso) {
  SynthIspConfig cfg;
  cfg.n_cam = n_cam;
  cfg.iso_values.clear();
  for (std::size_t g = 0; g < n_iso; ++g) cfg.iso_values.push_back(100u << g);
  for (std::size_t c = 0; c < n_cam; ++c) {
    for (std::size_t g = 0; g < n_iso; ++g) {
      const double a = std::ldexp(1.0, static_cast<int>(g)) * (1.0 + 0.2 * static_cast<double>(c));
      cfg.beta1.push_back(2e-4 * a);
      cfg.beta2.push_back(2e-5 * a);
    }
  }
  cfg.wb_gains = {1.8, 1.0, 1.5};
  cfg.color_matrix = {1.3, -0.2, -0.1, -0.15, 1.25, -0.1, -0.05, -0.25, 1.3};
  cfg.gamma = 2.2;
  cfg.tone = 0.3;
  return cfg;
}

SynthIspConfig awgn_config(const std::vector<double>& sigma, std::size_t n_cam, std::size_t n_iso) {
  SynthIspConfig cfg = default_synth_config(n_cam, n_iso);
  if (sigma.size() != n_cam * n_iso) throw ConfigError("awgn_config: one sigma per cell required");
  cfg.beta1.assign(sigma.size(), 0.0);
  cfg.beta2.clear();
  for (double s : sigma) cfg.beta2.push_back(s * s);
  cfg.wb_gains = {1, 1, 1};
  cfg.color_matrix = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  cfg.gamma = 1;
  cfg.tone = 0;
  return cfg;
}

json to_json(const SynthIspConfig& cfg) {
  return {{"n_cam", cfg.n_cam},           {"iso_values", cfg.iso_values}, {"beta1", cfg.beta1},
          {"beta2", cfg.beta2},           {"wb_gains", cfg.wb_gains},     {"color_matrix", cfg.color_matrix},
          {"gamma", cfg.gamma},           {"tone", cfg.tone},             {"patch", cfg.patch},
          {"n_per_cell", cfg.n_per_cell}, {"texture_lo", cfg.texture_lo}, {"texture_hi", cfg.texture_hi},
          {"seed", cfg.seed}};
}

SynthIspConfig synth_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("synthetic ISP config must be a JSON object");
  static const std::set<std::string> keys = {"n_cam", "iso_values", "beta1",      "beta2",      "wb_gains",
                                             "color_matrix", "gamma", "tone",       "patch",      "n_per_cell",
                                             "texture_lo",   "texture_hi", "seed"};
  for (const auto& [key, value] : j.items()) {
    if (!keys.count(key)) throw ConfigError("unknown key '" + key + "' in synthetic ISP config");
  }
  try {
    const std::size_t n_cam = j.value("n_cam", std::size_t{5});
    const auto iso = j.contains("iso_values") ? j.at("iso_values").get<std::vector<std::uint32_t>>()
                                              : default_synth_config(n_cam, 5).iso_values;
    SynthIspConfig cfg = default_synth_config(n_cam, iso.size());
    cfg.iso_values = iso;
    if (j.contains("beta1")) cfg.beta1 = j.at("beta1").get<std::vector<double>>();
    if (j.contains("beta2")) cfg.beta2 = j.at("beta2").get<std::vector<double>>();
    if (j.contains("wb_gains")) cfg.wb_gains = j.at("wb_gains").get<std::array<double, 3>>();
    if (j.contains("color_matrix")) cfg.color_matrix = j.at("color_matrix").get<std::array<double, 9>>();
    cfg.gamma = j.value("gamma", cfg.gamma);
    cfg.tone = j.value("tone", cfg.tone);
    cfg.patch = j.value("patch", cfg.patch);
    cfg.n_per_cell = j.value("n_per_cell", cfg.n_per_cell);
    cfg.texture_lo = j.value("texture_lo", cfg.texture_lo);
    cfg.texture_hi = j.value("texture_hi", cfg.texture_hi);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.validate();
    return cfg;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synthetic ISP config: ") + e.what());
  }
}

std::array<double, 3> isp_forward(const SynthIspConfig& cfg, const std::array<double, 3>& raw) {
  const auto& m = cfg.color_matrix;
  std::array<double, 3> balanced{};
  for (int c = 0; c < 3; ++c) balanced[c] = raw[c] * cfg.wb_gains[c];
  std::array<double, 3> out{};
  for (int r = 0; r < 3; ++r) {
    double v = m[3 * r] * balanced[0] + m[3 * r + 1] * balanced[1] + m[3 * r + 2] * balanced[2];
    v = tone_curve(std::clamp(v, 0.0, 1.0), cfg.tone);
    out[r] = std::pow(v, 1.0 / cfg.gamma);
  }
  return out;
}

std::array<double, 3> isp_inverse(const SynthIspConfig& cfg, const std::array<double, 3>& display) {
  const Eigen::Vector3d lin(linearize(cfg, display[0]), linearize(cfg, display[1]), linearize(cfg, display[2]));
  const Eigen::Vector3d balanced = color_matrix_of(cfg).inverse() * lin;
  return {balanced[0] / cfg.wb_gains[0], balanced[1] / cfg.wb_gains[1], balanced[2] / cfg.wb_gains[2]};
}

std::uint8_t quantize(double v) {
  const double q = std::floor(v * kLevels);
  return static_cast<std::uint8_t>(std::clamp(q, 0.0, 255.0));
}

std::array<double, 3> raw_for_codes(const SynthIspConfig& cfg, const std::array<std::uint8_t, 3>& codes) {
  return Pipeline(cfg).raw(codes);
}

double code_probability(const SynthIspConfig& cfg, std::size_t cell, std::size_t channel, std::uint8_t clean,
                        std::uint8_t noisy) {
  if (color_matrix_of(cfg) != Eigen::Matrix3d::Identity()) {
    throw ConfigError("exact code probabilities need an identity color matrix");
  }
  if (cell >= cfg.n_cells() || channel >= 3) throw ConfigError("code_probability: cell or channel out of range");
  const double g = cfg.wb_gains[channel];
  const double x = linearize(cfg, (clean + 0.5) / kLevels) / g;
  const double lo = noisy == 0 ? -HUGE_VAL : linearize(cfg, noisy / kLevels) / g;
  const double hi = noisy == 255 ? HUGE_VAL : linearize(cfg, (noisy + 1) / kLevels) / g;
  const double var = cfg.beta1[cell] * std::max(x, 0.0) + cfg.beta2[cell];
  if (var <= 0) return (lo <= x && x < hi) ? 1.0 : 0.0;
  const double sd = std::sqrt(var);
  const double zl = (lo - x) / sd, zh = (hi - x) / sd;
  // Difference of upper tails is more accurate when both edges are above x.
  if (zl > 0) return 0.5 * (std::erfc(zl / std::numbers::sqrt2) - std::erfc(zh / std::numbers::sqrt2));
  return normal_cdf(zh) - normal_cdf(zl);
}

double true_nll_per_dim(const SynthIspConfig& cfg, std::span<const NoisePatchRecord> records) {
  cfg.validate();
  if (records.empty()) throw DataError("true_nll_per_dim: no records");
  // Tables of -log P(q | c) filled on demand per (cell, channel).
  std::vector<std::vector<double>> table(cfg.n_cells() * 3);
  double total = 0;
  std::size_t count = 0;
  for (const auto& r : records) {
    const auto it = std::find(cfg.iso_values.begin(), cfg.iso_values.end(), r.iso);
    if (r.camera >= cfg.n_cam || it == cfg.iso_values.end()) throw DataError("record outside the generator grid");
    const std::size_t cell = r.camera * cfg.n_iso() + static_cast<std::size_t>(it - cfg.iso_values.begin());
    const std::size_t plane = r.clean.size() / 3;
    for (std::size_t ch = 0; ch < 3; ++ch) {
      auto& t = table[cell * 3 + ch];
      if (t.empty()) t.assign(256 * 256, -1.0);
      for (std::size_t i = 0; i < plane; ++i) {
        const auto c = r.clean[ch * plane + i], q = r.noisy[ch * plane + i];
        double& v = t[c * 256 + q];
        if (v < 0) v = -std::log(std::max(code_probability(cfg, cell, ch, c, q), 1e-300));
        total += v;
        ++count;
      }
    }
  }
  return total / static_cast<double>(count) - std::log(kLevels);
}

std::vector<NoisePatchRecord> synth_isp_records(const SynthIspConfig& cfg, unsigned threads) {
  cfg.validate();
  const Pipeline pipe(cfg);
  const std::size_t cells = cfg.n_cells();
  std::vector<std::vector<NoisePatchRecord>> per_cell(cells);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t cell = next++; cell < cells; cell = next++) {
      const std::uint64_t cell_seed = derive_seed(cfg.seed, cell);
      auto& out = per_cell[cell];
      out.reserve(cfg.n_per_cell);
      for (std::size_t k = 0; k < cfg.n_per_cell; ++k) {
        Rng rng(derive_seed(cell_seed, k));
        out.push_back(render_record(pipe, cell, static_cast<std::uint32_t>(cell * cfg.n_per_cell + k), rng));
      }
    }
  };
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, cells));
  std::vector<std::jthread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  pool.clear();
  std::vector<NoisePatchRecord> records;
  records.reserve(cells * cfg.n_per_cell);
  for (auto& cell : per_cell) {
    records.insert(records.end(), std::make_move_iterator(cell.begin()), std::make_move_iterator(cell.end()));
  }
  return records;
}

Dataset synth_isp_dataset(const SynthIspConfig& cfg, double train_frac, unsigned threads) {
  const auto records = synth_isp_records(cfg, threads);
  auto manifest = stratified_split(make_manifest(records, cfg.n_cam, cfg.iso_values, cfg.patch, cfg.patch),
                                   train_frac, cfg.seed);
  return assemble_dataset(std::move(manifest), records);
}

Dataset synth_isp_generate(const SynthIspConfig& cfg, const std::filesystem::path& dir, double train_frac,
                           unsigned threads) {
  const auto records = synth_isp_records(cfg, threads);
  auto manifest = stratified_split(make_manifest(records, cfg.n_cam, cfg.iso_values, cfg.patch, cfg.patch),
                                   train_frac, cfg.seed);
  Dataset ds = write_dataset(dir, std::move(manifest), records);
  std::ofstream out(dir / "synth_config.json", std::ios::binary);
  out << to_json(cfg).dump(2) << "\n";
  if (!out) throw DataError("cannot write " + (dir / "synth_config.json").string());
  return ds;
}

}  // namespace nfnoise::inline NFNOISE_ABI
