#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "nfnoise/dataset.hpp"
#include "nfnoise/error.hpp"
#include "nfnoise/png_io.hpp"
#include "nfnoise/synth_isp.hpp"

using namespace nfnoise;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("nfnoise_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path path;
};

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

NoisePatchRecord constant_record(std::uint8_t clean, std::uint8_t noisy, std::size_t hw, std::uint16_t cam = 0,
                                 std::uint32_t iso = 100) {
  return {cam, iso, 0, std::vector<std::uint8_t>(3 * hw * hw, clean), std::vector<std::uint8_t>(3 * hw * hw, noisy)};
}

/// Records with `per_cell[i]` entries in cell i of an n_cam x isos grid.
std::vector<NoisePatchRecord> grid_records(std::size_t n_cam, const std::vector<std::uint32_t>& isos,
                                           const std::vector<std::size_t>& per_cell) {
  std::vector<NoisePatchRecord> out;
  std::uint32_t scene = 0;
  for (std::size_t cell = 0; cell < n_cam * isos.size(); ++cell) {
    for (std::size_t k = 0; k < per_cell[cell]; ++k) {
      auto r = constant_record(static_cast<std::uint8_t>(k), 7, 2, static_cast<std::uint16_t>(cell / isos.size()),
                               isos[cell % isos.size()]);
      r.scene = scene++;
      out.push_back(r);
    }
  }
  return out;
}

double sample_std(const std::vector<double>& v) {
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0;
  for (double x : v) var += (x - mean) * (x - mean);
  return std::sqrt(var / static_cast<double>(v.size() - 1));
}

}  // namespace

TEST(Dequantize, RangeOfExtremeCodes) {
  Rng rng(1);
  const auto d = dequantize(constant_record(0, 255, 8), 8, 8, rng);
  for (auto v : d.clean.values()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LT(v, 1.0f / 256);
  }
  for (auto v : d.noisy.values()) {
    EXPECT_GE(v, 255.0f / 256);
    EXPECT_LT(v, 1.0f);
  }
}

TEST(Dequantize, MonteCarloMeanIsBinCenter) {
  Rng rng(2);
  for (std::uint8_t v : {0, 17, 128, 255}) {
    double sum = 0;
    std::size_t n = 0;
    while (n < 100000) {
      const auto d = dequantize(constant_record(v, v, 16), 16, 16, rng);
      for (auto x : d.clean.values()) sum += x;
      n += d.clean.numel();
    }
    EXPECT_NEAR(sum / static_cast<double>(n), (v + 0.5) / 256, 1e-3);
  }
}

TEST(Dequantize, CleanAndNoisyDrawsAreIndependent) {
  Rng rng(3);
  const auto d = dequantize(constant_record(100, 100, 32), 32, 32, rng);
  double cov = 0, vc = 0, vn = 0;
  const auto c = d.clean.values(), y = d.noisy.values();
  const double m = 100.5 / 256;
  for (std::size_t i = 0; i < c.size(); ++i) {
    cov += (c[i] - m) * (y[i] - m);
    vc += (c[i] - m) * (c[i] - m);
    vn += (y[i] - m) * (y[i] - m);
  }
  EXPECT_LT(std::abs(cov / std::sqrt(vc * vn)), 0.06);
  for (auto v : d.noise.values()) {
    EXPECT_GT(v, -1.0f);
    EXPECT_LT(v, 1.0f);
  }
}

TEST(Dequantize, RejectsMismatchedPlanes) {
  Rng rng(4);
  EXPECT_THROW(dequantize(constant_record(1, 1, 4), 8, 8, rng), DataError);
}

TEST(ExtractPatches, TilingCounts) {
  ImagePair img{64, 64, std::vector<std::uint8_t>(3 * 64 * 64, 1), std::vector<std::uint8_t>(3 * 64 * 64, 2), 1, 400, 9};
  EXPECT_EQ(extract_patches(img, 32, 32).size(), 4u);
  EXPECT_EQ(extract_patches(img, 32, 16).size(), 9u);
  img.width = 70;
  img.clean.resize(3 * 64 * 70);
  img.noisy.resize(3 * 64 * 70);
  EXPECT_EQ(extract_patches(img, 32, 32).size(), 4u);
}

TEST(ExtractPatches, SinglePatchEqualsImage) {
  Rng rng(5);
  ImagePair img{32, 32, {}, {}, 2, 800, 3};
  for (std::size_t i = 0; i < 3 * 32 * 32; ++i) {
    img.clean.push_back(static_cast<std::uint8_t>(rng.below(256)));
    img.noisy.push_back(static_cast<std::uint8_t>(rng.below(256)));
  }
  const auto patches = extract_patches(img, 32, 32);
  ASSERT_EQ(patches.size(), 1u);
  EXPECT_EQ(patches[0].clean, img.clean);
  EXPECT_EQ(patches[0].noisy, img.noisy);
  EXPECT_EQ(patches[0].camera, 2);
  EXPECT_EQ(patches[0].iso, 800u);
  EXPECT_EQ(patches[0].scene, 3u);
}

TEST(ExtractPatches, ContentMatchesIndexWindow) {
  Rng rng(6);
  const std::size_t h = 40, w = 50, p = 8, stride = 6;
  ImagePair img{h, w, {}, {}, 0, 100, 0};
  for (std::size_t i = 0; i < 3 * h * w; ++i) {
    img.clean.push_back(static_cast<std::uint8_t>(rng.below(256)));
    img.noisy.push_back(static_cast<std::uint8_t>(rng.below(256)));
  }
  const auto patches = extract_patches(img, p, stride);
  const std::size_t rows = (h - p) / stride + 1, cols = (w - p) / stride + 1;
  ASSERT_EQ(patches.size(), rows * cols);
  for (std::size_t k = 0; k < patches.size(); ++k) {
    const std::size_t top = (k / cols) * stride, left = (k % cols) * stride;
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t y = 0; y < p; ++y) {
        for (std::size_t x = 0; x < p; ++x) {
          const auto src = (c * h + top + y) * w + left + x;
          const auto dst = (c * p + y) * p + x;
          ASSERT_EQ(patches[k].clean[dst], img.clean[src]);
          ASSERT_EQ(patches[k].noisy[dst], img.noisy[src]);
        }
      }
    }
  }
}

TEST(ExtractPatches, ImageSmallerThanPatch) {
  ImagePair img{16, 16, std::vector<std::uint8_t>(3 * 256), std::vector<std::uint8_t>(3 * 256), 0, 100, 0};
  EXPECT_THROW(extract_patches(img, 32, 32), DataError);
}

TEST(StratifiedSplit, TenRecordsGiveEightTwo) {
  const auto records = grid_records(1, {100}, {10});
  const auto m = stratified_split(make_manifest(records, 1, {100}, 2, 2), 0.8, 3);
  const auto counts = cell_counts(m);
  EXPECT_EQ(counts[0].first, 8u);
  EXPECT_EQ(counts[0].second, 2u);
}

TEST(StratifiedSplit, DeterministicGivenSeed) {
  const auto records = grid_records(2, {100, 200}, {9, 12, 5, 30});
  const auto base = make_manifest(records, 2, {100, 200}, 2, 2);
  EXPECT_EQ(stratified_split(base, 0.8, 11), stratified_split(base, 0.8, 11));
  EXPECT_NE(stratified_split(base, 0.8, 11), stratified_split(base, 0.8, 12));
}

TEST(StratifiedSplit, CellProportionsWithinOneRecord) {
  Rng rng(7);
  std::vector<std::size_t> per_cell(25);
  std::size_t total = 0;
  for (auto& n : per_cell) total += (n = 20 + rng.below(41));
  per_cell[0] += 1000 > total ? 1000 - total : 0;
  const std::vector<std::uint32_t> isos = {100, 200, 400, 800, 1600};
  const auto m = stratified_split(make_manifest(grid_records(5, isos, per_cell), 5, isos, 2, 2), 0.8, 5);
  const auto counts = cell_counts(m);
  for (std::size_t cell = 0; cell < 25; ++cell) {
    const double n = static_cast<double>(per_cell[cell]);
    EXPECT_LE(std::abs(static_cast<double>(counts[cell].first) - 0.8 * n), 1.0) << cell;
    EXPECT_GE(counts[cell].second, 1u);
  }
}

TEST(StratifiedSplit, SingletonCellGoesToTrain) {
  const auto m = stratified_split(make_manifest(grid_records(1, {100, 200}, {1, 2}), 1, {100, 200}, 2, 2), 0.8, 0);
  const auto counts = cell_counts(m);
  EXPECT_EQ(counts[0], std::make_pair(std::size_t{1}, std::size_t{0}));
  EXPECT_EQ(counts[1], std::make_pair(std::size_t{1}, std::size_t{1}));
  EXPECT_THROW(stratified_split(m, 1.0, 0), ConfigError);
}

TEST(Manifest, RejectsRecordsOutsideGrid) {
  const auto records = grid_records(1, {100}, {2});
  EXPECT_THROW(make_manifest(records, 1, {200}, 2, 2), DataError);
  EXPECT_THROW(make_manifest(grid_records(2, {100}, {1, 1}), 1, {100}, 2, 2), DataError);
}

TEST(DatasetFiles, WriteReadWriteIsByteIdentical) {
  TempDir a("ds_a"), b("ds_b");
  SynthIspConfig cfg = default_synth_config(2, 2);
  cfg.patch = 8;
  cfg.n_per_cell = 6;
  const auto written = synth_isp_generate(cfg, a.path, 0.8, 2);
  const auto loaded = read_dataset(a.path);
  EXPECT_EQ(loaded.manifest, written.manifest);
  EXPECT_EQ(loaded.train, written.train);
  EXPECT_EQ(loaded.val, written.val);
  std::vector<NoisePatchRecord> all;
  std::size_t t = 0, v = 0;
  for (const auto& e : loaded.manifest.records) all.push_back(e.split == Split::train ? loaded.train[t++] : loaded.val[v++]);
  write_dataset(b.path, loaded.manifest, all);
  for (const char* f : {"manifest.json", "train.nfpd", "val.nfpd"}) {
    EXPECT_EQ(file_bytes(a.path / f), file_bytes(b.path / f)) << f;
  }
}

TEST(DatasetFiles, CorruptionIsDetected) {
  TempDir dir("ds_bad");
  SynthIspConfig cfg = default_synth_config(1, 2);
  cfg.patch = 4;
  cfg.n_per_cell = 5;
  synth_isp_generate(cfg, dir.path, 0.8, 1);
  const auto blob = file_bytes(dir.path / "train.nfpd");
  {
    std::ofstream(dir.path / "train.nfpd", std::ios::binary) << blob.substr(0, blob.size() - 3);
  }
  EXPECT_THROW(read_dataset(dir.path), DataError);
  {
    std::ofstream(dir.path / "train.nfpd", std::ios::binary) << "NFPX" << blob.substr(4);
  }
  EXPECT_THROW(read_dataset(dir.path), DataError);
  {
    std::ofstream(dir.path / "train.nfpd", std::ios::binary) << blob;
  }
  EXPECT_NO_THROW(read_dataset(dir.path));
  auto manifest = nlohmann::json::parse(file_bytes(dir.path / "manifest.json"));
  manifest["records"][0]["scene"] = 12345;
  {
    std::ofstream(dir.path / "manifest.json") << manifest.dump();
  }
  EXPECT_THROW(read_dataset(dir.path), DataError);
  manifest["cells"][0]["train"] = 0;
  EXPECT_THROW(manifest_from_json(manifest), DataError);
  EXPECT_THROW(read_dataset(dir.path / "missing"), DataError);
}

TEST(PatchFile, HeaderLayout) {
  TempDir dir("blob");
  const std::vector<NoisePatchRecord> records = {constant_record(1, 2, 2, 3, 1600)};
  write_patch_file(dir.path / "x.nfpd", records, 2, 2);
  const auto bytes = file_bytes(dir.path / "x.nfpd");
  ASSERT_EQ(bytes.size(), 20u + 12u + 24u);
  EXPECT_EQ(bytes.substr(0, 4), "NFPD");
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 1);   // count
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 2);  // height
  EXPECT_EQ(static_cast<unsigned char>(bytes[16]), 3);  // channels
  EXPECT_EQ(static_cast<unsigned char>(bytes[20]), 3);  // camera
  EXPECT_EQ(static_cast<unsigned char>(bytes[24]) | static_cast<unsigned char>(bytes[25]) << 8, 1600);
}

TEST(Batch, AssemblesContextAndNoise) {
  const std::vector<std::uint32_t> isos = {100, 200, 400};
  auto records = grid_records(2, isos, {1, 1, 1, 1, 1, 1});
  const auto m = make_manifest(records, 2, isos, 2, 2);
  Rng rng(8);
  const std::vector<std::size_t> idx = {5, 0, 3};
  const auto batch = make_batch(records, idx, m, rng);
  EXPECT_EQ(batch.noise.shape(), (Shape{3, 3, 2, 2}));
  EXPECT_EQ(batch.cells, (std::vector<std::size_t>{5, 0, 3}));
  EXPECT_EQ(batch.ctx.pair_onehot.at({0, 5}), 1.0f);
  EXPECT_EQ(batch.ctx.camera_onehot.at({2, 1}), 1.0f);
  EXPECT_EQ(batch.ctx.iso_onehot.at({1, 0}), 1.0f);
  // Record 5 has clean code 0 and noisy code 7: noise lies in (6/256, 8/256).
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_GT(batch.noise.values()[i], 6.0f / 256);
    EXPECT_LT(batch.noise.values()[i], 8.0f / 256);
  }
}

TEST(SynthIsp, ConfigValidation) {
  auto cfg = default_synth_config();
  EXPECT_NO_THROW(cfg.validate());
  auto bad = cfg;
  bad.beta1[3] = -1e-4;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.color_matrix[0] += 0.1;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.gamma = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = cfg;
  bad.beta2.pop_back();
  EXPECT_THROW(synth_isp_records(bad, 1), ConfigError);
  auto j = to_json(cfg);
  j["knee"] = 0.5;
  EXPECT_THROW(synth_config_from_json(j), ConfigError);
}

TEST(SynthIsp, JsonRoundTrip) {
  auto cfg = default_synth_config(3, 2);
  cfg.seed = 42;
  cfg.tone = 0.5;
  const auto back = synth_config_from_json(nlohmann::json::parse(to_json(cfg).dump()));
  EXPECT_EQ(to_json(back), to_json(cfg));
}

TEST(SynthIsp, PipelineInverseRoundTrip) {
  const auto cfg = default_synth_config();
  Rng rng(9);
  for (int i = 0; i < 200; ++i) {
    const std::array<double, 3> d{rng.uniform(0.01, 0.99), rng.uniform(0.01, 0.99), rng.uniform(0.01, 0.99)};
    const auto back = isp_forward(cfg, isp_inverse(cfg, d));
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(back[c], d[c], 1e-9);
  }
  EXPECT_EQ(quantize(0.0), 0);
  EXPECT_EQ(quantize(1.0), 255);
  EXPECT_EQ(quantize(-0.5), 0);
  EXPECT_EQ(quantize(128.0 / 256), 128);
}

TEST(SynthIsp, ZeroNoiseGivesIdenticalImages) {
  auto cfg = default_synth_config(2, 2);
  cfg.beta1.assign(4, 0.0);
  cfg.beta2.assign(4, 0.0);
  cfg.n_per_cell = 5;
  cfg.patch = 16;
  for (const auto& r : synth_isp_records(cfg, 2)) EXPECT_EQ(r.noisy, r.clean);
}

TEST(SynthIsp, IdentityPipelineGivesAwgnWithStatedStd) {
  const double sigma = 0.04;
  auto cfg = awgn_config({sigma}, 1, 1);
  cfg.texture_lo = 0.3;
  cfg.texture_hi = 0.7;
  cfg.patch = 32;
  cfg.n_per_cell = 40;
  const auto records = synth_isp_records(cfg, 1);
  std::vector<double> noise;
  for (const auto& r : records) {
    for (std::size_t i = 0; i < r.clean.size(); ++i) noise.push_back((double(r.noisy[i]) - r.clean[i]) / 256);
  }
  ASSERT_GE(noise.size(), 100000u);
  EXPECT_NEAR(sample_std(noise) / sigma, 1.0, 0.03);
}

TEST(SynthIsp, GammaMakesNoiseIntensityDependentNearClipping) {
  auto cfg = default_synth_config(1, 1);
  cfg.color_matrix = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  cfg.wb_gains = {1, 1, 1};
  cfg.tone = 0;
  cfg.beta1 = {0.0};
  cfg.beta2 = {0.02 * 0.02};
  cfg.texture_lo = 0;
  cfg.texture_hi = 1;
  cfg.n_per_cell = 60;
  std::vector<double> mid, high;
  for (const auto& r : synth_isp_records(cfg, 1)) {
    for (std::size_t i = 0; i < r.clean.size(); ++i) {
      const double n = (double(r.noisy[i]) - r.clean[i]) / 256;
      if (r.clean[i] >= 100 && r.clean[i] < 140) mid.push_back(n);
      if (r.clean[i] >= 250) high.push_back(n);
    }
  }
  ASSERT_GT(high.size(), 200u);
  ASSERT_GT(mid.size(), 200u);
  EXPECT_LT(sample_std(high), sample_std(mid));
}

TEST(SynthIsp, SeededGenerationIsReproducible) {
  auto cfg = default_synth_config(3, 3);
  cfg.patch = 8;
  cfg.n_per_cell = 4;
  cfg.seed = 17;
  const auto a = synth_isp_records(cfg, 1);
  const auto b = synth_isp_records(cfg, 4);
  EXPECT_EQ(a, b);
  cfg.seed = 18;
  EXPECT_NE(a, synth_isp_records(cfg, 2));
  EXPECT_EQ(a.size(), 36u);
}

TEST(SynthIsp, CodeProbabilitiesMatchSampling) {
  auto cfg = default_synth_config(1, 1);
  cfg.color_matrix = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  cfg.beta1 = {4e-3};
  cfg.beta2 = {1e-4};
  EXPECT_THROW(code_probability(default_synth_config(1, 1), 0, 0, 10, 10), ConfigError);
  for (std::uint8_t clean : {3, 90, 200, 252}) {
    const std::size_t ch = 2;
    double total = 0;
    for (int q = 0; q < 256; ++q) total += code_probability(cfg, 0, ch, clean, static_cast<std::uint8_t>(q));
    EXPECT_NEAR(total, 1.0, 1e-9);
    // Empirical frequencies of the generator's own sampling path.
    const auto raw = raw_for_codes(cfg, {clean, clean, clean});
    const double sd = std::sqrt(cfg.beta1[0] * std::max(raw[ch], 0.0) + cfg.beta2[0]);
    Rng rng(clean);
    std::vector<double> freq(256, 0.0);
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
      auto noisy = raw;
      noisy[ch] += sd * rng.normal();
      freq[quantize(isp_forward(cfg, noisy)[ch])] += 1.0 / n;
    }
    for (int q = 0; q < 256; ++q) {
      const double p = code_probability(cfg, 0, ch, clean, static_cast<std::uint8_t>(q));
      EXPECT_NEAR(freq[q], p, 5 * std::sqrt(p * (1 - p) / n) + 1e-5) << int(clean) << " " << q;
    }
  }
}

TEST(SynthIsp, TrueNllOfAwgnMatchesGaussianEntropy) {
  const double sigma = 0.05;
  auto cfg = awgn_config({sigma}, 1, 1);
  cfg.texture_lo = 0.3;
  cfg.texture_hi = 0.7;
  cfg.n_per_cell = 50;
  const auto records = synth_isp_records(cfg, 1);
  const double entropy = 0.5 * std::log(2 * std::numbers::pi * std::numbers::e * sigma * sigma);
  EXPECT_NEAR(true_nll_per_dim(cfg, records), entropy, 5e-3);
}

TEST(Png, WriteReadRoundTrip) {
  TempDir dir("png");
  Rng rng(10);
  RgbImage img{5, 7, {}};
  for (int i = 0; i < 3 * 35; ++i) img.planes.push_back(static_cast<std::uint8_t>(rng.below(256)));
  write_png(dir.path / "a.png", img);
  const auto back = read_png(dir.path / "a.png");
  EXPECT_EQ(back.height, 5u);
  EXPECT_EQ(back.width, 7u);
  EXPECT_EQ(back.planes, img.planes);
  EXPECT_THROW(read_png(dir.path / "missing.png"), DataError);
  std::ofstream(dir.path / "bad.png") << "not a png";
  EXPECT_THROW(read_png(dir.path / "bad.png"), DataError);
}

TEST(Png, IngestPairedDirectory) {
  TempDir dir("ingest");
  fs::create_directories(dir.path / "clean");
  fs::create_directories(dir.path / "noisy");
  Rng rng(11);
  RgbImage clean{64, 48, {}}, noisy{64, 48, {}};
  for (int i = 0; i < 3 * 64 * 48; ++i) {
    clean.planes.push_back(static_cast<std::uint8_t>(rng.below(256)));
    noisy.planes.push_back(static_cast<std::uint8_t>(rng.below(256)));
  }
  write_png(dir.path / "clean" / "img0.png", clean);
  write_png(dir.path / "noisy" / "img0.png", noisy);
  std::ofstream(dir.path / "metadata.csv") << "file,camera,iso\nimg0.png,1,3200\n";
  const auto records = ingest_png_pairs(dir.path, 16, 16);
  ASSERT_EQ(records.size(), 12u);
  EXPECT_EQ(records[0].camera, 1);
  EXPECT_EQ(records[0].iso, 3200u);
  EXPECT_EQ(records[0].clean[0], clean.planes[0]);
  EXPECT_EQ(iso_table(records), std::vector<std::uint32_t>{3200});
  std::ofstream(dir.path / "metadata.csv") << "file,iso\nimg0.png,3200\n";
  EXPECT_THROW(ingest_png_pairs(dir.path, 16, 16), DataError);
}
