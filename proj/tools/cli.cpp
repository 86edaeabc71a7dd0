#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <fstream>
#include <iostream>
#include <map>
#include <regex>
#include <set>

#include "nfnoise/checkpoint.hpp"
#include "nfnoise/error.hpp"
#include "nfnoise/log.hpp"
#include "nfnoise/metrics.hpp"
#include "nfnoise/png_io.hpp"
#include "nfnoise/synth_isp.hpp"
#include "nfnoise/training.hpp"

namespace nfnoise::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_file(const fs::path& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw ConfigError(std::string("cannot open ") + what + " " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed ") + what + " " + path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  out << j.dump(2) << '\n';
  if (!out) throw DataError("cannot write " + path.string());
}

template <class T>
void read_key(const json& j, const char* key, T& dst) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config: key '") + key + "' has the wrong type");
  }
}

template <class T>
void read_optional(const json& j, const char* key, std::optional<T>& dst) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  T v{};
  read_key(j, key, v);
  dst = v;
}

template <class T>
json optional_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

void require_set(const std::string& value, const char* flag, const std::string& command) {
  require(!value.empty(), command + " needs " + flag);
}

void echo_config(const RunConfig& cfg) {
  fs::create_directories(cfg.out);
  write_json_file(fs::path(cfg.out) / "config.json", to_json(cfg));
}

Dataset load_dataset(const RunConfig& cfg) {
  require_set(cfg.dataset, "--dataset", cfg.command);
  return read_dataset(cfg.dataset);
}

Split split_of(const RunConfig& cfg) { return cfg.split == "train" ? Split::train : Split::val; }

std::string entry_label(const std::string& entry) {
  if (!is_run_dir(entry)) return entry;
  fs::path p(entry);
  if (p.filename().empty()) p = p.parent_path();
  return p.filename().string();
}

std::vector<LoadedModel> load_models(const RunConfig& cfg, const Grid& grid) {
  require(cfg.checkpoint.empty() || cfg.models.size() == 1, "checkpoint applies to a single model");
  std::vector<LoadedModel> out;
  std::set<std::string> labels;
  for (const auto& entry : cfg.models) {
    out.push_back(load_model(entry, grid, cfg.seed, cfg.width, cfg.checkpoint));
    require(labels.insert(out.back().label).second, "model '" + out.back().label + "' given twice");
  }
  return out;
}

/// Real and model variance curves for every populated (cell, channel).
void write_curves(const fs::path& dir, std::span<const NoisePatchRecord> records, const DatasetManifest& manifest,
                  const std::vector<LoadedModel>& models, std::uint64_t seed, bool svg) {
  std::vector<std::size_t> per_cell(manifest.n_cells(), 0);
  for (const auto& r : records) ++per_cell[manifest.cell_index(r.camera, r.iso)];
  fs::create_directories(dir / "real");
  for (const auto& m : models) fs::create_directories(dir / m.label);

  std::ofstream summary(dir / "summary.csv", std::ios::binary);
  summary << "source,cell,channel,variance_ratio,slope,intercept,r2\n";
  const auto summarize = [&](const std::string& source, const std::string& cell, std::size_t ch,
                             const IntensityVarianceCurve& c) {
    std::size_t reliable = 0;
    for (const auto& b : c.bins) reliable += b.reliable;
    summary << source << ',' << cell << ',' << ch << ',';
    if (reliable < 2) {
      summary << ",,,\n";
      return;
    }
    const auto fit = fit_linear(c);
    summary << format_number(variance_ratio(c)) << ',' << format_number(fit.slope) << ','
            << format_number(fit.intercept) << ',' << format_number(fit.r2) << '\n';
  };
  const auto series = [](const std::string& label, const IntensityVarianceCurve& c) {
    PlotSeries s{label, {}, {}};
    for (const auto& b : c.bins) {
      if (!b.reliable) continue;
      s.x.push_back(b.mean_intensity);
      s.y.push_back(b.variance);
    }
    return s;
  };

  for (std::size_t cell = 0; cell < manifest.n_cells(); ++cell) {
    if (per_cell[cell] == 0) continue;
    const auto label = cell_label(manifest, cell);
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const auto name = fmt::format("{}_ch{}", label, ch);
      const auto stream = derive_seed(seed, 3 * cell + ch);
      Rng rng(stream);
      const auto real = channel_samples(records, manifest, cell, ch, rng);
      auto curve = variance_vs_intensity(real.clean, real.noise);
      curve.cell = cell;
      curve.channel = ch;
      write_curve_csv(dir / "real" / (name + ".csv"), curve);
      summarize("real", label, ch, curve);
      std::vector<PlotSeries> plot{series("real", curve)};
      for (const auto& m : models) {
        Rng mrng(derive_seed(stream, 1));
        const auto s = sampled_channel_samples(m.model, records, manifest, cell, ch, mrng);
        auto mc = variance_vs_intensity(s.clean, s.noise);
        mc.cell = cell;
        mc.channel = ch;
        write_curve_csv(dir / m.label / (name + ".csv"), mc);
        summarize(m.label, label, ch, mc);
        plot.push_back(series(m.label, mc));
      }
      if (svg) {
        write_svg_plot(dir / (name + ".svg"), plot, fmt::format("{} channel {}", label, ch), "clean intensity",
                       "noise variance");
      }
    }
  }
  if (!summary) throw DataError("cannot write " + (dir / "summary.csv").string());
}

std::vector<std::uint32_t> default_iso_values(std::size_t n_iso) {
  return default_synth_config(1, n_iso).iso_values;
}

}  // namespace

// ---- RunConfig ----

std::pair<std::size_t, std::size_t> RunConfig::grid() const {
  static const std::regex pattern(R"(^(\d{1,5})x(\d{1,3})$)");
  std::smatch m;
  if (!std::regex_match(cells, m, pattern)) throw ConfigError("cells must look like CxI, got '" + cells + "'");
  const std::size_t c = std::stoul(m[1]);
  const std::size_t i = std::stoul(m[2]);
  if (c == 0 || i == 0 || c > 65535 || i > 22) throw ConfigError("cells out of range: '" + cells + "'");
  return {c, i};
}

void RunConfig::validate() const {
  static const std::set<std::string> commands = {"synth-data", "train", "eval", "sample", "curves"};
  require(command.empty() || commands.count(command), "unknown command '" + command + "'");
  grid();
  require(epochs > 0, "epochs must be at least 1");
  require(batch > 0, "batch must be at least 1");
  require(std::isfinite(lr) && lr > 0, "lr must be positive");
  require(!clip_norm || (std::isfinite(*clip_norm) && *clip_norm > 0), "clip_norm must be positive");
  require(eval_interval > 0, "eval_interval must be at least 1");
  require(eval_batch > 0, "eval_batch must be at least 1");
  require(!width || *width > 0, "width must be at least 1");
  require(n_per_cell > 0, "n_per_cell must be at least 1");
  require(patch > 0, "patch must be at least 1");
  require(train_frac > 0 && train_frac < 1, "train_frac must lie in (0, 1)");
  require(generator == "isp" || generator == "awgn" || generator == "png",
          "generator must be 'isp', 'awgn' or 'png'");
  require(!stride || *stride > 0, "stride must be at least 1");
  require(std::isfinite(awgn_sigma) && awgn_sigma > 0, "awgn_sigma must be positive");
  require(std::isfinite(awgn_step) && awgn_step > 0, "awgn_step must be positive");
  require(split == "train" || split == "val", "split must be 'train' or 'val'");
  require(count > 0, "count must be at least 1");
}

json to_json(const RunConfig& c) {
  return {{"command", c.command},
          {"model", c.models},
          {"dataset", c.dataset},
          {"out", c.out},
          {"seed", c.seed},
          {"threads", c.threads},
          {"epochs", c.epochs},
          {"batch", c.batch},
          {"lr", c.lr},
          {"clip_norm", optional_json(c.clip_norm)},
          {"eval_interval", c.eval_interval},
          {"eval_batch", c.eval_batch},
          {"width", optional_json(c.width)},
          {"cells", c.cells},
          {"n_per_cell", c.n_per_cell},
          {"patch", c.patch},
          {"train_frac", c.train_frac},
          {"generator", c.generator},
          {"awgn_sigma", c.awgn_sigma},
          {"awgn_step", c.awgn_step},
          {"synth_config", c.synth_config},
          {"source", c.source},
          {"stride", optional_json(c.stride)},
          {"split", c.split},
          {"curves", c.curves},
          {"checkpoint", c.checkpoint},
          {"count", c.count},
          {"camera", optional_json(c.camera)},
          {"iso", optional_json(c.iso)},
          {"clean", c.clean}};
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  const auto known = to_json(RunConfig{});
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("config: unknown key '" + key + "'");
  }
  RunConfig c;
  read_key(j, "command", c.command);
  if (j.contains("model")) {
    if (j.at("model").is_string()) {
      c.models = {j.at("model").get<std::string>()};
    } else {
      read_key(j, "model", c.models);
    }
  }
  read_key(j, "dataset", c.dataset);
  read_key(j, "out", c.out);
  read_key(j, "seed", c.seed);
  read_key(j, "threads", c.threads);
  read_key(j, "epochs", c.epochs);
  read_key(j, "batch", c.batch);
  read_key(j, "lr", c.lr);
  read_optional(j, "clip_norm", c.clip_norm);
  read_key(j, "eval_interval", c.eval_interval);
  read_key(j, "eval_batch", c.eval_batch);
  read_optional(j, "width", c.width);
  read_key(j, "cells", c.cells);
  read_key(j, "n_per_cell", c.n_per_cell);
  read_key(j, "patch", c.patch);
  read_key(j, "train_frac", c.train_frac);
  read_key(j, "generator", c.generator);
  read_key(j, "awgn_sigma", c.awgn_sigma);
  read_key(j, "awgn_step", c.awgn_step);
  read_key(j, "synth_config", c.synth_config);
  read_key(j, "source", c.source);
  read_optional(j, "stride", c.stride);
  read_key(j, "split", c.split);
  read_key(j, "curves", c.curves);
  read_key(j, "checkpoint", c.checkpoint);
  read_key(j, "count", c.count);
  read_optional(j, "camera", c.camera);
  read_optional(j, "iso", c.iso);
  read_key(j, "clean", c.clean);
  return c;
}

RunConfig load_run_config(const fs::path& path) { return run_config_from_json(read_json_file(path, "config")); }

// ---- runs ----

Grid grid_of(const DatasetManifest& manifest) { return {manifest.n_cam, manifest.iso_values}; }

bool is_run_dir(const std::string& entry) {
  std::error_code ec;
  return fs::is_regular_file(fs::path(entry) / "model_spec.json", ec);
}

Grid read_run_grid(const fs::path& dir) {
  const auto j = read_json_file(dir / "grid.json", "run grid");
  Grid g;
  try {
    g.n_cam = j.at("n_cam").get<std::size_t>();
    g.iso_values = j.at("iso_values").get<std::vector<std::uint32_t>>();
  } catch (const json::exception&) {
    throw ConfigError("malformed run grid " + (dir / "grid.json").string());
  }
  return g;
}

void save_run(const fs::path& dir, const ModelSpec& spec, const FlowModel& model, const Grid& grid) {
  fs::create_directories(dir);
  write_json_file(dir / "model_spec.json", to_json(spec));
  write_json_file(dir / "grid.json", {{"n_cam", grid.n_cam}, {"iso_values", grid.iso_values}});
  save_checkpoint(dir / "init.nfck", model.state());
}

LoadedModel load_model(const std::string& entry, const Grid& grid, std::uint64_t seed,
                       const std::optional<std::size_t>& width, const std::string& checkpoint) {
  if (is_run_dir(entry)) {
    const fs::path dir(entry);
    auto spec = model_spec_from_json(read_json_file(dir / "model_spec.json", "model spec"));
    const auto run_grid = read_run_grid(dir);
    if (run_grid != grid) throw ConfigError("run '" + entry + "' was trained on a different camera/ISO grid");
    auto model = build_model(spec, 0);
    if (checkpoint.empty()) {
      for (const char* name : {"best.nfck", "last.nfck", "init.nfck"}) {
        if (fs::exists(dir / name)) {
          model.load_state(load_checkpoint(dir / name));
          break;
        }
      }
    }
    LoadedModel out{entry_label(entry), std::move(spec), std::move(model), run_grid};
    if (!checkpoint.empty()) out.model.load_state(load_checkpoint(checkpoint));
    return out;
  }
  auto spec = spec_by_name(entry, grid.n_cam, grid.iso_values.size());
  if (width) spec = with_conditioner_width(std::move(spec), *width);
  LoadedModel out{entry, spec, build_model(spec, seed), grid};
  if (!checkpoint.empty()) out.model.load_state(load_checkpoint(checkpoint));
  return out;
}

// ---- commands ----

void ingest_data(const RunConfig& cfg) {
  require_set(cfg.source, "--source", cfg.command);
  const auto records = ingest_png_pairs(cfg.source, cfg.patch, cfg.stride.value_or(cfg.patch));
  if (records.empty()) throw DataError("no patches in " + cfg.source);
  std::size_t n_cam = 0;
  for (const auto& r : records) n_cam = std::max<std::size_t>(n_cam, r.camera + 1u);
  auto manifest = stratified_split(make_manifest(records, n_cam, iso_table(records), cfg.patch, cfg.patch),
                                   cfg.train_frac, cfg.seed);
  echo_config(cfg);
  const auto data = write_dataset(cfg.out, std::move(manifest), records);
  log().info("wrote {} train and {} val patches to {}", data.train.size(), data.val.size(), cfg.out);
}

void cmd_synth_data(const RunConfig& cfg) {
  require_set(cfg.out, "--out", cfg.command);
  if (cfg.generator == "png") return ingest_data(cfg);
  SynthIspConfig sc;
  if (!cfg.synth_config.empty()) {
    try {
      sc = synth_config_from_json(read_json_file(cfg.synth_config, "generator config"));
    } catch (const json::exception& e) {
      throw ConfigError(std::string("generator config: ") + e.what());
    }
  } else {
    const auto [n_cam, n_iso] = cfg.grid();
    if (cfg.generator == "awgn") {
      std::vector<double> sigma(n_cam * n_iso);
      for (std::size_t k = 0; k < sigma.size(); ++k) sigma[k] = cfg.awgn_sigma * std::pow(cfg.awgn_step, double(k));
      sc = awgn_config(sigma, n_cam, n_iso);
      // Mid-range clean values keep additive noise away from the clipping points.
      sc.texture_lo = 0.3;
      sc.texture_hi = 0.7;
    } else {
      sc = default_synth_config(n_cam, n_iso);
    }
    sc.patch = cfg.patch;
    sc.n_per_cell = cfg.n_per_cell;
  }
  sc.seed = cfg.seed;
  sc.validate();
  echo_config(cfg);
  const auto data = synth_isp_generate(sc, cfg.out, cfg.train_frac, cfg.threads);
  log().info("wrote {} train and {} val patches to {}", data.train.size(), data.val.size(), cfg.out);
}

void cmd_train(const RunConfig& cfg) {
  require_set(cfg.out, "--out", cfg.command);
  require(!cfg.models.empty(), "train needs --model");
  TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch;
  tc.lr = cfg.lr;
  tc.seed = cfg.seed;
  tc.clip_norm = cfg.clip_norm;
  tc.eval_interval = cfg.eval_interval;
  tc.eval_batch = cfg.eval_batch;
  tc.validate();

  // Resolve every model before the (long) training starts.
  const auto data = load_dataset(cfg);
  const auto grid = grid_of(data.manifest);
  std::vector<std::pair<fs::path, ModelSpec>> runs;
  std::set<fs::path> dirs;
  for (const auto& name : cfg.models) {
    auto spec = spec_by_name(name, grid.n_cam, grid.iso_values.size());
    if (cfg.width) spec = with_conditioner_width(std::move(spec), *cfg.width);
    const auto dir = fs::path(cfg.out) / normalize_model_name(name);
    require(dirs.insert(dir).second, "model '" + name + "' given twice");
    runs.emplace_back(dir, std::move(spec));
  }
  echo_config(cfg);

  for (const auto& [dir, spec] : runs) {
    auto model = build_model(spec, cfg.seed);
    save_run(dir, spec, model, grid);
    log().info("training {} ({} parameters)", spec.name, model.parameter_count());
    TrainOutputs outputs;
    outputs.checkpoint_dir = dir;
    const auto& name = spec.name;
    outputs.on_epoch = [&name](const EpochLog& e) {
      if (e.evaluated) {
        log().info("{} epoch {}: train {:.5f} val {:.5f} dkl {:.5f}", name, e.epoch, e.train_nll, e.val_nll,
                   e.val_dkl);
      } else {
        log().info("{} epoch {}: train {:.5f}", name, e.epoch, e.train_nll);
      }
    };
    const auto run = train(model, data, tc, outputs);
    write_run_log(dir / "log.csv", run, data.manifest);
    write_timing(dir / "timing.csv", run);
    std::cout << fmt::format("{}\tbest_epoch={}\tval_nll={}\n", spec.name, run.best_epoch,
                             format_number(run.best_val_nll));
  }
}

void cmd_eval(const RunConfig& cfg) {
  require_set(cfg.out, "--out", cfg.command);
  require(!cfg.models.empty(), "eval needs --model");
  const auto data = load_dataset(cfg);
  const auto& records = data.split(split_of(cfg));
  if (records.empty()) throw DataError("the " + cfg.split + " split is empty");
  const auto models = load_models(cfg, grid_of(data.manifest));
  echo_config(cfg);

  struct Row {
    const LoadedModel* model;
    EvalResult result;
  };
  std::vector<Row> rows;
  for (const auto& m : models) {
    EvalOptions opts;
    opts.batch = cfg.eval_batch;
    opts.seed = cfg.seed;
    rows.push_back({&m, eval_model(m.model, records, data.manifest, opts)});
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const Row& a, const Row& b) { return a.result.nll_per_dim < b.result.nll_per_dim; });

  const fs::path out(cfg.out);
  std::ofstream metrics(out / "metrics.csv", std::ios::binary);
  std::ofstream cells(out / "cell_std.csv", std::ios::binary);
  metrics << "model,parameters,nll_per_dim,d_kl\n";
  cells << "model,camera,iso,patches,real_std,sampled_std\n";
  for (const auto& row : rows) {
    const auto& r = row.result;
    metrics << row.model->label << ',' << row.model->model.parameter_count() << ',' << format_number(r.nll_per_dim)
            << ',' << format_number(r.d_kl) << '\n';
    std::cout << fmt::format("{}\tnll_per_dim={}\td_kl={}\n", row.model->label, format_number(r.nll_per_dim),
                             format_number(r.d_kl));
    for (std::size_t cell = 0; cell < r.cells.size(); ++cell) {
      const auto& s = r.cells[cell];
      if (!s.present) continue;
      cells << row.model->label << ',' << cell / data.manifest.n_iso() << ','
            << data.manifest.iso_values[cell % data.manifest.n_iso()] << ',' << s.patches << ','
            << format_number(s.real_std) << ',' << format_number(s.sampled_std) << '\n';
    }
  }
  if (!metrics || !cells) throw DataError("cannot write evaluation results to " + cfg.out);
  if (cfg.curves) write_curves(out / "curves", records, data.manifest, models, cfg.seed, false);
}

void cmd_curves(const RunConfig& cfg) {
  require_set(cfg.out, "--out", cfg.command);
  const auto data = load_dataset(cfg);
  const auto& records = data.split(split_of(cfg));
  if (records.empty()) throw DataError("the " + cfg.split + " split is empty");
  const auto models = load_models(cfg, grid_of(data.manifest));
  echo_config(cfg);
  write_curves(cfg.out, records, data.manifest, models, cfg.seed, true);
}

void cmd_sample(const RunConfig& cfg) {
  require_set(cfg.out, "--out", cfg.command);
  require(cfg.models.size() == 1, "sample needs exactly one --model");
  const auto& entry = cfg.models.front();

  struct Item {
    std::size_t height, width;
    std::vector<std::uint8_t> clean;
    std::size_t camera;
    std::uint32_t iso;
  };
  std::vector<Item> items;
  Grid grid;
  const auto check_context = [&grid](std::size_t camera, std::uint32_t iso) {
    const auto& isos = grid.iso_values;
    if (camera >= grid.n_cam || std::find(isos.begin(), isos.end(), iso) == isos.end()) {
      throw ConfigError(fmt::format("context outside the trained grid: camera {} iso {}", camera, iso));
    }
  };
  if (!cfg.dataset.empty()) {
    const auto data = load_dataset(cfg);
    grid = grid_of(data.manifest);
    if (cfg.camera) check_context(*cfg.camera, grid.iso_values.front());
    if (cfg.iso) check_context(0, *cfg.iso);
    if (cfg.clean.empty()) {
      for (const auto& r : data.split(split_of(cfg))) {
        if (items.size() == cfg.count) break;
        if (cfg.camera && r.camera != *cfg.camera) continue;
        if (cfg.iso && r.iso != *cfg.iso) continue;
        items.push_back({data.manifest.height, data.manifest.width, r.clean, r.camera, r.iso});
      }
      if (items.empty()) throw DataError("no " + cfg.split + " patches match the requested context");
    }
  } else if (is_run_dir(entry)) {
    grid = read_run_grid(entry);
  } else {
    const auto [n_cam, n_iso] = cfg.grid();
    grid = {n_cam, default_iso_values(n_iso)};
  }
  if (!cfg.clean.empty()) {
    require(cfg.camera && cfg.iso, "sampling on a clean image needs camera and iso");
    auto img = read_png(cfg.clean);
    items.push_back({img.height, img.width, std::move(img.planes), *cfg.camera, *cfg.iso});
  }
  require(!items.empty(), "sample needs --dataset or a clean image");

  const auto model = load_model(entry, grid, cfg.seed, cfg.width, cfg.checkpoint);
  for (const auto& item : items) check_context(item.camera, item.iso);
  const auto& isos = grid.iso_values;
  echo_config(cfg);

  const fs::path out(cfg.out);
  std::ofstream index(out / "samples.csv", std::ios::binary);
  index << "index,camera,iso,height,width,noise_std\n";
  std::map<std::pair<std::size_t, std::uint32_t>, std::pair<double, std::size_t>> per_cell;  // sum sq, count
  Rng rng(derive_seed(cfg.seed, 3));
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& item = items[i];
    const std::size_t n = 3 * item.height * item.width;
    // Bin centers: the clean image is exact, only the noise is random.
    Tensor clean({1, 3, item.height, item.width});
    auto cv = clean.mutable_values();
    for (std::size_t k = 0; k < n; ++k) cv[k] = (real(item.clean[k]) + real(0.5)) / real(256);
    const std::size_t cam = item.camera;
    const std::size_t iso = std::find(isos.begin(), isos.end(), item.iso) - isos.begin();
    const auto ctx = make_context(clean, std::span(&cam, 1), std::span(&iso, 1), grid.n_cam, isos.size());
    const auto noise = sample_noise(model.model, ctx, rng);

    RgbImage clean_img{item.height, item.width, item.clean};
    RgbImage noisy_img{item.height, item.width, std::vector<std::uint8_t>(n)};
    const auto nv = noise.values();
    double sq = 0;
    for (std::size_t k = 0; k < n; ++k) {
      const double v = std::clamp(double(cv[k]) + double(nv[k]), 0.0, 1.0);
      noisy_img.planes[k] = static_cast<std::uint8_t>(std::min(255.0, std::floor(v * 256.0)));
      sq += double(nv[k]) * double(nv[k]);
    }
    const auto stem = fmt::format("{:04}", i);
    save_checkpoint(out / ("noise_" + stem + ".nfck"), {{"noise", noise}});
    write_png(out / ("clean_" + stem + ".png"), clean_img);
    write_png(out / ("noisy_" + stem + ".png"), noisy_img);
    index << i << ',' << item.camera << ',' << item.iso << ',' << item.height << ',' << item.width << ','
          << format_number(std::sqrt(sq / double(n))) << '\n';
    auto& acc = per_cell[{item.camera, item.iso}];
    acc.first += sq;
    acc.second += n;
  }
  std::ofstream stds(out / "sample_std.csv", std::ios::binary);
  stds << "camera,iso,values,sampled_std\n";
  for (const auto& [key, acc] : per_cell) {
    stds << key.first << ',' << key.second << ',' << acc.second << ','
         << format_number(std::sqrt(acc.first / double(acc.second))) << '\n';
  }
  if (!index || !stds) throw DataError("cannot write samples to " + cfg.out);
  log().info("wrote {} samples to {}", items.size(), cfg.out);
}

// ---- entry point ----

namespace {

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), '\r', ' ');
  return s;
}

int report(const char* kind, const std::string& message, int code) {
  std::cerr << "nfnoise: error: " << kind << ": " << one_line(message) << std::endl;
  return code;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Conditional normalizing-flow models of sRGB camera noise", "nfnoise"};
  app.require_subcommand(1, 1);
  app.fallthrough();

  std::string config_path;
  RunConfig flags;
  app.add_option("--config", config_path, "JSON config; flags override its keys");
  auto* o_model = app.add_option("--model", flags.models, "zoo model name or run directory (repeatable)");
  auto* o_dataset = app.add_option("--dataset", flags.dataset, "dataset directory");
  auto* o_out = app.add_option("--out", flags.out, "output directory");
  auto* o_seed = app.add_option("--seed", flags.seed, "random seed");
  auto* o_epochs = app.add_option("--epochs", flags.epochs, "training epochs");
  auto* o_batch = app.add_option("--batch", flags.batch, "mini-batch size");
  auto* o_lr = app.add_option("--lr", flags.lr, "Adam learning rate");
  auto* o_threads = app.add_option("--threads", flags.threads, "worker thread cap (0: all cores)");
  auto* o_cells = app.add_option("--cells", flags.cells, "synthetic grid, cameras x ISO levels (e.g. 5x5)");
  auto* o_curves = app.add_flag("--curves", flags.curves, "also write variance-vs-intensity curves");
  std::size_t width = 0, camera = 0;
  std::uint32_t iso = 0;
  auto* o_width = app.add_option("--width", width, "conditioner width override");
  auto* o_split = app.add_option("--split", flags.split, "dataset split to evaluate or sample (train, val)");
  auto* o_checkpoint = app.add_option("--checkpoint", flags.checkpoint, "checkpoint file for a single model");
  auto* o_count = app.add_option("--count", flags.count, "number of patches to sample");
  auto* o_camera = app.add_option("--camera", camera, "camera index to sample");
  auto* o_iso = app.add_option("--iso", iso, "ISO value to sample");
  auto* o_clean = app.add_option("--clean", flags.clean, "clean PNG to sample on");
  auto* o_generator = app.add_option("--generator", flags.generator, "synth-data source (isp, awgn, png)");
  auto* o_source = app.add_option("--source", flags.source, "paired PNG directory for --generator png");
  auto* o_patch = app.add_option("--patch", flags.patch, "patch size in pixels");
  auto* o_n_per_cell = app.add_option("--n-per-cell", flags.n_per_cell, "synthetic patches per camera-ISO cell");
  auto* o_train_frac = app.add_option("--train-frac", flags.train_frac, "fraction of each cell used for training");
  std::size_t stride = 0;
  auto* o_stride = app.add_option("--stride", stride, "patch stride for --generator png");

  app.add_subcommand("synth-data", "generate a synthetic dataset");
  app.add_subcommand("train", "train models from the zoo");
  app.add_subcommand("eval", "evaluate models on a dataset split");
  app.add_subcommand("sample", "sample noise for clean patches");
  app.add_subcommand("curves", "variance-vs-intensity curves of data and models");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report("config", e.what(), 2);
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    const auto command = app.get_subcommands().front()->get_name();
    require(cfg.command.empty() || cfg.command == command,
            "config is for '" + cfg.command + "' but the command is '" + command + "'");
    cfg.command = command;
    if (o_model->count()) cfg.models = flags.models;
    if (o_dataset->count()) cfg.dataset = flags.dataset;
    if (o_out->count()) cfg.out = flags.out;
    if (o_seed->count()) cfg.seed = flags.seed;
    if (o_epochs->count()) cfg.epochs = flags.epochs;
    if (o_batch->count()) cfg.batch = flags.batch;
    if (o_lr->count()) cfg.lr = flags.lr;
    if (o_threads->count()) cfg.threads = flags.threads;
    if (o_cells->count()) cfg.cells = flags.cells;
    if (o_curves->count()) cfg.curves = true;
    if (o_width->count()) cfg.width = width;
    if (o_split->count()) cfg.split = flags.split;
    if (o_checkpoint->count()) cfg.checkpoint = flags.checkpoint;
    if (o_count->count()) cfg.count = flags.count;
    if (o_camera->count()) cfg.camera = camera;
    if (o_iso->count()) cfg.iso = iso;
    if (o_clean->count()) cfg.clean = flags.clean;
    if (o_generator->count()) cfg.generator = flags.generator;
    if (o_source->count()) cfg.source = flags.source;
    if (o_stride->count()) cfg.stride = stride;
    if (o_patch->count()) cfg.patch = flags.patch;
    if (o_n_per_cell->count()) cfg.n_per_cell = flags.n_per_cell;
    if (o_train_frac->count()) cfg.train_frac = flags.train_frac;
    cfg.validate();

    if (command == "synth-data") cmd_synth_data(cfg);
    else if (command == "train") cmd_train(cfg);
    else if (command == "eval") cmd_eval(cfg);
    else if (command == "sample") cmd_sample(cfg);
    else cmd_curves(cfg);
    return 0;
  } catch (const ConfigError& e) {
    return report("config", e.what(), 2);
  } catch (const DataError& e) {
    return report("data", e.what(), 3);
  } catch (const NumericError& e) {
    return report("numeric", e.what(), 4);
  } catch (const fs::filesystem_error& e) {
    return report("data", e.what(), 3);
  } catch (const std::exception& e) {
    return report("internal", e.what(), 1);
  }
}

}  // namespace nfnoise::cli
