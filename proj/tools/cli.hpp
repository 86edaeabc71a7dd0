#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "nfnoise/dataset.hpp"
#include "nfnoise/flow_model.hpp"
#include "nfnoise/model_zoo.hpp"

namespace nfnoise::cli {

/// Effective settings of one command. Loaded from a flat JSON document, then
/// overridden by command-line flags; the result is echoed to the output
/// directory as config.json.
struct RunConfig {
  std::string command;
  std::vector<std::string> models;  // zoo names or run directories
  std::string dataset;
  std::string out;
  std::uint64_t seed = 0;
  unsigned threads = 0;  // 0: hardware concurrency

  // training
  std::size_t epochs = 20;
  std::size_t batch = 128;
  double lr = 1e-3;
  std::optional<double> clip_norm;
  std::size_t eval_interval = 1;
  std::size_t eval_batch = 256;
  std::optional<std::size_t> width;  // conditioner width override

  // synthetic data
  std::string cells = "5x5";
  std::size_t n_per_cell = 200;
  std::size_t patch = 32;
  double train_frac = 0.8;
  std::string generator = "isp";  // "isp", "awgn" or "png"
  double awgn_sigma = 0.05;       // sigma of cell 0; clean values span [0.3, 0.7]
  double awgn_step = 1.0;         // sigma ratio between consecutive cells
  std::string synth_config;       // full generator JSON; replaces the above
  std::string source;             // "png": directory with clean/, noisy/ and metadata.csv
  std::optional<std::size_t> stride;  // "png": patch stride, default `patch`

  // evaluation and sampling
  std::string split = "val";
  bool curves = false;
  std::string checkpoint;  // explicit checkpoint for a single model
  std::size_t count = 16;
  std::optional<std::size_t> camera;
  std::optional<std::uint32_t> iso;  // ISO value, not index
  std::string clean;                 // clean PNG to sample on

  /// Throws ConfigError for values outside their domain.
  void validate() const;
  /// Number of cameras and ISO levels in `cells`.
  std::pair<std::size_t, std::size_t> grid() const;
};

nlohmann::json to_json(const RunConfig& cfg);
/// Strict: unknown keys and wrong types throw ConfigError. Missing keys keep
/// their defaults.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// Camera count and ISO table a model is conditioned on.
struct Grid {
  std::size_t n_cam = 0;
  std::vector<std::uint32_t> iso_values;

  bool operator==(const Grid&) const = default;
};

Grid grid_of(const DatasetManifest& manifest);

/// A model ready for evaluation, with the grid it was built for.
struct LoadedModel {
  std::string label;
  ModelSpec spec;
  FlowModel model;
  Grid grid;
};

/// True when `entry` names a run directory written by save_run.
bool is_run_dir(const std::string& entry);
/// Grid stored in a run directory.
Grid read_run_grid(const std::filesystem::path& dir);

/// Writes model_spec.json, grid.json and init.nfck into `dir`.
void save_run(const std::filesystem::path& dir, const ModelSpec& spec, const FlowModel& model, const Grid& grid);
/// `entry` is a run directory (best, last, then init checkpoint; its grid
/// must equal `grid`) or a zoo name built at `seed` on `grid`.
/// `checkpoint`, when set, replaces the model's state.
LoadedModel load_model(const std::string& entry, const Grid& grid, std::uint64_t seed,
                       const std::optional<std::size_t>& width, const std::string& checkpoint = {});

void cmd_synth_data(const RunConfig& cfg);
void cmd_train(const RunConfig& cfg);
void cmd_eval(const RunConfig& cfg);
void cmd_sample(const RunConfig& cfg);
void cmd_curves(const RunConfig& cfg);

/// Parses arguments, runs the command and maps failures to exit codes:
/// 0 success, 1 other error, 2 config error, 3 data error, 4 numeric failure.
/// Errors are reported as one line on stderr: "nfnoise: error: <kind>: <message>".
int run(int argc, const char* const* argv);

}  // namespace nfnoise::cli
