#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <span>
#include <string>
#include <vector>

#include "nfnoise/context.hpp"
#include "nfnoise/tensor.hpp"

namespace nfnoise::inline NFNOISE_ABI {

/// One paired patch. Planes are channel-major: [3,H,W] u8.
struct NoisePatchRecord {
  std::uint16_t camera = 0;
  std::uint32_t iso = 0;  // ISO value, e.g. 100..3200
  std::uint32_t scene = 0;
  std::vector<std::uint8_t> clean;
  std::vector<std::uint8_t> noisy;

  bool operator==(const NoisePatchRecord&) const = default;
};

/// Full aligned image pair, planar [3,H,W] u8.
struct ImagePair {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> clean;
  std::vector<std::uint8_t> noisy;
  std::uint16_t camera = 0;
  std::uint32_t iso = 0;
  std::uint32_t scene = 0;
};

enum class Split : std::uint8_t { train, val };

struct ManifestEntry {
  Split split = Split::train;
  std::uint64_t offset = 0;  // byte offset of the record inside its split blob
  std::uint16_t camera = 0;
  std::uint32_t iso = 0;
  std::uint32_t scene = 0;

  bool operator==(const ManifestEntry&) const = default;
};

inline constexpr std::uint32_t kManifestVersion = 1;
inline constexpr std::uint32_t kPatchFileVersion = 1;

struct DatasetManifest {
  std::size_t n_cam = 5;
  std::vector<std::uint32_t> iso_values;  // ISO index = position in this list
  std::size_t height = 32;
  std::size_t width = 32;
  double train_frac = 0.8;
  std::uint64_t split_seed = 0;
  std::vector<ManifestEntry> records;

  std::size_t n_iso() const { return iso_values.size(); }
  std::size_t n_cells() const { return n_cam * n_iso(); }
  /// Throws DataError for an ISO value not in the table.
  std::size_t iso_index(std::uint32_t iso) const;
  /// camera * n_iso + iso index; throws DataError when out of the grid.
  std::size_t cell_index(std::uint16_t camera, std::uint32_t iso) const;
  /// Bytes per record in a patch blob.
  std::size_t record_bytes() const { return 12 + 2 * 3 * height * width; }

  bool operator==(const DatasetManifest&) const = default;
};

/// In-memory dataset; record i of `train` matches the i-th train entry of the
/// manifest, likewise for `val`.
struct Dataset {
  DatasetManifest manifest;
  std::vector<NoisePatchRecord> train;
  std::vector<NoisePatchRecord> val;

  const std::vector<NoisePatchRecord>& split(Split s) const { return s == Split::train ? train : val; }
};

struct DequantizedPatch {
  Tensor clean;  // [3,H,W] in [0,1)
  Tensor noisy;
  Tensor noise;  // noisy - clean, in (-1,1)
};

/// (v + u) / 256 with independent u ~ U[0,1) for clean and noisy.
DequantizedPatch dequantize(const NoisePatchRecord& record, std::size_t height, std::size_t width, Rng& rng);

/// A batch of dequantized noise with its conditioning.
struct NoiseBatch {
  Tensor noise;  // [N,3,H,W]
  ConditioningContext ctx;
  std::vector<std::size_t> cells;  // per-sample cell index
};

/// Dequantizes records[indices[i]] in order, drawing from `rng`.
NoiseBatch make_batch(std::span<const NoisePatchRecord> records, std::span<const std::size_t> indices,
                      const DatasetManifest& manifest, Rng& rng);

/// Windows of `patch` x `patch` pixels every `stride` pixels, row-major.
/// Throws DataError if the image is smaller than one patch.
std::vector<NoisePatchRecord> extract_patches(const ImagePair& image, std::size_t patch, std::size_t stride);

/// Manifest with every record in the train split, in the given order.
DatasetManifest make_manifest(std::span<const NoisePatchRecord> records, std::size_t n_cam,
                              std::vector<std::uint32_t> iso_values, std::size_t height, std::size_t width);

/// Per-cell random split: n_train = max(1, min(n - 1, round(frac * n))).
/// Cells with fewer than two records go to train with a logged warning.
DatasetManifest stratified_split(DatasetManifest manifest, double train_frac, std::uint64_t seed);

/// Per-cell (train, val) record counts, indexed by cell.
std::vector<std::pair<std::size_t, std::size_t>> cell_counts(const DatasetManifest& manifest);

nlohmann::json to_json(const DatasetManifest& manifest);
/// Throws DataError for a malformed or inconsistent manifest.
DatasetManifest manifest_from_json(const nlohmann::json& j);
std::string manifest_text(const DatasetManifest& manifest);

/// Writes one "NFPD" blob. Layout, little-endian: magic, u32 version, u32
/// count, u16 height, u16 width, u16 channels (3), u16 reserved; then per
/// record u16 camera, u16 reserved, u32 iso, u32 scene, clean and noisy
/// planes.
void write_patch_file(const std::filesystem::path& path, std::span<const NoisePatchRecord> records,
                      std::size_t height, std::size_t width);
std::vector<NoisePatchRecord> read_patch_file(const std::filesystem::path& path, std::size_t height,
                                              std::size_t width);

/// Splits `records` by the manifest's assignment and fixes blob offsets.
Dataset assemble_dataset(DatasetManifest manifest, std::span<const NoisePatchRecord> records);

/// assemble_dataset, then writes manifest.json, train.nfpd and val.nfpd
/// into `dir`.
Dataset write_dataset(const std::filesystem::path& dir, DatasetManifest manifest,
                      std::span<const NoisePatchRecord> records);
/// Throws DataError when files are missing or disagree with the manifest.
Dataset read_dataset(const std::filesystem::path& dir);

/// Reads paired PNGs: `dir`/clean/<file>, `dir`/noisy/<file> and
/// `dir`/metadata.csv with columns file, camera, iso (and optional scene),
/// then cuts patches. Cameras must be 0-based indices.
std::vector<NoisePatchRecord> ingest_png_pairs(const std::filesystem::path& dir, std::size_t patch,
                                               std::size_t stride);

/// Sorted distinct ISO values of `records`.
std::vector<std::uint32_t> iso_table(std::span<const NoisePatchRecord> records);

}  // namespace nfnoise::inline NFNOISE_ABI
