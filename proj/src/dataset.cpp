#include "nfnoise/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "nfnoise/binary_io.hpp"
#include "nfnoise/error.hpp"
#include "nfnoise/log.hpp"
#include "nfnoise/png_io.hpp"

namespace nfnoise::inline NFNOISE_ABI {

namespace {

using nlohmann::json;

constexpr std::size_t kChannels = 3;
constexpr std::size_t kHeaderBytes = 20;
constexpr double kLevels = 256.0;

const char* split_name(Split s) { return s == Split::train ? "train" : "val"; }

template <class T>
T json_get(const json& j, const char* key) {
  if (!j.contains(key)) throw DataError(std::string("manifest: missing '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw DataError(std::string("manifest: bad value for '") + key + "'");
  }
}

void fill_dequantized(std::span<const std::uint8_t> codes, std::span<real> out, Rng& rng) {
  for (std::size_t i = 0; i < codes.size(); ++i) {
    out[i] = static_cast<real>((codes[i] + rng.uniform()) / kLevels);
  }
}

void check_record(const NoisePatchRecord& r, std::size_t height, std::size_t width) {
  const std::size_t n = kChannels * height * width;
  if (r.clean.size() != n || r.noisy.size() != n) {
    throw DataError("patch planes do not match " + std::to_string(height) + "x" + std::to_string(width));
  }
}

}  // namespace

std::size_t DatasetManifest::iso_index(std::uint32_t iso) const {
  const auto it = std::find(iso_values.begin(), iso_values.end(), iso);
  if (it == iso_values.end()) throw DataError("ISO " + std::to_string(iso) + " is not in the dataset's ISO table");
  return static_cast<std::size_t>(it - iso_values.begin());
}

std::size_t DatasetManifest::cell_index(std::uint16_t camera, std::uint32_t iso) const {
  if (camera >= n_cam) throw DataError("camera " + std::to_string(camera) + " outside the camera grid");
  return camera * n_iso() + iso_index(iso);
}

DequantizedPatch dequantize(const NoisePatchRecord& record, std::size_t height, std::size_t width, Rng& rng) {
  check_record(record, height, width);
  const Shape shape{kChannels, height, width};
  DequantizedPatch out{Tensor(shape), Tensor(shape), Tensor(shape)};
  fill_dequantized(record.clean, out.clean.mutable_values(), rng);
  fill_dequantized(record.noisy, out.noisy.mutable_values(), rng);
  auto noise = out.noise.mutable_values();
  const auto c = out.clean.values();
  const auto y = out.noisy.values();
  for (std::size_t i = 0; i < noise.size(); ++i) noise[i] = y[i] - c[i];
  return out;
}

NoiseBatch make_batch(std::span<const NoisePatchRecord> records, std::span<const std::size_t> indices,
                      const DatasetManifest& manifest, Rng& rng) {
  const std::size_t n = indices.size();
  if (n == 0) throw DataError("empty batch");
  const std::size_t plane = kChannels * manifest.height * manifest.width;
  const Shape shape{n, kChannels, manifest.height, manifest.width};
  Tensor clean(shape), noisy(shape), noise(shape);
  auto cv = clean.mutable_values();
  auto yv = noisy.mutable_values();
  std::vector<std::size_t> cam(n), iso(n);
  NoiseBatch batch;
  batch.cells.resize(n);
  for (std::size_t b = 0; b < n; ++b) {
    const auto& r = records[indices[b]];
    check_record(r, manifest.height, manifest.width);
    fill_dequantized(r.clean, cv.subspan(b * plane, plane), rng);
    fill_dequantized(r.noisy, yv.subspan(b * plane, plane), rng);
    cam[b] = r.camera;
    iso[b] = manifest.iso_index(r.iso);
    batch.cells[b] = manifest.cell_index(r.camera, r.iso);
  }
  auto nv = noise.mutable_values();
  for (std::size_t i = 0; i < nv.size(); ++i) nv[i] = yv[i] - cv[i];
  batch.noise = noise;
  batch.ctx = make_context(clean, cam, iso, manifest.n_cam, manifest.n_iso());
  return batch;
}

std::vector<NoisePatchRecord> extract_patches(const ImagePair& image, std::size_t patch, std::size_t stride) {
  if (patch == 0 || stride == 0) throw ConfigError("patch size and stride must be positive");
  const std::size_t plane = image.height * image.width;
  if (image.clean.size() != kChannels * plane || image.noisy.size() != kChannels * plane) {
    throw DataError("image planes do not match the stated size");
  }
  if (image.height < patch || image.width < patch) {
    throw DataError("image of " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                    " is smaller than a " + std::to_string(patch) + " pixel patch");
  }
  std::vector<NoisePatchRecord> out;
  for (std::size_t top = 0; top + patch <= image.height; top += stride) {
    for (std::size_t left = 0; left + patch <= image.width; left += stride) {
      NoisePatchRecord r{image.camera, image.iso, image.scene, {}, {}};
      r.clean.reserve(kChannels * patch * patch);
      r.noisy.reserve(kChannels * patch * patch);
      for (std::size_t c = 0; c < kChannels; ++c) {
        for (std::size_t y = top; y < top + patch; ++y) {
          const std::size_t row = c * plane + y * image.width + left;
          r.clean.insert(r.clean.end(), image.clean.begin() + row, image.clean.begin() + row + patch);
          r.noisy.insert(r.noisy.end(), image.noisy.begin() + row, image.noisy.begin() + row + patch);
        }
      }
      out.push_back(std::move(r));
    }
  }
  return out;
}

DatasetManifest make_manifest(std::span<const NoisePatchRecord> records, std::size_t n_cam,
                              std::vector<std::uint32_t> iso_values, std::size_t height, std::size_t width) {
  DatasetManifest m;
  m.n_cam = n_cam;
  m.iso_values = std::move(iso_values);
  m.height = height;
  m.width = width;
  m.records.reserve(records.size());
  for (const auto& r : records) {
    check_record(r, height, width);
    m.cell_index(r.camera, r.iso);
    m.records.push_back({Split::train, 0, r.camera, r.iso, r.scene});
  }
  return m;
}

DatasetManifest stratified_split(DatasetManifest manifest, double train_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw ConfigError("train fraction must lie in (0, 1)");
  manifest.train_frac = train_frac;
  manifest.split_seed = seed;
  std::vector<std::vector<std::size_t>> by_cell(manifest.n_cells());
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& e = manifest.records[i];
    by_cell[manifest.cell_index(e.camera, e.iso)].push_back(i);
  }
  for (std::size_t cell = 0; cell < by_cell.size(); ++cell) {
    auto& members = by_cell[cell];
    const std::size_t n = members.size();
    if (n == 0) continue;
    if (n < 2) {
      log().warn("cell (camera {}, ISO {}) has {} record(s); all assigned to train", cell / manifest.n_iso(),
                 manifest.iso_values[cell % manifest.n_iso()], n);
      for (auto i : members) manifest.records[i].split = Split::train;
      continue;
    }
    Rng rng(derive_seed(seed, cell));
    rng.shuffle(std::span<std::size_t>(members));
    const auto wanted = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
    const std::size_t n_train = std::max<std::size_t>(1, std::min(n - 1, wanted));
    for (std::size_t k = 0; k < n; ++k) manifest.records[members[k]].split = k < n_train ? Split::train : Split::val;
  }
  return manifest;
}

std::vector<std::pair<std::size_t, std::size_t>> cell_counts(const DatasetManifest& manifest) {
  std::vector<std::pair<std::size_t, std::size_t>> counts(manifest.n_cells());
  for (const auto& e : manifest.records) {
    auto& c = counts[manifest.cell_index(e.camera, e.iso)];
    (e.split == Split::train ? c.first : c.second)++;
  }
  return counts;
}

json to_json(const DatasetManifest& m) {
  json cells = json::array();
  const auto counts = cell_counts(m);
  for (std::size_t cell = 0; cell < counts.size(); ++cell) {
    cells.push_back({{"camera", cell / m.n_iso()},
                     {"iso", m.iso_values[cell % m.n_iso()]},
                     {"train", counts[cell].first},
                     {"val", counts[cell].second}});
  }
  json records = json::array();
  for (const auto& e : m.records) {
    records.push_back({{"split", split_name(e.split)},
                       {"offset", e.offset},
                       {"camera", e.camera},
                       {"iso", e.iso},
                       {"scene", e.scene}});
  }
  return {{"schema_version", kManifestVersion},
          {"n_cam", m.n_cam},
          {"iso_values", m.iso_values},
          {"patch", {{"height", m.height}, {"width", m.width}, {"channels", kChannels}}},
          {"files", {{"train", "train.nfpd"}, {"val", "val.nfpd"}}},
          {"split", {{"train_frac", m.train_frac}, {"seed", m.split_seed}}},
          {"cells", cells},
          {"records", records}};
}

DatasetManifest manifest_from_json(const json& j) {
  if (!j.is_object()) throw DataError("manifest: not a JSON object");
  if (json_get<std::uint32_t>(j, "schema_version") != kManifestVersion) {
    throw DataError("manifest: unsupported schema version");
  }
  DatasetManifest m;
  m.n_cam = json_get<std::size_t>(j, "n_cam");
  m.iso_values = json_get<std::vector<std::uint32_t>>(j, "iso_values");
  const auto patch = json_get<json>(j, "patch");
  m.height = json_get<std::size_t>(patch, "height");
  m.width = json_get<std::size_t>(patch, "width");
  if (json_get<std::size_t>(patch, "channels") != kChannels) throw DataError("manifest: only 3-channel patches");
  const auto split = json_get<json>(j, "split");
  m.train_frac = json_get<double>(split, "train_frac");
  m.split_seed = json_get<std::uint64_t>(split, "seed");
  if (m.n_cam == 0 || m.iso_values.empty() || m.height == 0 || m.width == 0) {
    throw DataError("manifest: empty grid or patch size");
  }
  if (std::set<std::uint32_t>(m.iso_values.begin(), m.iso_values.end()).size() != m.iso_values.size()) {
    throw DataError("manifest: duplicate ISO values");
  }
  for (const auto& r : json_get<json>(j, "records")) {
    ManifestEntry e;
    const auto s = json_get<std::string>(r, "split");
    if (s != "train" && s != "val") throw DataError("manifest: unknown split '" + s + "'");
    e.split = s == "train" ? Split::train : Split::val;
    e.offset = json_get<std::uint64_t>(r, "offset");
    e.camera = json_get<std::uint16_t>(r, "camera");
    e.iso = json_get<std::uint32_t>(r, "iso");
    e.scene = json_get<std::uint32_t>(r, "scene");
    m.cell_index(e.camera, e.iso);
    m.records.push_back(e);
  }
  if (to_json(m)["cells"] != json_get<json>(j, "cells")) throw DataError("manifest: cell table disagrees with records");
  return m;
}

std::string manifest_text(const DatasetManifest& manifest) { return to_json(manifest).dump(2) + "\n"; }

void write_patch_file(const std::filesystem::path& path, std::span<const NoisePatchRecord> records,
                      std::size_t height, std::size_t width) {
  if (height > 0xFFFF || width > 0xFFFF) throw DataError("patch size exceeds the blob format");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write("NFPD", 4);
  io::write_le<std::uint32_t>(out, kPatchFileVersion);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(records.size()));
  io::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(height));
  io::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(width));
  io::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(kChannels));
  io::write_le<std::uint16_t>(out, 0);
  for (const auto& r : records) {
    check_record(r, height, width);
    io::write_le<std::uint16_t>(out, r.camera);
    io::write_le<std::uint16_t>(out, 0);
    io::write_le<std::uint32_t>(out, r.iso);
    io::write_le<std::uint32_t>(out, r.scene);
    out.write(reinterpret_cast<const char*>(r.clean.data()), static_cast<std::streamsize>(r.clean.size()));
    out.write(reinterpret_cast<const char*>(r.noisy.data()), static_cast<std::streamsize>(r.noisy.size()));
  }
  if (!out) throw DataError("write failed for " + path.string());
}

std::vector<NoisePatchRecord> read_patch_file(const std::filesystem::path& path, std::size_t height,
                                              std::size_t width) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  const std::string label = "patch file " + path.string();
  const char* what = label.c_str();
  io::expect_magic(in, "NFPD", what);
  if (io::read_le<std::uint32_t>(in, what) != kPatchFileVersion) throw DataError(label + ": unsupported version");
  const auto count = io::read_le<std::uint32_t>(in, what);
  const auto h = io::read_le<std::uint16_t>(in, what);
  const auto w = io::read_le<std::uint16_t>(in, what);
  const auto channels = io::read_le<std::uint16_t>(in, what);
  io::read_le<std::uint16_t>(in, what);
  if (h != height || w != width || channels != kChannels) throw DataError(label + ": patch size disagrees with manifest");
  const std::size_t n = kChannels * height * width;
  std::vector<NoisePatchRecord> records(count);
  for (auto& r : records) {
    r.camera = io::read_le<std::uint16_t>(in, what);
    io::read_le<std::uint16_t>(in, what);
    r.iso = io::read_le<std::uint32_t>(in, what);
    r.scene = io::read_le<std::uint32_t>(in, what);
    r.clean.resize(n);
    r.noisy.resize(n);
    io::read_exact(in, reinterpret_cast<char*>(r.clean.data()), n, what);
    io::read_exact(in, reinterpret_cast<char*>(r.noisy.data()), n, what);
  }
  if (in.peek() != std::char_traits<char>::eof()) throw DataError(label + ": trailing bytes");
  return records;
}

Dataset assemble_dataset(DatasetManifest manifest, std::span<const NoisePatchRecord> records) {
  if (records.size() != manifest.records.size()) throw DataError("manifest and records differ in length");
  Dataset ds;
  std::uint64_t next[2] = {kHeaderBytes, kHeaderBytes};
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& e = manifest.records[i];
    const auto& r = records[i];
    if (e.camera != r.camera || e.iso != r.iso || e.scene != r.scene) {
      throw DataError("manifest entry " + std::to_string(i) + " does not describe its record");
    }
    check_record(r, manifest.height, manifest.width);
    auto& slot = next[static_cast<int>(e.split)];
    e.offset = slot;
    slot += manifest.record_bytes();
    (e.split == Split::train ? ds.train : ds.val).push_back(r);
  }
  ds.manifest = std::move(manifest);
  return ds;
}

Dataset write_dataset(const std::filesystem::path& dir, DatasetManifest manifest,
                      std::span<const NoisePatchRecord> records) {
  Dataset ds = assemble_dataset(std::move(manifest), records);
  std::filesystem::create_directories(dir);
  write_patch_file(dir / "train.nfpd", ds.train, ds.manifest.height, ds.manifest.width);
  write_patch_file(dir / "val.nfpd", ds.val, ds.manifest.height, ds.manifest.width);
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  out << manifest_text(ds.manifest);
  if (!out) throw DataError("cannot write " + (dir / "manifest.json").string());
  return ds;
}

Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json", std::ios::binary);
  if (!in) throw DataError("no manifest.json in " + dir.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("manifest.json is not valid JSON: " + std::string(e.what()));
  }
  Dataset ds;
  ds.manifest = manifest_from_json(j);
  const auto& m = ds.manifest;
  ds.train = read_patch_file(dir / "train.nfpd", m.height, m.width);
  ds.val = read_patch_file(dir / "val.nfpd", m.height, m.width);
  std::size_t k[2] = {0, 0};
  for (const auto& e : m.records) {
    const auto& split = e.split == Split::train ? ds.train : ds.val;
    auto& i = k[static_cast<int>(e.split)];
    if (i >= split.size()) throw DataError("manifest lists more records than the patch files hold");
    const auto& r = split[i];
    if (r.camera != e.camera || r.iso != e.iso || r.scene != e.scene ||
        e.offset != kHeaderBytes + i * m.record_bytes()) {
      throw DataError("manifest disagrees with " + std::string(split_name(e.split)) + ".nfpd at record " +
                      std::to_string(i));
    }
    ++i;
  }
  if (k[0] != ds.train.size() || k[1] != ds.val.size()) throw DataError("patch files hold unlisted records");
  return ds;
}

std::vector<std::uint32_t> iso_table(std::span<const NoisePatchRecord> records) {
  std::set<std::uint32_t> values;
  for (const auto& r : records) values.insert(r.iso);
  return {values.begin(), values.end()};
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) {
    const auto first = field.find_first_not_of(" \t\r");
    const auto last = field.find_last_not_of(" \t\r");
    fields.push_back(first == std::string::npos ? "" : field.substr(first, last - first + 1));
  }
  return fields;
}

unsigned long parse_unsigned(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const auto v = std::stoul(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw DataError("metadata.csv: bad " + what + " '" + text + "'");
  }
}

}  // namespace

std::vector<NoisePatchRecord> ingest_png_pairs(const std::filesystem::path& dir, std::size_t patch,
                                               std::size_t stride) {
  std::ifstream csv(dir / "metadata.csv");
  if (!csv) throw DataError("no metadata.csv in " + dir.string());
  std::string line;
  if (!std::getline(csv, line)) throw DataError("metadata.csv is empty");
  const auto header = split_csv_line(line);
  std::map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < header.size(); ++i) column[header[i]] = i;
  for (const char* required : {"file", "camera", "iso"}) {
    if (!column.count(required)) throw DataError(std::string("metadata.csv lacks a '") + required + "' column");
  }
  std::vector<NoisePatchRecord> out;
  std::uint32_t row_index = 0;
  while (std::getline(csv, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size()) throw DataError("metadata.csv: wrong field count in '" + line + "'");
    const auto& file = fields[column["file"]];
    const auto clean = read_png(dir / "clean" / file);
    const auto noisy = read_png(dir / "noisy" / file);
    if (clean.height != noisy.height || clean.width != noisy.width) {
      throw DataError("clean and noisy sizes differ for " + file);
    }
    ImagePair pair;
    pair.height = clean.height;
    pair.width = clean.width;
    pair.clean = clean.planes;
    pair.noisy = noisy.planes;
    const auto cam = parse_unsigned(fields[column["camera"]], "camera");
    if (cam > 0xFFFF) throw DataError("metadata.csv: camera index out of range");
    pair.camera = static_cast<std::uint16_t>(cam);
    pair.iso = static_cast<std::uint32_t>(parse_unsigned(fields[column["iso"]], "iso"));
    pair.scene = column.count("scene") ? static_cast<std::uint32_t>(parse_unsigned(fields[column["scene"]], "scene"))
                                       : row_index;
    auto patches = extract_patches(pair, patch, stride);
    out.insert(out.end(), std::make_move_iterator(patches.begin()), std::make_move_iterator(patches.end()));
    ++row_index;
  }
  return out;
}

}  // namespace nfnoise::inline NFNOISE_ABI
