#include "nfnoise/checkpoint.hpp"

#include <fstream>
#include <limits>

#include "nfnoise/binary_io.hpp"
#include "nfnoise/error.hpp"

namespace nfnoise::inline NFNOISE_ABI {

void write_checkpoint(std::ostream& out, const std::vector<NamedTensor>& tensors) {
  out.write("NFCK", 4);
  io::write_le<std::uint32_t>(out, kCheckpointVersion);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, tensor] : tensors) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw ConfigError("checkpoint name too long");
    io::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    const auto& shape = tensor.shape();
    io::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(shape.size()));
    for (auto d : shape) io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (real v : tensor.values()) io::write_le<float>(out, static_cast<float>(v));
  }
  if (!out) throw DataError("failed writing checkpoint");
}

std::vector<NamedTensor> read_checkpoint(std::istream& in) {
  io::expect_magic(in, "NFCK", "checkpoint");
  const auto version = io::read_le<std::uint32_t>(in, "checkpoint version");
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = io::read_le<std::uint32_t>(in, "checkpoint count");
  std::vector<NamedTensor> tensors;
  tensors.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = io::read_le<std::uint16_t>(in, "tensor name length");
    std::string name(name_len, '\0');
    io::read_exact(in, name.data(), name_len, "tensor name");
    const auto rank = io::read_le<std::uint8_t>(in, "tensor rank");
    Shape shape(rank);
    for (auto& d : shape) d = io::read_le<std::uint32_t>(in, "tensor dims");
    std::vector<real> values(shape_numel(shape));
    for (auto& v : values) v = static_cast<real>(io::read_le<float>(in, "tensor values"));
    tensors.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  return tensors;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_checkpoint(out, tensors);
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace nfnoise::inline NFNOISE_ABI
