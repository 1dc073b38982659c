#include "deephuman/checkpoint.hpp"

#include <fstream>

#include "binary_io.hpp"

namespace dh {

namespace detail {

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace detail

std::vector<char> encode_checkpoint(const std::vector<CheckpointEntry>& entries) {
  detail::ByteWriter w;
  w.bytes("DHCK");
  w.u32(kCheckpointVersion);
  w.u32(std::uint32_t(entries.size()));
  for (const auto& e : entries) {
    if (e.values.size() != numel(e.shape))
      throw std::invalid_argument("checkpoint entry " + e.name + " has inconsistent shape");
    w.u32(std::uint32_t(e.name.size()));
    w.bytes(e.name);
    w.u32(std::uint32_t(e.shape.size()));
    for (auto x : e.shape) w.u32(std::uint32_t(x));
    w.raw(e.values.data(), e.values.size() * sizeof(float));
  }
  return std::move(w.buffer());
}

std::vector<CheckpointEntry> decode_checkpoint(const std::vector<char>& bytes) {
  detail::ByteReader r(bytes, "checkpoint");
  if (bytes.size() < 4 || r.str(4) != "DHCK") throw FormatError("checkpoint: bad magic (expected DHCK)");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const auto count = r.u32();
  std::vector<CheckpointEntry> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name = r.str(r.u32());
    const auto rank = r.u32();
    for (std::uint32_t k = 0; k < rank; ++k) e.shape.push_back(r.u32());
    const std::size_t n = numel(e.shape);
    if (n * sizeof(float) > r.remaining()) throw FormatError("checkpoint: truncated entry " + e.name);
    e.values.resize(n);
    r.raw(e.values.data(), n * sizeof(float));
    out.push_back(std::move(e));
  }
  if (!r.at_end()) throw FormatError("checkpoint: trailing bytes");
  return out;
}

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries) {
  detail::write_file(path, encode_checkpoint(entries));
}

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(detail::read_file(path));
}

template <typename T>
std::vector<CheckpointEntry> entries_from(const ParameterStore<T>& store) {
  std::vector<CheckpointEntry> out;
  for (const auto& p : store.params()) {
    CheckpointEntry e{p.name, p.tensor.shape(), {}};
    e.values.assign(p.tensor.values().begin(), p.tensor.values().end());
    out.push_back(std::move(e));
  }
  return out;
}

template <typename T>
std::vector<std::string> load_into(ParameterStore<T>& store, const std::vector<CheckpointEntry>& entries) {
  std::map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;
  std::vector<std::string> missing;
  for (auto& p : store.params()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      missing.push_back(p.name);
      continue;
    }
    if (it->second->shape != p.tensor.shape())
      throw FormatError("checkpoint: parameter " + p.name + " has shape " + shape_str(it->second->shape) +
                        ", model expects " + shape_str(p.tensor.shape()));
    auto dst = p.tensor.mutable_values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = T(it->second->values[i]);
  }
  return missing;
}

template std::vector<CheckpointEntry> entries_from(const ParameterStore<float>&);
template std::vector<CheckpointEntry> entries_from(const ParameterStore<double>&);
template std::vector<std::string> load_into(ParameterStore<float>&, const std::vector<CheckpointEntry>&);
template std::vector<std::string> load_into(ParameterStore<double>&, const std::vector<CheckpointEntry>&);

}  // namespace dh
