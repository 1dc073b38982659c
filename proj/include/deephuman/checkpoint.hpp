#pragma once

// DHCK parameter checkpoints:
//   "DHCK" | version u32 | count u32 |
//   per entry: name_len u32 | name bytes | rank u32 | extents u32[rank] | f32[numel]
// All integers and floats little-endian.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "deephuman/optim.hpp"
#include "deephuman/tensor.hpp"

namespace dh {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path);

std::vector<char> encode_checkpoint(const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> decode_checkpoint(const std::vector<char>& bytes);

template <typename T>
std::vector<CheckpointEntry> entries_from(const ParameterStore<T>& store);

/// Copies matching entries into the store. Shapes must agree; returns the names
/// of store parameters that had no entry.
template <typename T>
std::vector<std::string> load_into(ParameterStore<T>& store, const std::vector<CheckpointEntry>& entries);

}  // namespace dh
