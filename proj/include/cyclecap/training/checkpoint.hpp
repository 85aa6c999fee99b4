#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cyclecap/autodiff/tensor.hpp"

// File layout, all integers little-endian:
//   8 bytes   magic "CYCLECAP"
//   u32       format version
//   u64       header length in bytes
//   header    UTF-8 JSON: {"meta": {...}, "tensors": [{"name", "dtype": "f32",
//             "shape": [...], "offset", "count"}, ...]}
//   data      float32 values, offsets relative to the end of the header
namespace cyclecap::training {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  ad::Shape shape;
  std::vector<float> values;

  bool operator==(const NamedTensor&) const = default;
};

struct CheckpointData {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  const NamedTensor& tensor(const std::string& name) const;
};

/// Atomic: writes a temp file next to `path`, then renames it.
void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
/// Rejects wrong magic, unknown versions and truncated files with CheckpointError.
CheckpointData read_checkpoint(const std::filesystem::path& path);

}  // namespace cyclecap::training
