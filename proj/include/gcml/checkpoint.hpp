// Portable little-endian checkpoint format.
//
//   magic    8 bytes  "GCML0001"
//   version  u32      1
//   entries  repeated until the trailer:
//              u16 name length, UTF-8 name, u8 dtype (0 = f32), u8 ndim,
//              ndim x u32 dims, f32 values in row-major order
//   trailer  u32      CRC-32 (IEEE) of every preceding byte
#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "gcml/model.hpp"

namespace gcml {

inline constexpr char kCheckpointMagic[8] = {'G', 'C', 'M', 'L', '0', '0', '0', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointEntry {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

std::uint32_t crc32_ieee(const std::uint8_t* data, std::size_t size);

std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointEntry>& entries);
/// Validates the CRC before parsing any entry.
std::vector<CheckpointEntry> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Parameters followed by batch-norm running statistics.
std::vector<CheckpointEntry> model_entries(Model<float>& model);
/// Every model tensor must be present with the same shape; extra entries
/// are rejected.
void apply_entries(Model<float>& model, const std::vector<CheckpointEntry>& entries);

void save_checkpoint(Model<float>& model, const std::filesystem::path& path);
Model<float> load_checkpoint(const std::filesystem::path& path, const ModelConfig& config);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace gcml
