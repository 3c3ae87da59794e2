#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "edgelite/model.hpp"

namespace edgelite {

// Model file layout (little-endian):
//   "EDGL" | u16 version | u8 dtype (0 f32, 1 i8) | u8 mode (0 infer, 1 train)
//   | u32 record count
//   per record: u16 name length | name bytes | 4 x u32 shape
//               | (i8 files) f32 scale, i32 zero point | raw data
//   | u32 CRC32 of every preceding byte
//
// Element width of the raw data: 4 bytes (f32) in float files. In int8 files
// weights and activation records are 1 byte, and records named "*.bias" are
// int32 accumulators at scale in_scale * weight_scale.

inline constexpr std::array<char, 4> kModelMagic = {'E', 'D', 'G', 'L'};
inline constexpr std::uint16_t kModelVersion = 1;

struct TensorRecord {
  std::string name;
  std::array<std::uint32_t, 4> shape{};
  std::optional<QuantParams> quant;  // present iff the file dtype is i8
  std::vector<std::uint8_t> raw;
};

struct ModelFile {
  DType dtype = DType::f32;
  Mode mode = Mode::infer;
  std::vector<TensorRecord> records;
};

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

/// Bytes per element of a record in a file of the given dtype.
std::size_t record_element_bytes(DType file_dtype, std::string_view name);

std::vector<std::uint8_t> encode_model_file(const ModelFile& file);
/// Throws bad_magic, version_mismatch, truncated or checksum errors.
ModelFile decode_model_file(std::span<const std::uint8_t> bytes);

/// Size of the encoded file without encoding it.
std::size_t encoded_size(const ModelFile& file);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
/// Writes via a temporary file and rename so readers never see a partial file.
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

ModelFile to_model_file(const Model& model);
/// Rebuilds the graph from record names and shapes (decode error when the
/// record set is not a complete EdgeLite float model).
Model from_model_file(const ModelFile& file);

void save_model(const Model& model, const std::filesystem::path& path);
Model load_float_model(const std::filesystem::path& path);

std::size_t serialized_size(const Model& model);

/// Names of every tensor record in a model file.
std::vector<std::string> read_tensor_names(const std::filesystem::path& path);

}  // namespace edgelite
