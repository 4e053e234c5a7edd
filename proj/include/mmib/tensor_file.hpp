#pragma once

// MMTF binary tensor files, shared with the feature exporter.
//
//   offset 0  "MMTF"            4 bytes
//          4  version  u8 = 1
//          5  dtype    u8       1 = float32, 2 = float64
//          6  rank     u8 = 2
//          7  rows     u32 LE
//         11  cols     u32 LE
//         15  payload  rows*cols values, row-major, little-endian
//
// Feature files use float32. Checkpoints are written as float64 so that a
// reloaded model is bitwise identical to the one that was saved.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mmib/matrix.hpp"

namespace mmib::io {

enum class Dtype : std::uint8_t { kFloat32 = 1, kFloat64 = 2 };

inline constexpr std::size_t kHeaderBytes = 15;

std::vector<std::uint8_t> encode_tensor(const Matrix& m, Dtype dtype = Dtype::kFloat32);
/// Throws FormatError on bad magic/version/dtype/rank or a short payload.
Matrix decode_tensor(std::span<const std::uint8_t> bytes);

void write_tensor_file(const Matrix& m, const std::filesystem::path& path, Dtype dtype = Dtype::kFloat32);
Matrix read_tensor_file(const std::filesystem::path& path);

}  // namespace mmib::io
