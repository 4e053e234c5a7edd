#include "mmib/tensor_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "mmib/error.hpp"

namespace mmib::io {
namespace {

constexpr std::uint8_t kMagic[4] = {'M', 'M', 'T', 'F'};
constexpr std::uint8_t kVersion = 1;
constexpr std::uint8_t kRank = 2;

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename U>
U get_le(const std::uint8_t* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Matrix& m, Dtype dtype) {
  if (m.rows() > std::numeric_limits<std::uint32_t>::max() || m.cols() > std::numeric_limits<std::uint32_t>::max()) {
    throw FormatError("tensor " + m.shape_str() + " exceeds MMTF dimension range");
  }
  const std::size_t width = dtype == Dtype::kFloat32 ? 4 : 8;
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + m.size() * width);
  for (std::uint8_t b : kMagic) out.push_back(b);
  out.push_back(kVersion);
  out.push_back(static_cast<std::uint8_t>(dtype));
  out.push_back(kRank);
  put_le(out, static_cast<std::uint32_t>(m.rows()));
  put_le(out, static_cast<std::uint32_t>(m.cols()));
  for (double v : m.values()) {
    if (dtype == Dtype::kFloat32) {
      put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    } else {
      put_le(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  return out;
}

Matrix decode_tensor(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderBytes) throw FormatError("MMTF: truncated header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("MMTF: bad magic");
  if (bytes[4] != kVersion) throw FormatError("MMTF: unsupported version " + std::to_string(bytes[4]));
  const std::uint8_t dtype = bytes[5];
  if (dtype != static_cast<std::uint8_t>(Dtype::kFloat32) && dtype != static_cast<std::uint8_t>(Dtype::kFloat64)) {
    throw FormatError("MMTF: unsupported dtype " + std::to_string(dtype));
  }
  if (bytes[6] != kRank) throw FormatError("MMTF: unsupported rank " + std::to_string(bytes[6]));
  const std::size_t rows = get_le<std::uint32_t>(bytes.data() + 7);
  const std::size_t cols = get_le<std::uint32_t>(bytes.data() + 11);
  const std::size_t width = dtype == static_cast<std::uint8_t>(Dtype::kFloat32) ? 4 : 8;
  const std::size_t expected = kHeaderBytes + rows * cols * width;
  if (bytes.size() != expected) {
    throw FormatError("MMTF: payload of " + std::to_string(bytes.size() - kHeaderBytes) + " bytes, expected " +
                      std::to_string(expected - kHeaderBytes) + " for " + shape_str(rows, cols));
  }
  Matrix m(rows, cols);
  const std::uint8_t* p = bytes.data() + kHeaderBytes;
  for (std::size_t i = 0; i < m.size(); ++i, p += width) {
    m[i] = width == 4 ? static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(p)))
                      : std::bit_cast<double>(get_le<std::uint64_t>(p));
  }
  return m;
}

void write_tensor_file(const Matrix& m, const std::filesystem::path& path, Dtype dtype) {
  const auto bytes = encode_tensor(m, dtype);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

Matrix read_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open tensor file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_tensor(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace mmib::io
