// SPDX-License-Identifier: Apache-2.0
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "binary_io.hpp"
#include "spectrafuse/tensor.hpp"

namespace spectrafuse {

namespace {
constexpr char kMagic[4] = {'T', 'N', 'S', 'R'};
constexpr std::uint32_t kMaxRank = 16;
}  // namespace

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  ByteWriter w;
  w.bytes(kMagic, 4);
  w.u32(kTensorFormatVersion);
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) w.u64(e);
  for (double v : t.data()) w.f64(v);
  return std::move(w).take();
}

void write_tensor(std::ostream& out, const Tensor& t) {
  const auto bytes = encode_tensor(t);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes, std::size_t& offset) {
  ByteReader r(bytes, offset);
  char magic[4];
  r.bytes(magic, 4, "tensor magic");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw ParseError("bad tensor magic, expected \"TNSR\"", offset);
  }
  const std::size_t version_at = r.position();
  const auto version = r.u32("tensor version");
  if (version != kTensorFormatVersion) {
    throw VersionError("tensor format version " + std::to_string(version) + " at offset " +
                       std::to_string(version_at) + " is not supported (expected " +
                       std::to_string(kTensorFormatVersion) + ")");
  }
  const std::size_t rank_at = r.position();
  const auto rank = r.u32("tensor rank");
  if (rank > kMaxRank) throw ParseError("implausible tensor rank " + std::to_string(rank), rank_at);
  Shape shape(rank);
  for (auto& e : shape) e = static_cast<std::size_t>(r.u64("tensor extent"));
  const std::size_t n = shape_numel(shape);
  if (n > r.remaining() / 8) {
    throw ParseError("tensor payload of " + std::to_string(n) + " values is truncated",
                     r.position());
  }
  std::vector<double> data(n);
  for (auto& v : data) v = r.f64("tensor payload");
  offset = r.position();
  return Tensor(std::move(shape), std::move(data));
}

Tensor read_tensor_file(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  std::size_t offset = 0;
  Tensor t = decode_tensor(bytes, offset);
  if (offset != bytes.size()) throw ParseError("trailing bytes after tensor", offset);
  return t;
}

void write_tensor_file(const std::string& path, const Tensor& t) {
  write_file_bytes(path, encode_tensor(t));
}

}  // namespace spectrafuse
