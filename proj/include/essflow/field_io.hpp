#ifndef ESSFLOW_FIELD_IO_HPP
#define ESSFLOW_FIELD_IO_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "essflow/core.hpp"
#include "essflow/transport.hpp"

// Velocity-field file layout (all integers and floats little-endian):
//
//   "EFVF"                       4 bytes
//   version                      u16
//   kind                         u8   (0 zero, 1 affine, 2 mlp)
//   dimension                    u32
//   [mlp only] layer count       u32, then that many u32 layer sizes
//   payload                      f64 x P
//   checksum                     u64, FNV-1a over the payload bytes
//
// P is 0 for zero, d + 1 for affine (mean then scale), and the count implied
// by the layer sizes for mlp.

namespace essflow {

inline constexpr std::uint16_t kFieldFormatVersion = 1;

enum class ParseErrorCode {
  bad_magic,
  unsupported_version,
  unknown_kind,
  bad_header,
  dimension_mismatch,
  truncated,
  checksum_mismatch,
  trailing_data,
};

class ParseError : public Error {
 public:
  ParseError(ParseErrorCode code, const std::string& what)
      : Error(ErrorCategory::io, "parse error: " + what), code_(code) {}
  [[nodiscard]] ParseErrorCode code() const noexcept { return code_; }

 private:
  ParseErrorCode code_;
};

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const char* s, std::size_t n) { bytes_.insert(bytes_.end(), s, s + n); }
  [[nodiscard]] const std::vector<unsigned char>& bytes() const noexcept { return bytes_; }
  [[nodiscard]] std::size_t size() const noexcept { return bytes_.size(); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const unsigned char> bytes) : bytes_(bytes) {}
  [[nodiscard]] std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
  [[nodiscard]] std::size_t position() const noexcept { return pos_; }
  std::uint64_t get(int n, const char* what) {
    if (remaining() < static_cast<std::size_t>(n))
      throw ParseError(ParseErrorCode::truncated, std::string("file ends inside ") + what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(get(8, what)); }

 private:
  std::span<const unsigned char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<unsigned char> encode_field(const VelocityField& field) {
  detail::ByteWriter w;
  w.raw("EFVF", 4);
  w.u16(kFieldFormatVersion);
  w.u8(static_cast<std::uint8_t>(field.kind()));
  w.u32(static_cast<std::uint32_t>(field.dimension()));

  Vector payload;
  if (const auto* a = std::get_if<AffineVelocity>(&field.impl())) {
    payload = a->mean;
    payload.push_back(a->scale);
  } else if (const auto* m = std::get_if<MlpVelocity>(&field.impl())) {
    w.u32(static_cast<std::uint32_t>(m->layer_sizes().size()));
    for (auto s : m->layer_sizes()) w.u32(static_cast<std::uint32_t>(s));
    payload = m->parameters();
  }
  const std::size_t payload_start = w.size();
  for (double v : payload) w.f64(v);
  const auto checksum = fnv1a64(std::span(w.bytes()).subspan(payload_start));
  w.u64(checksum);
  return w.bytes();
}

inline VelocityField decode_field(std::span<const unsigned char> bytes) {
  detail::ByteReader r(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "EFVF", 4) != 0)
    throw ParseError(ParseErrorCode::bad_magic, "missing EFVF magic bytes");
  r.get(4, "magic");
  const auto version = static_cast<std::uint16_t>(r.get(2, "version"));
  if (version != kFieldFormatVersion)
    throw ParseError(ParseErrorCode::unsupported_version,
                     "unsupported format version " + std::to_string(version));
  const auto kind = static_cast<std::uint8_t>(r.get(1, "kind tag"));
  if (kind > static_cast<std::uint8_t>(FieldKind::mlp))
    throw ParseError(ParseErrorCode::unknown_kind, "unknown field kind " + std::to_string(kind));
  const auto dim = static_cast<std::size_t>(r.get(4, "dimension"));
  if (dim == 0) throw ParseError(ParseErrorCode::bad_header, "dimension is zero");

  std::vector<std::size_t> layers;
  std::size_t count = 0;
  switch (static_cast<FieldKind>(kind)) {
    case FieldKind::zero: count = 0; break;
    case FieldKind::affine: count = dim + 1; break;
    case FieldKind::mlp: {
      const auto n = static_cast<std::size_t>(r.get(4, "layer count"));
      if (n < 2 || n > 64) throw ParseError(ParseErrorCode::bad_header, "implausible layer count");
      for (std::size_t i = 0; i < n; ++i) {
        layers.push_back(static_cast<std::size_t>(r.get(4, "layer sizes")));
        if (layers.back() == 0) throw ParseError(ParseErrorCode::bad_header, "zero layer size");
      }
      if (layers.back() != dim || layers.front() != dim + 1)
        throw ParseError(ParseErrorCode::dimension_mismatch,
                         "layer sizes do not match dimension " + std::to_string(dim));
      count = MlpVelocity::parameter_count(layers);
      break;
    }
  }

  const std::size_t payload_start = r.position();
  if (r.remaining() < count * 8)
    throw ParseError(ParseErrorCode::truncated,
                     "payload holds " + std::to_string(r.remaining() / 8) + " of " +
                         std::to_string(count) + " declared parameters");
  Vector payload(count);
  for (auto& v : payload) v = r.f64("payload");
  const auto expected = fnv1a64(bytes.subspan(payload_start, count * 8));
  const auto stored = r.get(8, "checksum");
  if (stored != expected)
    throw ParseError(ParseErrorCode::checksum_mismatch, "payload checksum mismatch");
  if (r.remaining() != 0)
    throw ParseError(ParseErrorCode::trailing_data, "unexpected bytes after checksum");

  switch (static_cast<FieldKind>(kind)) {
    case FieldKind::zero: return VelocityField(ZeroVelocity{dim});
    case FieldKind::affine: {
      const double scale = payload.back();
      payload.pop_back();
      if (!(scale > 0.0)) throw ParseError(ParseErrorCode::bad_header, "affine scale not positive");
      return VelocityField(AffineVelocity{std::move(payload), scale});
    }
    case FieldKind::mlp: break;
  }
  return VelocityField(MlpVelocity(std::move(layers), std::move(payload)));
}

inline void save_field(const VelocityField& field, const std::filesystem::path& path) {
  const auto bytes = encode_field(field);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string());
}

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline VelocityField load_field(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return decode_field(bytes);
}

}  // namespace essflow

#endif  // ESSFLOW_FIELD_IO_HPP
