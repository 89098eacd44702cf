#pragma once

// CKT1 container: "CKT1" | u32 ndim | u64 dims[ndim] | u8 dtype | payload.
// All integers and payload values little-endian, payload row-major.
// dtype 0 = complex64 (interleaved re/im), 1 = complex128, 2 = uint8.
// A JSON sidecar with the same basename and extension ".json" carries a flat
// string -> (string | number) metadata map.

#include <array>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "mrcine/tensor.hpp"

namespace mrcine {

enum class DType : std::uint8_t { complex64 = 0, complex128 = 1, uint8 = 2 };

inline std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::complex64: return 8;
    case DType::complex128: return 16;
    case DType::uint8: return 1;
  }
  throw std::invalid_argument("unknown dtype code " + std::to_string(int(d)));
}

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Metadata = nlohmann::json;

struct RawContainer {
  Shape dims;
  DType dtype = DType::complex64;
  std::vector<std::uint8_t> payload;
};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u64(std::vector<std::uint8_t>& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline std::uint64_t get_le(const std::uint8_t* p, int n) {
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= std::uint64_t(p[i]) << (8 * i);
  return v;
}

// Copies `count` scalars of width `w` bytes, swapping to little-endian when
// the host is big-endian.
inline void copy_le(std::uint8_t* dst, const std::uint8_t* src, std::size_t count, std::size_t w) {
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(dst, src, count * w);
  } else {
    for (std::size_t i = 0; i < count; ++i)
      for (std::size_t k = 0; k < w; ++k) dst[i * w + k] = src[i * w + (w - 1 - k)];
  }
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError("cannot open " + p.string());
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace detail

inline std::filesystem::path sidecar_path(const std::filesystem::path& p) {
  auto s = p;
  s.replace_extension(".json");
  return s;
}

inline std::vector<std::uint8_t> encode_container(const RawContainer& c) {
  const std::size_t expect = static_cast<std::size_t>(shape_numel(c.dims)) * dtype_size(c.dtype);
  if (c.payload.size() != expect)
    throw FormatError("payload length " + std::to_string(c.payload.size()) + " != " + std::to_string(expect));
  std::vector<std::uint8_t> b = {'C', 'K', 'T', '1'};
  detail::put_u32(b, static_cast<std::uint32_t>(c.dims.size()));
  for (Index d : c.dims) detail::put_u64(b, static_cast<std::uint64_t>(d));
  b.push_back(static_cast<std::uint8_t>(c.dtype));
  b.insert(b.end(), c.payload.begin(), c.payload.end());
  return b;
}

inline RawContainer decode_container(const std::vector<std::uint8_t>& b) {
  if (b.size() < 9 || std::memcmp(b.data(), "CKT1", 4) != 0) throw FormatError("bad CKT1 magic");
  const auto ndim = static_cast<std::size_t>(detail::get_le(b.data() + 4, 4));
  std::size_t pos = 8;
  if (b.size() < pos + 8 * ndim + 1) throw FormatError("truncated CKT1 header");
  RawContainer c;
  for (std::size_t i = 0; i < ndim; ++i, pos += 8)
    c.dims.push_back(static_cast<Index>(detail::get_le(b.data() + pos, 8)));
  const std::uint8_t code = b[pos++];
  if (code > 2) throw FormatError("unknown CKT1 dtype code " + std::to_string(code));
  c.dtype = static_cast<DType>(code);
  const std::size_t expect = static_cast<std::size_t>(shape_numel(c.dims)) * dtype_size(c.dtype);
  if (b.size() - pos != expect)
    throw FormatError("CKT1 payload is " + std::to_string(b.size() - pos) + " bytes, expected " +
                      std::to_string(expect));
  c.payload.assign(b.begin() + static_cast<std::ptrdiff_t>(pos), b.end());
  return c;
}

inline void write_metadata(const std::filesystem::path& container_path, const Metadata& meta) {
  if (!meta.is_object()) throw std::invalid_argument("sidecar metadata must be a JSON object");
  for (auto it = meta.begin(); it != meta.end(); ++it)
    if (!it->is_string() && !it->is_number())
      throw std::invalid_argument("sidecar value for '" + it.key() + "' must be a string or number");
  std::ofstream out(sidecar_path(container_path));
  if (!out) throw FormatError("cannot write " + sidecar_path(container_path).string());
  out << meta.dump(2) << '\n';
}

// Non-flat values are dropped; a missing sidecar reads as an empty object.
inline Metadata read_metadata(const std::filesystem::path& container_path) {
  const auto sp = sidecar_path(container_path);
  if (!std::filesystem::exists(sp)) return Metadata::object();
  std::ifstream in(sp);
  Metadata raw = Metadata::parse(in);
  Metadata out = Metadata::object();
  if (!raw.is_object()) return out;
  for (auto it = raw.begin(); it != raw.end(); ++it)
    if (it->is_string() || it->is_number()) out[it.key()] = *it;
  return out;
}

template <typename T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, std::complex<float>>) return DType::complex64;
  else if constexpr (std::is_same_v<T, std::complex<double>>) return DType::complex128;
  else if constexpr (std::is_same_v<T, std::uint8_t>) return DType::uint8;
  else static_assert(sizeof(T) == 0, "unsupported container element type");
}

template <typename T>
RawContainer to_container(const Tensor<T>& t) {
  RawContainer c;
  c.dims = t.shape();
  c.dtype = dtype_of<T>();
  c.payload.resize(static_cast<std::size_t>(t.size()) * sizeof(T));
  const std::size_t w = is_complex_v<T> ? sizeof(T) / 2 : sizeof(T);
  detail::copy_le(c.payload.data(), reinterpret_cast<const std::uint8_t*>(t.data()),
                  c.payload.size() / w, w);
  return c;
}

// Complex targets accept either complex dtype (converting precision);
// uint8 targets require dtype 2.
template <typename T>
Tensor<T> from_container(const RawContainer& c) {
  Tensor<T> out(c.dims);
  if constexpr (std::is_same_v<T, std::uint8_t>) {
    if (c.dtype != DType::uint8) throw FormatError("expected a uint8 container");
    std::memcpy(out.data(), c.payload.data(), c.payload.size());
  } else {
    using R = real_of_t<T>;
    if (c.dtype == DType::complex64) {
      std::vector<float> v(c.payload.size() / 4);
      detail::copy_le(reinterpret_cast<std::uint8_t*>(v.data()), c.payload.data(), v.size(), 4);
      for (Index i = 0; i < out.size(); ++i) out[i] = T(R(v[2 * i]), R(v[2 * i + 1]));
    } else if (c.dtype == DType::complex128) {
      std::vector<double> v(c.payload.size() / 8);
      detail::copy_le(reinterpret_cast<std::uint8_t*>(v.data()), c.payload.data(), v.size(), 8);
      for (Index i = 0; i < out.size(); ++i) out[i] = T(R(v[2 * i]), R(v[2 * i + 1]));
    } else {
      throw FormatError("expected a complex container, found uint8");
    }
  }
  return out;
}

template <typename T>
void write_ckt(const std::filesystem::path& path, const Tensor<T>& t,
               const Metadata& meta = Metadata::object()) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = encode_container(to_container(t));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  write_metadata(path, meta);
}

template <typename T>
Tensor<T> read_ckt(const std::filesystem::path& path) {
  return from_container<T>(decode_container(detail::read_file(path)));
}

inline RawContainer read_raw_ckt(const std::filesystem::path& path) {
  return decode_container(detail::read_file(path));
}

}  // namespace mrcine
