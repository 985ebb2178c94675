#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmtext::io {

// All on-disk formats are little-endian; raw writes are only valid on
// little-endian hosts.
static_assert(std::endian::native == std::endian::little,
              "binary formats require a little-endian host");

inline void write_bytes(std::ostream& out, const void* data, std::size_t n) {
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) {
    throw std::runtime_error("write failed");
  }
}

inline void read_bytes(std::istream& in, void* data, std::size_t n) {
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw std::runtime_error("truncated file");
  }
}

template <typename T>
void write_pod(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  write_bytes(out, &value, sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  static_assert(std::is_trivially_copyable_v<T>);
  T value{};
  read_bytes(in, &value, sizeof(T));
  return value;
}

inline void write_u8(std::ostream& out, std::uint8_t v) { write_pod(out, v); }
inline void write_u32(std::ostream& out, std::uint32_t v) { write_pod(out, v); }
inline void write_u64(std::ostream& out, std::uint64_t v) { write_pod(out, v); }
inline void write_f32(std::ostream& out, float v) { write_pod(out, v); }

inline std::uint8_t read_u8(std::istream& in) { return read_pod<std::uint8_t>(in); }
inline std::uint32_t read_u32(std::istream& in) { return read_pod<std::uint32_t>(in); }
inline std::uint64_t read_u64(std::istream& in) { return read_pod<std::uint64_t>(in); }
inline float read_f32(std::istream& in) { return read_pod<float>(in); }

// Length-prefixed UTF-8 string: u32 byte count, then the bytes.
inline void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  write_bytes(out, s.data(), s.size());
}

inline std::string read_string(std::istream& in) {
  std::uint32_t len = read_u32(in);
  std::string s(len, '\0');
  if (len > 0) {
    read_bytes(in, s.data(), len);
  }
  return s;
}

inline void write_f32_array(std::ostream& out, const float* data, std::size_t n) {
  write_bytes(out, data, n * sizeof(float));
}

inline void read_f32_array(std::istream& in, float* data, std::size_t n) {
  read_bytes(in, data, n * sizeof(float));
}

inline void write_u32_array(std::ostream& out, const std::uint32_t* data, std::size_t n) {
  write_bytes(out, data, n * sizeof(std::uint32_t));
}

inline void read_u32_array(std::istream& in, std::uint32_t* data, std::size_t n) {
  read_bytes(in, data, n * sizeof(std::uint32_t));
}

}  // namespace mmtext::io
