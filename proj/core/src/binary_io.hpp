#pragma once

// Little-endian float64 block helpers shared by the checkpoint and dataset formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace pbrl::detail {

inline void write_f64(std::ostream& out, double value) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(value);
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

inline double read_f64(std::istream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  if (in.gcount() != 8) throw std::runtime_error("unexpected end of binary block");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

inline std::string read_header_line(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("missing header line");
  return line;
}

}  // namespace pbrl::detail
