#include "rewardrag/binio.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <vector>

#include "rewardrag/errors.hpp"

namespace rewardrag::binio {

std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t state) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    state ^= p[i];
    state *= kFnvPrime;
  }
  return state;
}

std::uint64_t fnv1a64(std::string_view s, std::uint64_t state) {
  return fnv1a64(s.data(), s.size(), state);
}

std::uint64_t hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw MissingArtifactError("cannot open file for hashing: " + path);
  }
  std::uint64_t state = kFnvOffset;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    state = fnv1a64(buf, static_cast<std::size_t>(in.gcount()), state);
  }
  return state;
}

std::string hash_hex(std::uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[h & 0xF];
    h >>= 4;
  }
  return s;
}

namespace {

void pack_u32(std::uint32_t v, unsigned char out[4]) {
  out[0] = static_cast<unsigned char>(v & 0xFF);
  out[1] = static_cast<unsigned char>((v >> 8) & 0xFF);
  out[2] = static_cast<unsigned char>((v >> 16) & 0xFF);
  out[3] = static_cast<unsigned char>((v >> 24) & 0xFF);
}

void pack_u64(std::uint64_t v, unsigned char out[8]) {
  for (int i = 0; i < 8; ++i) {
    out[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  }
}

std::uint32_t unpack_u32(const unsigned char in[4]) {
  return static_cast<std::uint32_t>(in[0]) |
         (static_cast<std::uint32_t>(in[1]) << 8) |
         (static_cast<std::uint32_t>(in[2]) << 16) |
         (static_cast<std::uint32_t>(in[3]) << 24);
}

std::uint64_t unpack_u64(const unsigned char in[8]) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) {
    v = (v << 8) | in[i];
  }
  return v;
}

}  // namespace

Writer::Writer(const std::string& path) : out_(path, std::ios::binary), path_(path) {
  if (!out_) {
    throw Error("cannot open file for writing: " + path);
  }
}

void Writer::bytes(const void* data, std::size_t len) {
  out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
  sum_ = fnv1a64(data, len, sum_);
}

void Writer::u32(std::uint32_t v) {
  unsigned char buf[4];
  pack_u32(v, buf);
  bytes(buf, 4);
}

void Writer::u64(std::uint64_t v) {
  unsigned char buf[8];
  pack_u64(v, buf);
  bytes(buf, 8);
}

void Writer::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void Writer::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void Writer::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes(s.data(), s.size());
}

void Writer::finish() {
  unsigned char buf[8];
  pack_u64(sum_, buf);
  out_.write(reinterpret_cast<const char*>(buf), 8);
  out_.flush();
  if (!out_) {
    throw Error("write failed: " + path_);
  }
  finished_ = true;
}

Reader::Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
  if (!in_) {
    throw MissingArtifactError("cannot open file for reading: " + path);
  }
}

void Reader::bytes(void* data, std::size_t len) {
  in_.read(static_cast<char*>(data), static_cast<std::streamsize>(len));
  if (static_cast<std::size_t>(in_.gcount()) != len) {
    throw IntegrityError("truncated file: " + path_);
  }
  sum_ = fnv1a64(data, len, sum_);
}

std::uint32_t Reader::u32() {
  unsigned char buf[4];
  bytes(buf, 4);
  return unpack_u32(buf);
}

std::uint64_t Reader::u64() {
  unsigned char buf[8];
  bytes(buf, 8);
  return unpack_u64(buf);
}

float Reader::f32() { return std::bit_cast<float>(u32()); }

double Reader::f64() { return std::bit_cast<double>(u64()); }

std::string Reader::str() {
  std::uint32_t n = u32();
  std::string s(n, '\0');
  if (n > 0) {
    bytes(s.data(), n);
  }
  return s;
}

void Reader::verify_checksum() {
  const std::uint64_t expected = sum_;  // grab before the trailer read mutates it
  unsigned char buf[8];
  in_.read(reinterpret_cast<char*>(buf), 8);
  if (in_.gcount() != 8) {
    throw IntegrityError("truncated file (missing checksum): " + path_);
  }
  if (unpack_u64(buf) != expected) {
    throw IntegrityError("checksum mismatch: " + path_);
  }
}

}  // namespace rewardrag::binio
