#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <string>
#include <string_view>

namespace rewardrag::binio {

inline constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;
inline constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

/// FNV-1a over a byte range, continuing from `state`.
std::uint64_t fnv1a64(const void* data, std::size_t len,
                      std::uint64_t state = kFnvOffset);
std::uint64_t fnv1a64(std::string_view s, std::uint64_t state = kFnvOffset);

/// FNV-1a over a whole file. Throws MissingArtifactError if unreadable.
std::uint64_t hash_file(const std::string& path);

std::string hash_hex(std::uint64_t h);

/// Little-endian binary writer that keeps a running FNV-1a checksum of
/// everything written. finish() appends the checksum (not itself summed).
class Writer {
 public:
  explicit Writer(const std::string& path);
  void bytes(const void* data, std::size_t len);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void str(std::string_view s);  // u32 length + bytes
  void finish();

 private:
  std::ofstream out_;
  std::string path_;
  std::uint64_t sum_ = kFnvOffset;
  bool finished_ = false;
};

/// Counterpart reader. Every read feeds the running checksum;
/// verify_checksum() reads the trailing u64 and compares. Short reads
/// throw IntegrityError.
class Reader {
 public:
  explicit Reader(const std::string& path);
  void bytes(void* data, std::size_t len);
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string str();
  void verify_checksum();

 private:
  std::ifstream in_;
  std::string path_;
  std::uint64_t sum_ = kFnvOffset;
};

}  // namespace rewardrag::binio
