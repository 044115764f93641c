#pragma once

// Shared plumbing: error taxonomy, deterministic RNG, byte hashing and a few
// small string/file helpers used across the library.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace vesselseg {

// Error taxonomy mirrored by CLI exit codes: config 2, data 3, numeric 4.
// Contract violations inside the library throw std::invalid_argument.
struct ConfigError : std::runtime_error { using std::runtime_error::runtime_error; };
struct DataError : std::runtime_error { using std::runtime_error::runtime_error; };
struct NumericError : std::runtime_error { using std::runtime_error::runtime_error; };

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// -------------------------------------------------------------------------
// Deterministic RNG. splitmix64 with uniforms built from explicit bit
// arithmetic; std::uniform_real_distribution is implementation-defined and
// would break run reproducibility across standard libraries.
// -------------------------------------------------------------------------

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

struct Rng {
  uint64_t state;
  explicit Rng(uint64_t seed) : state(seed) {}

  uint64_t next() { return splitmix64(state); }

  // Uniform in [0, 1) with full 53-bit mantissa resolution.
  double uniform() { return double(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Modulo bias is negligible for the small n
  // used here (shuffles, choice among a handful of options).
  int64_t below(int64_t n) { return int64_t(next() % uint64_t(n)); }
  bool coin(double p = 0.5) { return uniform() < p; }

  // Standard normal via Box-Muller (deterministic, platform-stable).
  double normal() {
    double u1 = uniform(), u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }
};

// Derives one stream seed from several components (e.g. global seed, epoch,
// sample index, copy index). Order-sensitive by construction.
inline uint64_t mix_seed(std::initializer_list<uint64_t> parts) {
  uint64_t h = 0x243f6a8885a308d3ull;
  for (uint64_t p : parts) {
    h ^= p;
    splitmix64(h);
    h = splitmix64(h);
  }
  return h;
}

// Platform-stable Fisher-Yates; std::shuffle output is not pinned by the
// standard, so shuffles that must reproduce across toolchains use this.
template <typename T>
void deterministic_shuffle(std::vector<T>& v, Rng& rng) {
  for (int64_t i = int64_t(v.size()) - 1; i > 0; --i) {
    std::swap(v[size_t(i)], v[size_t(rng.below(i + 1))]);
  }
}

// -------------------------------------------------------------------------
// Byte hashing (FNV-1a, 64-bit) -- used to checksum parameter bytes when
// verifying that frozen weights stay untouched.
// -------------------------------------------------------------------------

constexpr uint64_t kFnvOffset = 0xcbf29ce484222325ull;
constexpr uint64_t kFnvPrime = 0x100000001b3ull;

inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = kFnvOffset) {
  const unsigned char* bytes = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= kFnvPrime;
  }
  return h;
}

// -------------------------------------------------------------------------
// Small string / filesystem helpers.
// -------------------------------------------------------------------------

inline std::vector<std::string> split(const std::string& s, char delim) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == delim) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

inline std::string format_double(double v, int precision = 9) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
  return buf;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open for reading: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Write-then-rename so concurrent readers only ever observe a complete
// file; used for status files that other processes poll.
inline void write_text_file_atomic(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  write_text_file(tmp, text);
  std::filesystem::rename(tmp, path);
}

}  // namespace vesselseg
