#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace habitlens {

inline constexpr const char* kToolVersion = "1.0.0";
inline constexpr int64_t kMsPerDay = 86'400'000;

// -------------------------------------------------------------- hashing

/// FNV-1a over raw bytes; used for seed derivation and content hashes.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), h);
}

/// Stable sub-stream seed from a root seed plus a label and indices.
/// All RNG streams in the project derive from this so concurrent work
/// items never share state.
inline uint64_t derive_seed(uint64_t root, std::string_view label, uint64_t a = 0,
                            uint64_t b = 0) {
  uint64_t h = fnv1a64(&root, sizeof(root));
  h = fnv1a64(label, h);
  h = fnv1a64(&a, sizeof(a), h);
  h = fnv1a64(&b, sizeof(b), h);
  return h;
}

// -------------------------------------------------------------- rng

/// mt19937_64 with explicit sampling helpers. The helpers avoid
/// std::*_distribution so streams are identical across standard
/// libraries, which keeps frozen test fixtures stable.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53-bit resolution.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Inclusive integer range.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(engine_() % span);
  }

  bool bernoulli(double p) { return uniform01() < p; }

  /// Box-Muller; one value per call.
  double normal() {
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double exponential(double rate) {
    double u = uniform01();
    return -std::log1p(-u) / rate;
  }

  double log_uniform(double lo, double hi) {
    return std::exp(uniform(std::log(lo), std::log(hi)));
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// -------------------------------------------------------------- time

/// Days-from-civil (proleptic Gregorian, UTC).
int64_t days_from_civil(int y, unsigned m, unsigned d);
void civil_from_days(int64_t z, int& y, unsigned& m, unsigned& d);

/// UTC calendar day index of an epoch-millisecond timestamp (floor).
inline int64_t epoch_day(int64_t epoch_ms) {
  int64_t d = epoch_ms / kMsPerDay;
  if (epoch_ms % kMsPerDay < 0) --d;
  return d;
}

/// Parses ISO-8601 date-times ("2021-01-15T10:23:45.120Z", offset forms,
/// space separator) or plain integer epoch-milliseconds.
/// Returns false on malformed input.
bool parse_timestamp(std::string_view s, int64_t& epoch_ms_out);

/// ISO-8601 UTC with millisecond precision.
std::string format_iso8601(int64_t epoch_ms);

// ------------------------------------------------------------ parallel

/// Runs fn(0..n-1) on up to `jobs` worker threads. Work items must be
/// independent; results should be written to per-index slots so the
/// outcome does not depend on scheduling. The first exception is
/// rethrown after all workers join.
void parallel_for(size_t n, int jobs, const std::function<void(size_t)>& fn);

// -------------------------------------------------------------- strings

std::string to_lower(std::string_view s);
std::string_view trim(std::string_view s);

/// Fixed-format floating point for report files: deterministic,
/// locale-independent.
std::string format_double(double v, int precision = 6);

}  // namespace habitlens
