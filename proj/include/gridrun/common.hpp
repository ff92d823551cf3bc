#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace gridrun {

using WorkerId = uint32_t;  // node 0 is always the controller
using JobId = uint64_t;
using ObjectId = uint64_t;
using SimTime = int64_t;  // nanoseconds on the transport clock (virtual or steady)

inline constexpr WorkerId kControllerId = 0;

inline constexpr SimTime kMillisecond = 1'000'000;
inline constexpr SimTime kSecond = 1'000'000'000;

inline double to_seconds(SimTime t) { return static_cast<double>(t) / 1e9; }
inline SimTime from_seconds(double s) { return static_cast<SimTime>(s * 1e9); }

// Configuration or CLI input is malformed (driver exit code 2).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A peer sent a frame or command that violates the wire contract.
struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A runtime invariant broke; the run is not salvageable (driver exit code 3).
struct InvariantViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 14695981039346656037ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline uint64_t fnv1a64(const std::vector<uint8_t>& bytes) {
  return fnv1a64(bytes.data(), bytes.size());
}

// splitmix64; used for deterministic per-message jitter and test payloads.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t double_bits(double d) {
  uint64_t b;
  std::memcpy(&b, &d, sizeof b);
  return b;
}

inline double bits_double(uint64_t b) {
  double d;
  std::memcpy(&d, &b, sizeof d);
  return d;
}

}  // namespace gridrun
