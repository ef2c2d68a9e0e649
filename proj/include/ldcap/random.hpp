#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace ldcap {

// Counter-based normals: each draw is a pure function of
// (seed, replicate, coordinate, step), so simulations give the same
// numbers regardless of how replicates are split across threads.

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t stream_key(std::uint64_t seed, std::uint64_t replicate, std::uint64_t coordinate,
                                   std::uint64_t step) noexcept {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ replicate);
  h = splitmix64(h ^ (coordinate * 0xd1b54a32d192ed03ULL));
  return splitmix64(h ^ (step * 0x8cb92ba72f3d8dd7ULL));
}

// Uniform on the open interval (0, 1).
constexpr double to_unit_open(std::uint64_t bits) noexcept {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

inline double counter_normal(std::uint64_t seed, std::uint64_t replicate, std::uint64_t coordinate,
                             std::uint64_t step) noexcept {
  const std::uint64_t key = stream_key(seed, replicate, coordinate, step);
  const double u1 = to_unit_open(key);
  const double u2 = to_unit_open(splitmix64(key));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace ldcap
