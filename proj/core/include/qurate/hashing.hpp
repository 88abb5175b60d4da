#pragma once

// Counter-based randomness. Every random quantity in the toolkit is a pure
// function of (seed, identifying key, counter), so results do not depend on
// thread count, iteration order, or how a corpus is sharded.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace qurate {

// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes) noexcept;

// SplitMix64 finalizer; a bijective 64-bit mixer.
std::uint64_t mix64(std::uint64_t x) noexcept;

// Philox4x32-10 (Salmon et al., Random123).
using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;
PhiloxCounter philox4x32_10(PhiloxCounter counter, PhiloxKey key) noexcept;

// Named sub-seed: hash of the parent seed and a stage name ("judge", "fit", ...).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view name) noexcept;

// Stateless generator keyed by a seed. `stream` identifies the object the
// draw belongs to (usually a hashed id) and `index` enumerates draws for it.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) noexcept;

  std::uint64_t bits(std::uint64_t stream, std::uint64_t index = 0) const noexcept;

  // Uniform on the open interval (0, 1) with 53 bits of resolution.
  double uniform(std::uint64_t stream, std::uint64_t index = 0) const noexcept;

  // Standard Gumbel(0, 1) draw: -log(-log(U)).
  double gumbel(std::uint64_t stream, std::uint64_t index = 0) const noexcept;

  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::uint64_t seed_;
  PhiloxKey key_;
};

// Maps raw bits to (0, 1).
double bits_to_open_unit(std::uint64_t bits) noexcept;

// Hex digest (16 chars) of a file's FNV-1a hash; used in provenance headers.
std::string file_digest(const std::string& path);

std::string to_hex(std::uint64_t value);

}  // namespace qurate
