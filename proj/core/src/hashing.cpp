#include "qurate/hashing.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

#include "qurate/error.hpp"

namespace qurate {
namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi,
                    std::uint32_t& lo) noexcept {
  const std::uint64_t product = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(product >> 32);
  lo = static_cast<std::uint32_t>(product);
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001b3ull;
  }
  return hash;
}

std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

PhiloxCounter philox4x32_10(PhiloxCounter ctr, PhiloxKey key) noexcept {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
    mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kPhiloxW0;
    key[1] += kPhiloxW1;
  }
  return ctr;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view name) noexcept {
  return mix64(mix64(seed) ^ fnv1a64(name));
}

CounterRng::CounterRng(std::uint64_t seed) noexcept
    : seed_(seed),
      key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)} {}

std::uint64_t CounterRng::bits(std::uint64_t stream, std::uint64_t index) const noexcept {
  const PhiloxCounter out = philox4x32_10(
      {static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
       static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)},
      key_);
  return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

double bits_to_open_unit(std::uint64_t bits) noexcept {
  // (k + 0.5) / 2^52 never hits 0 or 1; with 53 bits the top value rounds up to 1.
  return (static_cast<double>(bits >> 12) + 0.5) * 0x1.0p-52;
}

double CounterRng::uniform(std::uint64_t stream, std::uint64_t index) const noexcept {
  return bits_to_open_unit(bits(stream, index));
}

double CounterRng::gumbel(std::uint64_t stream, std::uint64_t index) const noexcept {
  return -std::log(-std::log(uniform(stream, index)));
}

std::string to_hex(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path + " for hashing");
  std::uint64_t hash = 0xcbf29ce484222325ull;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    const auto n = in.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      hash ^= static_cast<unsigned char>(buf[static_cast<std::size_t>(i)]);
      hash *= 0x100000001b3ull;
    }
  }
  return to_hex(hash);
}

}  // namespace qurate
