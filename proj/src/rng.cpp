#include "smcl/rng.hpp"

#include <cstdio>
#include <sstream>

#include "smcl/error.hpp"

namespace smcl {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

namespace {

// splitmix64 finalizer
std::uint64_t mix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t root_seed, std::string_view stream) {
  return mix(mix(root_seed) ^ fnv1a64(stream));
}

double sample_symmetric_beta(double alpha, Rng& rng) {
  if (!(alpha > 0.0)) {
    throw InvalidParameter("Beta parameter alpha must be > 0, got " + std::to_string(alpha));
  }
  std::gamma_distribution<double> gamma(alpha, 1.0);
  const double x = gamma(rng);
  const double y = gamma(rng);
  if (x + y <= 0.0) return 0.5;  // both underflowed (tiny alpha)
  return x / (x + y);
}

std::string serialize_rng(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

Rng deserialize_rng(const std::string& state) {
  Rng rng;
  std::istringstream is(state);
  is >> rng;
  if (is.fail()) throw DataError("corrupt rng state in checkpoint");
  return rng;
}

}  // namespace smcl
