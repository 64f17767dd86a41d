#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace smcl {

using Rng = std::mt19937_64;

// 64-bit FNV-1a; used for stream names and content fingerprints.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

std::string hex64(std::uint64_t value);

// All randomness flows from one root seed. Each named stream ("data",
// "augment", "sampler", "masking", "gate", "model-init") gets an independent
// seed so adding draws to one stream never perturbs another.
std::uint64_t derive_seed(std::uint64_t root_seed, std::string_view stream);

inline Rng make_stream(std::uint64_t root_seed, std::string_view stream) {
  return Rng(derive_seed(root_seed, stream));
}

// Beta(alpha, alpha) via the gamma-ratio construction.
double sample_symmetric_beta(double alpha, Rng& rng);

// Textual round trip of the engine state, for checkpoints.
std::string serialize_rng(const Rng& rng);
Rng deserialize_rng(const std::string& state);

}  // namespace smcl
