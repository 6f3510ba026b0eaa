#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace windinr {

using Rng = std::mt19937_64;

/// Mixes a base seed with a stream tag (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag);

std::uint64_t fnv1a64(std::string_view bytes);
std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

double uniform(Rng& rng, double lo, double hi);
double standard_normal(Rng& rng);

/// k distinct indices from [0, n) in draw order (partial Fisher-Yates).
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng);

}  // namespace windinr
