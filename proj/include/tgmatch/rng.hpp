#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace tgmatch {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to decorrelate derived seeds.
std::uint64_t mix_seed(std::uint64_t x);

/// Derives a sub-seed from a root seed and a path of integer components.
/// All randomness in the project flows from one root seed through this function.
std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> path);

/// Derives a sub-seed from a root seed and a component name.
std::uint64_t derive_seed(std::uint64_t root, std::string_view tag);

}  // namespace tgmatch
