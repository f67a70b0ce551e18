#pragma once

#include <array>
#include <cstdint>

#include "tutor/schema.hpp"

namespace tutor {

/// Draws floor(n / compression_ratio) rows uniformly without replacement,
/// stratified by class so every class present keeps at least one row.
/// Deterministic per seed. Throws ResultTooSmall if a class would vanish.
Dataset subsample(const Dataset& d, double compression_ratio, std::uint64_t seed);

/// Shuffles once (deterministic per seed) and slices into train/validation/
/// test datasets according to the given proportions (normalized internally).
std::array<Dataset, 3> split_by_proportions(const Dataset& all, double train_part,
                                            double validation_part, double test_part,
                                            std::uint64_t seed);

}  // namespace tutor
