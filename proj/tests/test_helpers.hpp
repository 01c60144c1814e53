#pragma once

#include <vector>

#include "riskcal/rng.hpp"
#include "riskcal/volume.hpp"

namespace riskcal::testing {

inline VoxelVolume random_volume(Dims dims, CounterRng& rng, double lo, double hi) {
    std::vector<double> v(dims.size());
    for (auto& x : v) x = lo + rng.uniform() * (hi - lo);
    return VoxelVolume(dims, std::move(v));
}

inline HeuristicPrediction random_prediction(Dims dims, CounterRng& rng) {
    return HeuristicPrediction{random_volume(dims, rng, -1.0, 1.0),
                               random_volume(dims, rng, 0.1, 1.0),
                               random_volume(dims, rng, 0.1, 1.0)};
}

inline SubgroupMask full_mask(Dims dims, int id = kCombined) {
    return SubgroupMask{dims, std::vector<std::uint8_t>(dims.size(), 1), id};
}

inline SubgroupMask random_mask(Dims dims, CounterRng& rng, int id) {
    SubgroupMask m{dims, std::vector<std::uint8_t>(dims.size()), id};
    for (auto& b : m.membership) b = rng.uniform() < 0.5;
    if (m.count() == 0) m.membership[0] = 1;
    return m;
}

}  // namespace riskcal::testing
