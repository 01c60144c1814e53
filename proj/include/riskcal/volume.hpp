#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "riskcal/errors.hpp"

namespace riskcal {

struct Dims {
    int w = 0;
    int h = 0;
    int d = 0;

    std::size_t size() const { return static_cast<std::size_t>(w) * h * d; }
    bool operator==(const Dims&) const = default;
};

// Dense scalar field over a W x H x D grid. Flattening is row-major with x
// fastest: index = x + W*(y + H*z). All values must be finite.
class VoxelVolume {
public:
    VoxelVolume() = default;
    VoxelVolume(Dims dims, std::vector<double> values);
    static VoxelVolume filled(Dims dims, double value);

    const Dims& dims() const { return dims_; }
    std::size_t size() const { return values_.size(); }

    double operator[](std::size_t i) const { return values_[i]; }
    double& operator[](std::size_t i) { return values_[i]; }
    double at(int x, int y, int z) const { return values_[index(x, y, z)]; }

    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(dims_.w) * (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims_.h) * z);
    }

    const std::vector<double>& values() const { return values_; }
    std::vector<double>& values() { return values_; }

    double max_value() const;

private:
    Dims dims_;
    std::vector<double> values_;
};

// Boolean membership field for one subgroup. May be empty (all false);
// calibration then skips the (sample, subgroup) pair.
struct SubgroupMask {
    Dims dims;
    std::vector<std::uint8_t> membership;
    int subgroup_id = 0;

    std::size_t count() const;
    void validate() const;
};

// Subgroup ids used throughout: foreground, background, combined image.
inline constexpr int kForeground = 1;
inline constexpr int kBackground = 2;
inline constexpr int kCombined = 3;

// One segment: feature channels, ground-truth dose (Gray), subgroup masks.
struct Sample {
    std::vector<VoxelVolume> features;
    VoxelVolume dose;
    std::vector<SubgroupMask> masks;

    void validate() const;
};

// Heuristic interval triple: point prediction with nonnegative offsets.
struct HeuristicPrediction {
    VoxelVolume point;
    VoxelVolume lower_offset;
    VoxelVolume upper_offset;

    void validate() const;
};

// Scaled interval [point - lambda*l, point + lambda*u] per voxel.
struct IntervalField {
    VoxelVolume lo;
    VoxelVolume hi;
    double lambda = 0.0;
};

IntervalField build_interval(const HeuristicPrediction& pred, double lambda);

enum class LossDenominator {
    masked,  // count of masked voxels
    whd,     // full volume, the literal pseudocode normalization
};

// Fraction of masked voxels whose dose falls outside [lo, hi]. The interval
// is closed: a voxel exactly on a bound counts as covered.
double empirical_interval_loss(const IntervalField& interval, const VoxelVolume& dose,
                               const SubgroupMask& mask,
                               LossDenominator denom = LossDenominator::masked);

inline constexpr double kDefaultThresholdFraction = 0.01;

// Threshold the dose at threshold_fraction * max(dose). Returns foreground,
// background, combined, in that order (ids 1, 2, 3). An all-zero dose yields
// an empty foreground, which is legal.
std::vector<SubgroupMask> subgroup_masks_from_dose(const VoxelVolume& dose,
                                                   double threshold_fraction = kDefaultThresholdFraction);

}  // namespace riskcal
