#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "riskcal/volume.hpp"

namespace riskcal {

struct GridConfig {
    double lambda_max = 10.0;
    double d_lambda = 0.01;
    // When set, the effective lambda_max is 1.1 x the largest finite
    // critical lambda in the calibration set.
    bool auto_max = false;

    void validate() const {
        if (!(d_lambda > 0.0) || !(lambda_max > d_lambda))
            throw contract_error("GridConfig: need lambda_max > d_lambda > 0");
    }
};

struct CalibrationEntry {
    HeuristicPrediction pred;
    VoxelVolume dose;
    SubgroupMask mask;
};

// Calibration data for one subgroup. Entries with empty masks are dropped at
// construction; at least one entry must survive.
struct CalibrationSet {
    std::vector<CalibrationEntry> entries;
    int subgroup_id = 0;

    static CalibrationSet from_entries(std::vector<CalibrationEntry> raw, int subgroup_id);
    std::size_t size() const { return entries.size(); }
};

// What counts as one Hoeffding observation. `sample` treats each segment's
// masked-voxel loss as one bounded draw (the default contract); `voxel`
// pools the per-voxel indicators, which is the only workable choice for
// small segment counts where sqrt(log(1/delta)/2n) already exceeds alpha.
enum class HoeffdingGranularity { sample, voxel };

struct CalibrationOptions {
    double alpha = 0.1;
    double delta = 0.1;
    GridConfig grid;
    HoeffdingGranularity granularity = HoeffdingGranularity::sample;
    LossDenominator denominator = LossDenominator::masked;

    void validate() const {
        if (!(alpha > 0.0 && alpha < 1.0)) throw contract_error("alpha must be in (0,1)");
        if (!(delta > 0.0 && delta < 1.0)) throw contract_error("delta must be in (0,1)");
        grid.validate();
    }
};

struct TracePoint {
    double lambda = 0.0;
    std::vector<double> ucb;  // one entry per subgroup, input order
};

struct CalibrationResult {
    double lambda_hat = 0.0;
    bool feasible = false;
    std::optional<int> binding_subgroup;  // subgroup whose UCB first exceeded alpha
    double alpha = 0.0;
    double delta = 0.0;
    GridConfig grid;
    std::vector<TracePoint> trace;

    std::string to_json() const;
};

// Sample mean plus the Hoeffding penalty sqrt(log(1/delta) / (2n)).
double hoeffding_ucb(std::span<const double> losses, double delta);

// Sentinel for "no finite scaling covers this voxel" (zero offset against a
// nonzero residual). Kept finite so it can live in a VoxelVolume.
inline constexpr double kCriticalInfinity = 1.7976931348623157e308;

// Per-voxel smallest lambda at which the dose enters the interval:
// max((point - dose)/lower, (dose - point)/upper, 0).
VoxelVolume critical_lambda(const HeuristicPrediction& pred, const VoxelVolume& dose);

// Downward grid scan with a single pooled subgroup.
CalibrationResult rcps_calibrate(const CalibrationSet& cal, const CalibrationOptions& opts);

// Downward grid scan that keeps every subgroup's UCB at or below alpha and
// backs up one step at the first violation.
CalibrationResult sg_rcps_calibrate(const std::vector<CalibrationSet>& cals,
                                    const CalibrationOptions& opts);

}  // namespace riskcal
