#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "riskcal/calibration.hpp"
#include "riskcal/model.hpp"
#include "riskcal/phantom.hpp"

namespace riskcal {

inline constexpr std::size_t kNumSubgroups = 3;  // fg, bg, combined, ids 1..3

struct MethodOutcome {
    double lambda_hat = 0.0;
    bool feasible = false;
    // Pooled per-voxel test risk per subgroup (fg, bg, combined); NaN when
    // the calibration was infeasible.
    std::array<double, kNumSubgroups> risk{};
};

struct TrialRecord {
    std::uint64_t trial_seed = 0;
    MethodOutcome rcps;     // calibrated on the combined subgroup only
    MethodOutcome sg_rcps;  // calibrated jointly on fg, bg, combined
};

struct SubgroupVerdict {
    std::string method;
    int subgroup_id = 0;
    int n_feasible = 0;
    int violations = 0;        // trials with risk > alpha
    double violation_rate = 0.0;
    double ci_lo = 0.0;        // Clopper-Pearson 95%
    double ci_hi = 0.0;
    bool pass = false;         // cannot reject violation probability <= delta
    double mean_risk = 0.0;
    bool marginal_ok = false;  // mean risk <= alpha + delta
    double lambda_hat_mean = 0.0;
};

struct GuaranteeVerdict {
    double alpha = 0.0;
    double delta = 0.0;
    int n_trials = 0;
    int n_infeasible_rcps = 0;
    int n_infeasible_sg = 0;
    std::vector<SubgroupVerdict> rows;  // 2 methods x 3 subgroups

    bool sg_all_pass() const;
    std::string to_json() const;
};

// Exact binomial 95% confidence interval for k successes out of n.
std::pair<double, double> clopper_pearson(int k, int n, double confidence = 0.95);

// One Monte Carlo trial: fresh calibration and test data, both calibration
// methods, pooled per-subgroup test risks at each method's lambda.
TrialRecord run_trial(const PhantomConfig& phantom, const ModelParams& model, double alpha,
                      double delta, const GridConfig& grid, int n_cal, int n_test,
                      std::uint64_t trial_seed,
                      HoeffdingGranularity granularity = HoeffdingGranularity::voxel,
                      LossDenominator denominator = LossDenominator::masked);

GuaranteeVerdict verify_guarantee(const std::vector<TrialRecord>& trials, double alpha,
                                  double delta);

// Writes summary.csv, verdict.json and trials.csv under `dir`.
void emit_report(const std::string& dir, const std::vector<TrialRecord>& trials,
                 const GuaranteeVerdict& verdict);

std::vector<TrialRecord> load_trials_csv(const std::string& path);

// Standard imbalanced verification setup. The near-flat beam profile keeps
// the foreground population homogeneous, so per-voxel coverage indicators
// are exchangeable and the pooled Hoeffding bound is honest; the noise
// ratio still pushes pooled calibration toward the background.
inline PhantomConfig standard_phantom() {
    PhantomConfig p;
    p.profile.falloff = 1000.0;
    return p;
}

inline TrainConfig standard_train_config() {
    TrainConfig t;
    t.epochs = 150;
    return t;
}

struct ExperimentConfig {
    PhantomConfig phantom = standard_phantom();
    TrainConfig train_cfg = standard_train_config();
    int n_train = 40;
    double alpha = 0.1;
    double delta = 0.1;
    GridConfig grid;
    HoeffdingGranularity granularity = HoeffdingGranularity::voxel;
    LossDenominator denominator = LossDenominator::masked;
    int n_cal = 50;
    int n_test = 50;
    int n_trials = 500;
    std::uint64_t seed = 0;
    int jobs = 0;  // 0 = hardware concurrency
};

// Seed streams, disjoint by construction.
std::uint64_t train_stream_seed(std::uint64_t base_seed);
std::uint64_t trial_stream_seed(std::uint64_t base_seed, int trial_index);

struct VerifyOutput {
    std::vector<TrialRecord> trials;
    GuaranteeVerdict verdict;
};

// Trains the shared model on an independent seed stream (unless one is
// given), runs all trials in a worker pool, and computes the verdict.
VerifyOutput run_verify(const ExperimentConfig& cfg, const ModelParams* pretrained = nullptr);

}  // namespace riskcal
