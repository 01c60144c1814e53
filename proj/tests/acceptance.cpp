// End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
// the process exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "riskcal/experiment.hpp"
#include "test_helpers.hpp"

using namespace riskcal;
using namespace riskcal::testing;

namespace {

int g_failures = 0;

void report(int id, bool ok, const std::string& what) {
    std::printf("%s criterion %d: %s\n", ok ? "PASS" : "FAIL", id, what.c_str());
    if (!ok) ++g_failures;
}

const SubgroupVerdict* find_row(const GuaranteeVerdict& v, const std::string& method, int sg) {
    for (const auto& r : v.rows)
        if (r.method == method && r.subgroup_id == sg) return &r;
    return nullptr;
}

std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", x);
    return buf;
}

// Criteria 1, 2, 3 and 6 share one 500-trial Monte Carlo run with a fixed
// pretrained model: alpha = delta = 0.1, 16x16x8 volumes, 50 calibration and
// 50 test samples per trial.
void monte_carlo_criteria() {
    const auto t0 = std::chrono::steady_clock::now();
    ExperimentConfig cfg;
    cfg.seed = 20260823;
    cfg.jobs = 0;

    TrainConfig tc = cfg.train_cfg;
    tc.seed = train_stream_seed(cfg.seed);
    const auto model = train(generate_dataset(cfg.phantom, tc.seed, cfg.n_train), tc);
    const auto out = run_verify(cfg, &model.params);
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const auto* sg_fg = find_row(out.verdict, "sg_rcps", kForeground);
    const auto* sg_bg = find_row(out.verdict, "sg_rcps", kBackground);
    const auto* sg_all = find_row(out.verdict, "sg_rcps", kCombined);
    const auto* rc_fg = find_row(out.verdict, "rcps", kForeground);
    const auto* rc_all = find_row(out.verdict, "rcps", kCombined);

    const bool c1 = sg_fg->ci_hi <= 0.15 && sg_bg->ci_hi <= 0.15 && sg_all->ci_hi <= 0.15;
    report(1, c1,
           "subgroup-aware calibration keeps every subgroup's violation rate low "
           "(95% upper bounds fg/bg/all = " +
               fmt(sg_fg->ci_hi) + "/" + fmt(sg_bg->ci_hi) + "/" + fmt(sg_all->ci_hi) +
               ", required <= 0.15; " + fmt(elapsed) + "s)");

    const bool c2 = rc_fg->violation_rate >= 0.5 && rc_all->violation_rate <= 0.15;
    report(2, c2,
           "pooled calibration reproduces the foreground failure mode (fg violation rate " +
               fmt(rc_fg->violation_rate) + " >= 0.5, combined " + fmt(rc_all->violation_rate) +
               " <= 0.15)");

    const bool c3 = sg_fg->mean_risk <= 0.2 && sg_bg->mean_risk <= 0.2 && sg_all->mean_risk <= 0.2;
    report(3, c3,
           "subgroup-aware mean risks stay within alpha + delta (fg/bg/all = " +
               fmt(sg_fg->mean_risk) + "/" + fmt(sg_bg->mean_risk) + "/" + fmt(sg_all->mean_risk) +
               " <= 0.2)");

    int order_violations = 0, feasible_pairs = 0;
    for (const auto& t : out.trials) {
        if (!t.rcps.feasible || !t.sg_rcps.feasible) continue;
        ++feasible_pairs;
        if (t.sg_rcps.lambda_hat < t.rcps.lambda_hat) ++order_violations;
    }
    report(6, feasible_pairs > 0 && order_violations == 0,
           "subgroup-aware lambda is at least the pooled lambda in all " +
               std::to_string(feasible_pairs) + " feasible trials (" +
               std::to_string(order_violations) + " exceptions)");
}

// One random calibration instance on a small grid.
struct Instance {
    std::vector<CalibrationEntry> entries;
    CalibrationOptions opts;
};

Instance random_instance(std::uint64_t seed) {
    CounterRng rng(seed, 0xACC);
    const Dims d{4, 3, 2};
    Instance inst;
    const int n = 3 + static_cast<int>(rng.below(4));
    for (int i = 0; i < n; ++i) {
        inst.entries.push_back({random_prediction(d, rng), random_volume(d, rng, -2.0, 2.0),
                                random_mask(d, rng, kCombined)});
    }
    // alpha safely above the worst-case penalty sqrt(log(1/0.5)/6) at 3
    // samples, so every instance is scannable
    inst.opts.alpha = 0.4 + rng.uniform() * 0.4;
    inst.opts.delta = 0.5 + rng.uniform() * 0.4;
    inst.opts.grid = {2.0 + rng.uniform(), 0.05};
    inst.opts.granularity =
        rng.uniform() < 0.5 ? HoeffdingGranularity::sample : HoeffdingGranularity::voxel;
    return inst;
}

void single_group_reduction() {
    int mismatches = 0;
    for (int k = 0; k < 100; ++k) {
        const auto inst = random_instance(1000 + k);
        const auto single =
            rcps_calibrate(CalibrationSet::from_entries(inst.entries, kCombined), inst.opts);
        const auto multi = sg_rcps_calibrate(
            {CalibrationSet::from_entries(inst.entries, kCombined)}, inst.opts);
        bool same = single.lambda_hat == multi.lambda_hat && single.feasible == multi.feasible &&
                    single.trace.size() == multi.trace.size();
        if (same)
            for (std::size_t i = 0; i < single.trace.size(); ++i)
                same = same && single.trace[i].lambda == multi.trace[i].lambda &&
                       single.trace[i].ucb == multi.trace[i].ucb;
        if (!same) ++mismatches;
    }
    report(4, mismatches == 0,
           "one-subgroup calibration equals pooled calibration bit for bit on 100 random "
           "instances (" +
               std::to_string(mismatches) + " mismatches)");
}

void max_decomposition() {
    int mismatches = 0;
    for (int k = 0; k < 100; ++k) {
        auto inst = random_instance(2000 + k);
        CounterRng rng(3000 + k, 0);
        std::vector<CalibrationSet> sets;
        for (int sg : {kForeground, kBackground, kCombined}) {
            auto entries = inst.entries;
            for (auto& e : entries) e.mask = random_mask(e.dose.dims(), rng, sg);
            sets.push_back(CalibrationSet::from_entries(std::move(entries), sg));
        }
        const auto joint = sg_rcps_calibrate(sets, inst.opts);
        double max_single = 0.0;
        bool all_feasible = true;
        for (const auto& s : sets) {
            const auto r = rcps_calibrate(s, inst.opts);
            all_feasible = all_feasible && r.feasible;
            max_single = std::max(max_single, r.lambda_hat);
        }
        if (joint.feasible != all_feasible ||
            (joint.feasible && joint.lambda_hat != max_single))
            ++mismatches;
    }
    report(5, mismatches == 0,
           "joint lambda equals the maximum of per-subgroup lambdas exactly on 100 random "
           "instances (" +
               std::to_string(mismatches) + " mismatches)");
}

// Upper-confidence-bound validity: against a brute-forced true risk, the
// bound may be exceeded in at most delta (+ Monte Carlo slack) of resampled
// calibration sets.
void ucb_validity() {
    PhantomConfig phantom;
    phantom.dims = {8, 8, 4};
    const double lambda = 5.0, delta = 0.1;
    const int n_cal = 50, n_resamples = 1000, n_truth = 100000;

    // Fixed heuristic predictor: point 0, unit offsets, so the per-sample
    // loss at this lambda is the masked fraction of doses above the cutoff.
    const auto pred = HeuristicPrediction{VoxelVolume::filled(phantom.dims, 0.0),
                                          VoxelVolume::filled(phantom.dims, 1.0),
                                          VoxelVolume::filled(phantom.dims, 1.0)};
    const auto interval = build_interval(pred, lambda);
    auto sample_loss = [&](std::uint64_t seed) {
        const auto s = generate_phantom(phantom, seed);
        return empirical_interval_loss(interval, s.dose, s.masks[2]);
    };

    double truth = 0.0;
    for (int i = 0; i < n_truth; ++i) truth += sample_loss(derive_seed(0x7247, i));
    truth /= n_truth;

    int exceeded = 0;
    std::vector<double> losses(n_cal);
    for (int r = 0; r < n_resamples; ++r) {
        for (int i = 0; i < n_cal; ++i)
            losses[i] = sample_loss(derive_seed(0xCA15E7 + r, i));
        if (truth > hoeffding_ucb(losses, delta)) ++exceeded;
    }
    const double rate = static_cast<double>(exceeded) / n_resamples;
    report(7, rate <= delta + 0.03,
           "the upper confidence bound fails to cover the true risk in " + fmt(rate) +
               " of 1000 resampled calibration sets (allowed <= 0.13; true risk " + fmt(truth) +
               ")");
}

void monotonicity_and_fast_path() {
    int bad = 0;
    for (int k = 0; k < 100; ++k) {
        CounterRng rng(4000 + k, 0);
        const Dims d{5, 4, 3};
        const auto pred = random_prediction(d, rng);
        const auto dose = random_volume(d, rng, -2.0, 2.0);
        const auto mask = random_mask(d, rng, kCombined);

        std::vector<double> crit;
        const auto crit_vol = critical_lambda(pred, dose);
        for (std::size_t i = 0; i < d.size(); ++i)
            if (mask.membership[i]) crit.push_back(crit_vol[i]);
        std::sort(crit.begin(), crit.end());

        double prev = 1.1;
        for (double lambda = 0.0; lambda <= 3.0 + 1e-9; lambda += 0.05) {
            const double loss = empirical_interval_loss(build_interval(pred, lambda), dose, mask);
            // fast path: voxels whose critical scaling exceeds lambda are
            // exactly the uncovered ones
            const auto uncovered =
                crit.end() - std::upper_bound(crit.begin(), crit.end(), lambda);
            const double fast =
                static_cast<double>(uncovered) / static_cast<double>(crit.size());
            if (loss != fast || loss > prev) {
                ++bad;
                break;
            }
            prev = loss;
        }
    }
    report(8, bad == 0,
           "empirical loss is non-increasing in lambda and the critical-scaling shortcut "
           "reproduces it exactly on 100 random volumes (" +
               std::to_string(bad) + " failures)");
}

void gradient_check() {
    CounterRng rng(7, 0);
    const int width = 4;
    int checked = 0, bad = 0;
    for (int draw = 0; draw < 50; ++draw) {
        auto params = init_model(width, {5, 4}, 5000 + draw);
        for (auto& p : params.params) p += (rng.uniform() - 0.5) * 0.2;
        std::vector<double> x(width);
        for (auto& v : x) v = rng.uniform() * 2 - 1;
        const double y = rng.uniform() * 2 - 1;
        const double alpha = 0.2;
        const std::array<double, 3> w = {1.0, 1.0, 1.0};

        const auto out = forward_voxel(params, x);
        if (std::abs(y - (out[0] - out[1])) < 1e-3 || std::abs(y - (out[0] + out[2])) < 1e-3)
            continue;  // too close to a pinball kink for finite differences
        ++checked;

        std::vector<double> grad(params.params.size(), 0.0);
        objective_and_gradient(params, x, y, alpha, w, grad);

        for (std::size_t i = 0; i < params.params.size(); ++i) {
            const double h = 1e-6;
            ModelParams pp = params, pm = params;
            pp.params[i] += h;
            pm.params[i] -= h;
            const double fd = (objective_frozen_point(pp, x, y, alpha, w, out[0]) -
                               objective_frozen_point(pm, x, y, alpha, w, out[0])) /
                              (2 * h);
            // absolute slack absorbs roundoff in the difference quotient
            // for near-zero gradient coordinates
            const double denom = std::max(std::abs(fd), std::abs(grad[i]));
            if (std::abs(fd - grad[i]) > 1e-5 * denom + 1e-9) ++bad;
        }
    }
    report(9, checked >= 30 && bad == 0,
           "analytic gradients match central finite differences to 1e-5 on " +
               std::to_string(checked) + " random draws (" + std::to_string(bad) +
               " bad coordinates)");
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void determinism() {
    ExperimentConfig cfg;
    cfg.n_train = 10;
    cfg.train_cfg.epochs = 20;
    cfg.n_cal = 20;
    cfg.n_test = 20;
    cfg.n_trials = 120;
    cfg.seed = 77;
    cfg.jobs = 0;
    cfg.grid.lambda_max = 100.0;  // keep the lightly trained model feasible

    const auto base = std::filesystem::temp_directory_path() / "riskcal_acceptance";
    std::filesystem::remove_all(base);
    bool identical = true;
    for (const char* name : {"run_a", "run_b"}) {
        const auto out = run_verify(cfg);
        const auto dir = base / name;
        std::filesystem::create_directories(dir);
        emit_report(dir.string(), out.trials, out.verdict);
    }
    for (const char* f : {"summary.csv", "verdict.json", "trials.csv"})
        identical = identical && slurp(base / "run_a" / f) == slurp(base / "run_b" / f);
    std::filesystem::remove_all(base);
    report(10, identical,
           "two end-to-end verification runs with the same seed emit byte-identical reports");
}

}  // namespace

int main() {
    single_group_reduction();
    max_decomposition();
    ucb_validity();
    monotonicity_and_fast_path();
    gradient_check();
    monte_carlo_criteria();
    determinism();
    std::printf("%s\n", g_failures == 0 ? "all criteria passed" : "SOME CRITERIA FAILED");
    return g_failures == 0 ? 0 : 1;
}
