#include "riskcal/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

namespace riskcal {

CalibrationSet CalibrationSet::from_entries(std::vector<CalibrationEntry> raw, int subgroup_id) {
    CalibrationSet out;
    out.subgroup_id = subgroup_id;
    for (auto& e : raw) {
        e.pred.validate();
        if (!(e.pred.point.dims() == e.dose.dims()) || !(e.mask.dims == e.dose.dims()))
            throw contract_error("CalibrationSet: dims disagree");
        e.mask.validate();
        if (e.mask.count() == 0) continue;  // empty subgroup for this segment
        out.entries.push_back(std::move(e));
    }
    if (out.entries.empty())
        throw empty_subgroup_error("CalibrationSet: no entries with nonempty masks for subgroup " +
                                   std::to_string(subgroup_id));
    return out;
}

double hoeffding_ucb(std::span<const double> losses, double delta) {
    if (losses.empty()) throw contract_error("hoeffding_ucb: empty loss list");
    if (!(delta > 0.0 && delta < 1.0)) throw contract_error("hoeffding_ucb: delta must be in (0,1)");
    double sum = 0.0;
    for (double l : losses) {
        if (!(l >= 0.0 && l <= 1.0)) throw contract_error("hoeffding_ucb: loss outside [0,1]");
        sum += l;
    }
    const double n = static_cast<double>(losses.size());
    return sum / n + std::sqrt(std::log(1.0 / delta) / (2.0 * n));
}

VoxelVolume critical_lambda(const HeuristicPrediction& pred, const VoxelVolume& dose) {
    pred.validate();
    if (!(pred.point.dims() == dose.dims())) throw contract_error("critical_lambda: dims disagree");
    const auto n = dose.size();
    std::vector<double> crit(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double below = pred.point[i] - dose[i];  // needs lower side if > 0
        const double above = dose[i] - pred.point[i];
        double c = 0.0;
        if (below > 0.0)
            c = pred.lower_offset[i] > 0.0 ? below / pred.lower_offset[i] : kCriticalInfinity;
        else if (above > 0.0)
            c = pred.upper_offset[i] > 0.0 ? above / pred.upper_offset[i] : kCriticalInfinity;
        crit[i] = std::min(c, kCriticalInfinity);
    }
    return VoxelVolume(dose.dims(), std::move(crit));
}

namespace {

// Per-entry sorted masked critical values; a voxel is missed at lambda iff
// its critical value is strictly greater than lambda.
struct EntryCriticals {
    std::vector<double> sorted;
    std::size_t denominator = 0;  // masked count or WHD, per options
};

struct SetCriticals {
    std::vector<EntryCriticals> entries;
    std::size_t total_voxels = 0;  // sum of denominators
    double penalty = 0.0;
    double max_finite_critical = 0.0;
};

SetCriticals prepare(const CalibrationSet& cal, const CalibrationOptions& opts) {
    SetCriticals sc;
    sc.entries.reserve(cal.entries.size());
    for (const auto& e : cal.entries) {
        const VoxelVolume crit = critical_lambda(e.pred, e.dose);
        EntryCriticals ec;
        for (std::size_t i = 0; i < crit.size(); ++i)
            if (e.mask.membership[i]) ec.sorted.push_back(crit[i]);
        if (ec.sorted.empty())
            throw empty_subgroup_error("calibrate: empty subgroup mask in entry");
        std::sort(ec.sorted.begin(), ec.sorted.end());
        ec.denominator = opts.denominator == LossDenominator::masked ? ec.sorted.size()
                                                                     : e.dose.size();
        for (double c : ec.sorted)
            if (c < kCriticalInfinity) sc.max_finite_critical = std::max(sc.max_finite_critical, c);
        sc.total_voxels += ec.denominator;
        sc.entries.push_back(std::move(ec));
    }
    const double n = opts.granularity == HoeffdingGranularity::sample
                         ? static_cast<double>(sc.entries.size())
                         : static_cast<double>(sc.total_voxels);
    sc.penalty = std::sqrt(std::log(1.0 / opts.delta) / (2.0 * n));
    if (sc.penalty >= opts.alpha) {
        const long long min_n =
            static_cast<long long>(std::floor(std::log(1.0 / opts.delta) /
                                              (2.0 * opts.alpha * opts.alpha))) + 1;
        std::ostringstream msg;
        msg << "irreducible penalty: sqrt(log(1/delta)/(2n)) = " << sc.penalty
            << " >= alpha = " << opts.alpha << " at n = " << static_cast<long long>(n)
            << "; need n >= " << min_n;
        throw irreducible_penalty_error(msg.str(), min_n);
    }
    return sc;
}

double ucb_at(const SetCriticals& sc, double lambda, const CalibrationOptions& opts) {
    if (opts.granularity == HoeffdingGranularity::voxel) {
        std::size_t missed = 0;
        for (const auto& ec : sc.entries)
            missed += ec.sorted.end() -
                      std::upper_bound(ec.sorted.begin(), ec.sorted.end(), lambda);
        return static_cast<double>(missed) / static_cast<double>(sc.total_voxels) + sc.penalty;
    }
    double sum = 0.0;
    for (const auto& ec : sc.entries) {
        const std::size_t missed =
            ec.sorted.end() - std::upper_bound(ec.sorted.begin(), ec.sorted.end(), lambda);
        sum += static_cast<double>(missed) / static_cast<double>(ec.denominator);
    }
    return sum / static_cast<double>(sc.entries.size()) + sc.penalty;
}

CalibrationResult grid_scan(const std::vector<CalibrationSet>& cals,
                            const CalibrationOptions& opts) {
    opts.validate();
    if (cals.empty()) throw contract_error("calibrate: need at least one subgroup");

    std::vector<SetCriticals> prepared;
    prepared.reserve(cals.size());
    for (const auto& c : cals) prepared.push_back(prepare(c, opts));

    GridConfig grid = opts.grid;
    if (grid.auto_max) {
        double max_crit = 0.0;
        for (const auto& sc : prepared) max_crit = std::max(max_crit, sc.max_finite_critical);
        grid.lambda_max = std::max(1.1 * max_crit, grid.d_lambda * 2.0);
    }

    CalibrationResult res;
    res.alpha = opts.alpha;
    res.delta = opts.delta;
    res.grid = grid;

    auto ucbs_at = [&](double lambda) {
        std::vector<double> u(prepared.size());
        for (std::size_t z = 0; z < prepared.size(); ++z) u[z] = ucb_at(prepared[z], lambda, opts);
        return u;
    };
    auto first_violator = [&](const std::vector<double>& u) -> std::optional<int> {
        for (std::size_t z = 0; z < u.size(); ++z)
            if (u[z] > opts.alpha) return cals[z].subgroup_id;
        return std::nullopt;
    };

    // All subgroup UCBs must clear alpha at lambda_max before the descent.
    std::vector<double> u = ucbs_at(grid.lambda_max);
    res.trace.push_back({grid.lambda_max, u});
    if (auto viol = first_violator(u)) {
        res.lambda_hat = grid.lambda_max;
        res.feasible = false;
        res.binding_subgroup = viol;
        return res;
    }

    double lambda = grid.lambda_max;
    for (int i = 1;; ++i) {
        const double next = grid.lambda_max - i * grid.d_lambda;
        if (next < 0.0) break;  // clamp: smallest nonnegative grid value wins
        u = ucbs_at(next);
        res.trace.push_back({next, u});
        if (auto viol = first_violator(u)) {
            res.lambda_hat = lambda;  // back up one step
            res.feasible = true;
            res.binding_subgroup = viol;
            return res;
        }
        lambda = next;
    }
    res.lambda_hat = lambda;
    res.feasible = true;
    return res;
}

}  // namespace

CalibrationResult rcps_calibrate(const CalibrationSet& cal, const CalibrationOptions& opts) {
    return grid_scan({cal}, opts);
}

CalibrationResult sg_rcps_calibrate(const std::vector<CalibrationSet>& cals,
                                    const CalibrationOptions& opts) {
    return grid_scan(cals, opts);
}

std::string CalibrationResult::to_json() const {
    nlohmann::json j;
    j["lambda_hat"] = lambda_hat;
    j["feasible"] = feasible;
    if (binding_subgroup)
        j["binding_subgroup"] = *binding_subgroup;
    else
        j["binding_subgroup"] = nullptr;
    j["alpha"] = alpha;
    j["delta"] = delta;
    j["grid"] = {{"lambda_max", grid.lambda_max}, {"d_lambda", grid.d_lambda}};
    nlohmann::json jt = nlohmann::json::array();
    for (const auto& t : trace) jt.push_back({{"lambda", t.lambda}, {"ucb", t.ucb}});
    j["trace"] = std::move(jt);
    return j.dump(2);
}

}  // namespace riskcal
