#include "riskcal/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include <boost/math/distributions/beta.hpp>
#include <json.hpp>

#include "riskcal/rng.hpp"

namespace riskcal {

namespace {

const char* subgroup_name(int id) {
    switch (id) {
        case kForeground: return "foreground";
        case kBackground: return "background";
        case kCombined: return "combined";
    }
    return "unknown";
}

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::pair<double, double> clopper_pearson(int k, int n, double confidence) {
    if (n <= 0 || k < 0 || k > n) throw contract_error("clopper_pearson: bad k/n");
    const double tail = (1.0 - confidence) / 2.0;
    double lo = 0.0, hi = 1.0;
    if (k > 0) lo = boost::math::quantile(boost::math::beta_distribution<double>(k, n - k + 1), tail);
    if (k < n)
        hi = boost::math::quantile(boost::math::beta_distribution<double>(k + 1, n - k), 1.0 - tail);
    return {lo, hi};
}

std::uint64_t train_stream_seed(std::uint64_t base_seed) {
    return derive_seed(base_seed, 0x545241494eULL);
}

std::uint64_t trial_stream_seed(std::uint64_t base_seed, int trial_index) {
    return derive_seed(derive_seed(base_seed, 0x545249414cULL),
                       static_cast<std::uint64_t>(trial_index));
}

namespace {

struct PredictedSet {
    std::vector<HeuristicPrediction> preds;
    std::vector<Sample> samples;
};

PredictedSet predict_dataset(const PhantomConfig& phantom, const ModelParams& model,
                             std::uint64_t seed, int n) {
    PredictedSet out;
    out.samples = generate_dataset(phantom, seed, n);
    out.preds.reserve(out.samples.size());
    for (const auto& s : out.samples) out.preds.push_back(predict(model, s));
    return out;
}

CalibrationSet make_set(const PredictedSet& ps, std::size_t mask_index, int subgroup_id) {
    std::vector<CalibrationEntry> entries;
    entries.reserve(ps.samples.size());
    for (std::size_t k = 0; k < ps.samples.size(); ++k)
        entries.push_back({ps.preds[k], ps.samples[k].dose, ps.samples[k].masks[mask_index]});
    return CalibrationSet::from_entries(std::move(entries), subgroup_id);
}

// Pooled voxel risk per subgroup at a fixed lambda over a test set.
std::array<double, kNumSubgroups> test_risks(const PredictedSet& ps, double lambda) {
    std::array<std::size_t, kNumSubgroups> missed{}, total{};
    for (std::size_t k = 0; k < ps.samples.size(); ++k) {
        const VoxelVolume crit = critical_lambda(ps.preds[k], ps.samples[k].dose);
        for (std::size_t z = 0; z < kNumSubgroups; ++z) {
            const auto& mask = ps.samples[k].masks[z];
            for (std::size_t i = 0; i < crit.size(); ++i) {
                if (!mask.membership[i]) continue;
                ++total[z];
                if (crit[i] > lambda) ++missed[z];
            }
        }
    }
    std::array<double, kNumSubgroups> risk{};
    for (std::size_t z = 0; z < kNumSubgroups; ++z)
        risk[z] = total[z] ? static_cast<double>(missed[z]) / static_cast<double>(total[z])
                           : std::nan("");
    return risk;
}

MethodOutcome infeasible_outcome() {
    MethodOutcome m;
    m.feasible = false;
    m.lambda_hat = std::nan("");
    m.risk = {std::nan(""), std::nan(""), std::nan("")};
    return m;
}

}  // namespace

TrialRecord run_trial(const PhantomConfig& phantom, const ModelParams& model, double alpha,
                      double delta, const GridConfig& grid, int n_cal, int n_test,
                      std::uint64_t trial_seed, HoeffdingGranularity granularity,
                      LossDenominator denominator) {
    if (n_cal < 1 || n_test < 1) throw contract_error("run_trial: n_cal and n_test must be >= 1");
    TrialRecord rec;
    rec.trial_seed = trial_seed;

    const PredictedSet cal =
        predict_dataset(phantom, model, derive_seed(trial_seed, 0xCA1ULL), n_cal);
    const PredictedSet test =
        predict_dataset(phantom, model, derive_seed(trial_seed, 0x7E57ULL), n_test);

    CalibrationOptions opts;
    opts.alpha = alpha;
    opts.delta = delta;
    opts.grid = grid;
    opts.granularity = granularity;
    opts.denominator = denominator;

    auto calibrated = [&](const CalibrationResult& r) {
        MethodOutcome m;
        m.lambda_hat = r.lambda_hat;
        m.feasible = r.feasible;
        m.risk = r.feasible ? test_risks(test, r.lambda_hat)
                            : std::array<double, kNumSubgroups>{std::nan(""), std::nan(""),
                                                                std::nan("")};
        return m;
    };

    try {
        rec.rcps = calibrated(rcps_calibrate(make_set(cal, 2, kCombined), opts));
    } catch (const irreducible_penalty_error&) {
        rec.rcps = infeasible_outcome();
    } catch (const empty_subgroup_error&) {
        rec.rcps = infeasible_outcome();
    }

    try {
        std::vector<CalibrationSet> sets;
        sets.push_back(make_set(cal, 0, kForeground));
        sets.push_back(make_set(cal, 1, kBackground));
        sets.push_back(make_set(cal, 2, kCombined));
        rec.sg_rcps = calibrated(sg_rcps_calibrate(sets, opts));
    } catch (const irreducible_penalty_error&) {
        rec.sg_rcps = infeasible_outcome();
    } catch (const empty_subgroup_error&) {
        rec.sg_rcps = infeasible_outcome();
    }
    return rec;
}

bool GuaranteeVerdict::sg_all_pass() const {
    for (const auto& r : rows)
        if (r.method == "sg_rcps" && !(r.pass && r.marginal_ok)) return false;
    return true;
}

GuaranteeVerdict verify_guarantee(const std::vector<TrialRecord>& trials, double alpha,
                                  double delta) {
    GuaranteeVerdict v;
    v.alpha = alpha;
    v.delta = delta;
    v.n_trials = static_cast<int>(trials.size());

    struct MethodView {
        std::string name;
        const MethodOutcome TrialRecord::* member;
    };
    const MethodView methods[2] = {{"rcps", &TrialRecord::rcps}, {"sg_rcps", &TrialRecord::sg_rcps}};

    for (const auto& mv : methods) {
        int feasible = 0;
        for (const auto& t : trials) feasible += (t.*(mv.member)).feasible;
        const int infeasible = v.n_trials - feasible;
        if (mv.name == "rcps") v.n_infeasible_rcps = infeasible;
        else v.n_infeasible_sg = infeasible;
        if (feasible < 100)
            throw contract_error("verify_guarantee: insufficient trials (" +
                                 std::to_string(feasible) + " feasible for " + mv.name +
                                 ", need >= 100)");
        for (std::size_t z = 0; z < kNumSubgroups; ++z) {
            SubgroupVerdict row;
            row.method = mv.name;
            row.subgroup_id = static_cast<int>(z) + 1;
            double risk_sum = 0.0, lambda_sum = 0.0;
            for (const auto& t : trials) {
                const MethodOutcome& m = t.*(mv.member);
                if (!m.feasible) continue;
                ++row.n_feasible;
                risk_sum += m.risk[z];
                lambda_sum += m.lambda_hat;
                if (m.risk[z] > alpha) ++row.violations;
            }
            row.violation_rate = static_cast<double>(row.violations) / row.n_feasible;
            std::tie(row.ci_lo, row.ci_hi) = clopper_pearson(row.violations, row.n_feasible);
            row.pass = row.ci_lo <= delta;
            row.mean_risk = risk_sum / row.n_feasible;
            row.marginal_ok = row.mean_risk <= alpha + delta;
            row.lambda_hat_mean = lambda_sum / row.n_feasible;
            v.rows.push_back(std::move(row));
        }
    }
    return v;
}

std::string GuaranteeVerdict::to_json() const {
    nlohmann::json j;
    j["alpha"] = alpha;
    j["delta"] = delta;
    j["n_trials"] = n_trials;
    j["n_infeasible_rcps"] = n_infeasible_rcps;
    j["n_infeasible_sg"] = n_infeasible_sg;
    j["sg_all_pass"] = sg_all_pass();
    nlohmann::json rows_j = nlohmann::json::array();
    for (const auto& r : rows) {
        rows_j.push_back({{"method", r.method},
                          {"subgroup", subgroup_name(r.subgroup_id)},
                          {"subgroup_id", r.subgroup_id},
                          {"n_feasible", r.n_feasible},
                          {"violations", r.violations},
                          {"violation_rate", r.violation_rate},
                          {"ci_lo", r.ci_lo},
                          {"ci_hi", r.ci_hi},
                          {"pass", r.pass},
                          {"mean_risk", r.mean_risk},
                          {"marginal_ok", r.marginal_ok},
                          {"lambda_hat_mean", r.lambda_hat_mean}});
    }
    j["rows"] = std::move(rows_j);
    return j.dump(2);
}

void emit_report(const std::string& dir, const std::vector<TrialRecord>& trials,
                 const GuaranteeVerdict& verdict) {
    if (trials.empty()) throw contract_error("emit_report: no trials");
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);

    {
        std::ofstream out(fs::path(dir) / "summary.csv", std::ios::binary);
        if (!out) throw io_error("emit_report: cannot write summary.csv in " + dir);
        out << "method,subgroup,mean_risk,violation_rate,ci_lo,ci_hi,lambda_hat_mean\n";
        for (const auto& r : verdict.rows)
            out << r.method << ',' << subgroup_name(r.subgroup_id) << ',' << fmt17(r.mean_risk)
                << ',' << fmt17(r.violation_rate) << ',' << fmt17(r.ci_lo) << ','
                << fmt17(r.ci_hi) << ',' << fmt17(r.lambda_hat_mean) << '\n';
    }
    {
        std::ofstream out(fs::path(dir) / "verdict.json", std::ios::binary);
        if (!out) throw io_error("emit_report: cannot write verdict.json in " + dir);
        out << verdict.to_json() << "\n";
    }
    {
        std::ofstream out(fs::path(dir) / "trials.csv", std::ios::binary);
        if (!out) throw io_error("emit_report: cannot write trials.csv in " + dir);
        out << "trial_seed,method,subgroup,risk,lambda_hat,feasible\n";
        for (const auto& t : trials) {
            const std::pair<const char*, const MethodOutcome*> methods[2] = {
                {"rcps", &t.rcps}, {"sg_rcps", &t.sg_rcps}};
            for (const auto& [name, m] : methods)
                for (std::size_t z = 0; z < kNumSubgroups; ++z)
                    out << t.trial_seed << ',' << name << ',' << subgroup_name(static_cast<int>(z) + 1)
                        << ',' << fmt17(m->risk[z]) << ',' << fmt17(m->lambda_hat) << ','
                        << (m->feasible ? 1 : 0) << '\n';
        }
    }
}

std::vector<TrialRecord> load_trials_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("load_trials_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw io_error("load_trials_csv: empty file " + path);

    std::map<std::uint64_t, TrialRecord> by_seed;
    std::vector<std::uint64_t> order;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string seed_s, method, subgroup, risk_s, lambda_s, feas_s;
        if (!std::getline(ss, seed_s, ',') || !std::getline(ss, method, ',') ||
            !std::getline(ss, subgroup, ',') || !std::getline(ss, risk_s, ',') ||
            !std::getline(ss, lambda_s, ',') || !std::getline(ss, feas_s, ','))
            throw io_error("load_trials_csv: malformed row: " + line);
        const std::uint64_t seed = std::stoull(seed_s);
        if (!by_seed.count(seed)) order.push_back(seed);
        TrialRecord& rec = by_seed[seed];
        rec.trial_seed = seed;
        MethodOutcome& m = method == "rcps" ? rec.rcps : rec.sg_rcps;
        std::size_t z;
        if (subgroup == "foreground") z = 0;
        else if (subgroup == "background") z = 1;
        else if (subgroup == "combined") z = 2;
        else throw io_error("load_trials_csv: unknown subgroup " + subgroup);
        m.risk[z] = std::stod(risk_s);
        m.lambda_hat = std::stod(lambda_s);
        m.feasible = feas_s == "1";
    }
    std::vector<TrialRecord> out;
    out.reserve(order.size());
    for (auto s : order) out.push_back(by_seed.at(s));
    return out;
}

VerifyOutput run_verify(const ExperimentConfig& cfg, const ModelParams* pretrained) {
    cfg.phantom.validate();
    if (cfg.n_trials < 1) throw contract_error("run_verify: n_trials must be >= 1");

    ModelParams model;
    if (pretrained) {
        model = *pretrained;
    } else {
        TrainConfig tc = cfg.train_cfg;
        tc.seed = train_stream_seed(cfg.seed);
        const auto train_data = generate_dataset(cfg.phantom, tc.seed, cfg.n_train);
        model = train(train_data, tc).params;
    }

    std::vector<TrialRecord> trials(cfg.n_trials);
    std::atomic<int> next{0};
    const int jobs = cfg.jobs > 0 ? cfg.jobs
                                  : std::max(1u, std::thread::hardware_concurrency());
    auto worker = [&]() {
        for (;;) {
            const int t = next.fetch_add(1);
            if (t >= cfg.n_trials) return;
            trials[t] = run_trial(cfg.phantom, model, cfg.alpha, cfg.delta, cfg.grid, cfg.n_cal,
                                  cfg.n_test, trial_stream_seed(cfg.seed, t), cfg.granularity,
                                  cfg.denominator);
        }
    };
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < jobs; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    VerifyOutput out;
    out.verdict = verify_guarantee(trials, cfg.alpha, cfg.delta);
    out.trials = std::move(trials);
    return out;
}

}  // namespace riskcal
