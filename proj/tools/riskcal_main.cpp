#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "riskcal/experiment.hpp"

namespace {

using namespace riskcal;
using nlohmann::json;

constexpr std::uint64_t kDefaultSeed = 42;
constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitInfeasible = 2;
constexpr int kExitVerdictFailed = 3;

std::uint64_t default_seed() {
    if (const char* env = std::getenv("RISKSETS_SEED")) return std::stoull(env);
    return kDefaultSeed;
}

struct DimsOpt {
    int w = 16, h = 16, d = 8;
};

void add_dims_option(CLI::App* app, DimsOpt& dims) {
    app->add_option_function<std::string>(
           "--dims",
           [&dims](const std::string& s) {
               if (std::sscanf(s.c_str(), "%dx%dx%d", &dims.w, &dims.h, &dims.d) != 3)
                   throw CLI::ValidationError("--dims", "expected WxHxD, e.g. 16x16x8");
           },
           "volume dimensions as WxHxD")
        ->default_str("16x16x8");
}

json phantom_json(const PhantomConfig& p) {
    return {{"dims", {p.dims.w, p.dims.h, p.dims.d}},
            {"beam_fraction", p.beam_fraction},
            {"amplitude", p.profile.amplitude},
            {"falloff", p.profile.falloff},
            {"noise_fg", p.noise_fg},
            {"noise_bg", p.noise_bg},
            {"channels", p.channels},
            {"threshold_fraction", p.threshold_fraction}};
}

json train_json(const TrainConfig& t) {
    return {{"alpha", t.alpha},           {"learning_rate", t.learning_rate},
            {"epochs", t.epochs},         {"batch_size", t.batch_size},
            {"seed", t.seed},             {"loss_weights", t.loss_weights}};
}

// Every run records its full resolved configuration so outputs can be
// reproduced byte-identically. No timestamps: manifests must be stable too.
void write_manifest(const std::string& path, const std::string& subcommand, json config) {
    json m;
    m["tool"] = "riskcal";
    m["manifest_version"] = 1;
    m["dataset_format_version"] = 1;
    m["checkpoint_format_version"] = 1;
    m["subcommand"] = subcommand;
    m["config"] = std::move(config);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open manifest path " + path);
    out << m.dump(2) << "\n";
    if (!out) throw io_error("manifest write failed for " + path);
}

void add_phantom_options(CLI::App* app, PhantomConfig& phantom, DimsOpt& dims) {
    add_dims_option(app, dims);
    app->add_option("--beam-fraction", phantom.beam_fraction, "target foreground voxel fraction")
        ->capture_default_str();
    app->add_option("--amplitude", phantom.profile.amplitude, "peak dose in Gray")
        ->capture_default_str();
    app->add_option("--falloff", phantom.profile.falloff, "attenuation length in voxels")
        ->capture_default_str();
    app->add_option("--noise-fg", phantom.noise_fg, "dose noise sd inside the beam")
        ->capture_default_str();
    app->add_option("--noise-bg", phantom.noise_bg, "dose noise sd outside the beam")
        ->capture_default_str();
    app->add_option("--threshold-fraction", phantom.threshold_fraction,
                    "foreground threshold as a fraction of the dose maximum")
        ->capture_default_str();
}

void add_train_options(CLI::App* app, TrainConfig& tc) {
    app->add_option("--train-alpha", tc.alpha, "quantile miscoverage level for the offset heads")
        ->capture_default_str();
    app->add_option("--lr", tc.learning_rate, "learning rate")->capture_default_str();
    app->add_option("--epochs", tc.epochs, "training epochs")->capture_default_str();
    app->add_option("--batch-size", tc.batch_size, "samples per mini-batch")
        ->capture_default_str();
}

void add_calibration_options(CLI::App* app, CalibrationOptions& opts, std::string& granularity) {
    app->add_option("--alpha", opts.alpha, "target risk level")->capture_default_str();
    app->add_option("--delta", opts.delta, "risk of exceeding alpha")->capture_default_str();
    app->add_option("--lambda-max", opts.grid.lambda_max, "upper end of the lambda grid")
        ->capture_default_str();
    app->add_option("--d-lambda", opts.grid.d_lambda, "lambda grid step")->capture_default_str();
    app->add_option("--hoeffding-n", granularity,
                    "what counts as one Hoeffding observation: sample or voxel")
        ->check(CLI::IsMember({"sample", "voxel"}))
        ->capture_default_str();
    app->add_flag_callback(
        "--denominator-whd", [&opts] { opts.denominator = LossDenominator::whd; },
        "divide losses by the full volume instead of the masked voxel count");
}

HoeffdingGranularity parse_granularity(const std::string& s) {
    return s == "voxel" ? HoeffdingGranularity::voxel : HoeffdingGranularity::sample;
}

int subgroup_from_name(const std::string& name) {
    if (name == "fg") return kForeground;
    if (name == "bg") return kBackground;
    if (name == "all") return kCombined;
    throw contract_error("unknown subgroup " + name + " (expected fg, bg or all)");
}

int run_gen(const std::string& out, PhantomConfig phantom, const DimsOpt& dims,
            std::uint64_t seed, int n) {
    phantom.dims = {dims.w, dims.h, dims.d};
    DatasetFile ds{phantom, seed, generate_dataset(phantom, seed, n)};
    save_dataset(out, ds);
    write_manifest(out + ".manifest.json", "gen",
                   {{"out", out}, {"seed", seed}, {"n", n}, {"phantom", phantom_json(phantom)}});
    return kExitOk;
}

int run_train(const std::string& data, const std::string& out, TrainConfig tc,
              std::uint64_t seed) {
    tc.seed = seed;
    const auto ds = load_dataset(data);
    const auto res = train(ds.samples, tc);
    save_checkpoint(out, {res.params, tc, res.loss_trace});
    write_manifest(out + ".manifest.json", "train",
                   {{"data", data}, {"out", out}, {"train", train_json(tc)}});
    std::cout << "trained " << res.params.params.size() << " parameters, final loss "
              << res.loss_trace.back() << "\n";
    return kExitOk;
}

int run_calibrate(const std::string& model_path, const std::string& data,
                  const std::string& method, const std::vector<std::string>& groups,
                  const CalibrationOptions& opts, const std::string& granularity,
                  const std::string& out) {
    CalibrationOptions resolved = opts;
    resolved.granularity = parse_granularity(granularity);
    const auto ckpt = load_checkpoint(model_path);
    const auto ds = load_dataset(data);

    std::vector<HeuristicPrediction> preds;
    preds.reserve(ds.samples.size());
    for (const auto& s : ds.samples) preds.push_back(predict(ckpt.params, s));

    auto set_for = [&](int subgroup_id) {
        std::vector<CalibrationEntry> entries;
        for (std::size_t i = 0; i < ds.samples.size(); ++i) {
            const auto& s = ds.samples[i];
            entries.push_back({preds[i], s.dose, s.masks[static_cast<std::size_t>(subgroup_id - 1)]});
        }
        return CalibrationSet::from_entries(std::move(entries), subgroup_id);
    };

    CalibrationResult res;
    if (method == "rcps") {
        res = rcps_calibrate(set_for(kCombined), resolved);
    } else {
        std::vector<CalibrationSet> sets;
        for (const auto& g : groups) sets.push_back(set_for(subgroup_from_name(g)));
        res = sg_rcps_calibrate(sets, resolved);
    }

    const std::string result_json = res.to_json();
    if (out.empty()) {
        std::cout << result_json << "\n";
    } else {
        std::ofstream f(out, std::ios::binary);
        if (!f) throw io_error("cannot open " + out);
        f << result_json << "\n";
        write_manifest(out + ".manifest.json", "calibrate",
                       {{"model", model_path},
                        {"data", data},
                        {"method", method},
                        {"groups", groups},
                        {"alpha", resolved.alpha},
                        {"delta", resolved.delta},
                        {"lambda_max", resolved.grid.lambda_max},
                        {"d_lambda", resolved.grid.d_lambda},
                        {"hoeffding_n", granularity},
                        {"out", out}});
    }
    if (!res.feasible) {
        std::cerr << "riskcal: infeasible: no lambda on the grid satisfies the bound\n";
        return kExitInfeasible;
    }
    return kExitOk;
}

int run_verify(const std::string& out_dir, ExperimentConfig cfg, const DimsOpt& dims,
               const std::string& granularity, const std::string& model_path, bool strict) {
    cfg.phantom.dims = {dims.w, dims.h, dims.d};
    cfg.granularity = parse_granularity(granularity);

    VerifyOutput out;
    if (model_path.empty()) {
        out = riskcal::run_verify(cfg);
    } else {
        const auto ckpt = load_checkpoint(model_path);
        out = riskcal::run_verify(cfg, &ckpt.params);
    }
    std::filesystem::create_directories(out_dir);
    emit_report(out_dir, out.trials, out.verdict);
    write_manifest((std::filesystem::path(out_dir) / "manifest.json").string(), "verify",
                   {{"out_dir", out_dir},
                    {"phantom", phantom_json(cfg.phantom)},
                    {"train", train_json(cfg.train_cfg)},
                    {"pretrained_model", model_path},
                    {"n_train", cfg.n_train},
                    {"alpha", cfg.alpha},
                    {"delta", cfg.delta},
                    {"lambda_max", cfg.grid.lambda_max},
                    {"d_lambda", cfg.grid.d_lambda},
                    {"hoeffding_n", granularity},
                    {"n_cal", cfg.n_cal},
                    {"n_test", cfg.n_test},
                    {"n_trials", cfg.n_trials},
                    {"seed", cfg.seed},
                    {"strict", strict}});
    std::cout << out.verdict.to_json() << "\n";
    if (strict && !out.verdict.sg_all_pass()) {
        std::cerr << "riskcal: verdict: subgroup guarantee check failed\n";
        return kExitVerdictFailed;
    }
    return kExitOk;
}

int run_report(const std::string& trials_path, double alpha, double delta,
               const std::string& out_dir) {
    const auto trials = load_trials_csv(trials_path);
    const auto verdict = verify_guarantee(trials, alpha, delta);
    if (out_dir.empty()) {
        std::cout << verdict.to_json() << "\n";
    } else {
        std::filesystem::create_directories(out_dir);
        emit_report(out_dir, trials, verdict);
        write_manifest((std::filesystem::path(out_dir) / "manifest.json").string(), "report",
                       {{"trials", trials_path},
                        {"alpha", alpha},
                        {"delta", delta},
                        {"out_dir", out_dir}});
        std::cout << verdict.to_json() << "\n";
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"risk-controlled prediction interval calibration toolkit"};
    app.require_subcommand(1);
    app.set_config("--config");

    DimsOpt dims;
    PhantomConfig phantom;
    TrainConfig train_cfg;
    CalibrationOptions cal_opts;
    std::uint64_t seed = default_seed();
    std::string granularity = "sample";

    // gen
    auto* gen = app.add_subcommand("gen", "generate a synthetic phantom dataset");
    std::string gen_out;
    int gen_n = 50;
    gen->add_option("--out", gen_out, "output dataset path")->required();
    gen->add_option("--seed", seed, "dataset seed");
    gen->add_option("--n", gen_n, "number of samples")->capture_default_str();
    add_phantom_options(gen, phantom, dims);

    // train
    auto* tr = app.add_subcommand("train", "train the interval regressor on a dataset");
    std::string train_data, train_out;
    tr->add_option("--data", train_data, "input dataset path")->required();
    tr->add_option("--out", train_out, "output checkpoint path")->required();
    tr->add_option("--seed", seed, "training seed");
    add_train_options(tr, train_cfg);

    // calibrate
    auto* cal = app.add_subcommand("calibrate", "calibrate lambda on a dataset");
    std::string cal_model, cal_data, cal_method = "rcps", cal_out;
    std::vector<std::string> cal_groups = {"fg", "bg", "all"};
    cal->add_option("--model", cal_model, "model checkpoint path")->required();
    cal->add_option("--data", cal_data, "calibration dataset path")->required();
    cal->add_option("--method", cal_method, "calibration method")
        ->check(CLI::IsMember({"rcps", "sg-rcps"}))
        ->capture_default_str();
    cal->add_option("--groups", cal_groups, "subgroups for sg-rcps (fg, bg, all)")
        ->delimiter(',')
        ->capture_default_str();
    cal->add_option("--out", cal_out, "result JSON path (stdout when omitted)");
    add_calibration_options(cal, cal_opts, granularity);

    // verify
    auto* ver = app.add_subcommand("verify", "Monte Carlo guarantee verification");
    ExperimentConfig exp_cfg;
    std::string ver_out_dir, ver_model;
    std::string ver_granularity = "voxel";
    bool strict = false;
    ver->add_option("--out-dir", ver_out_dir, "report output directory")->required();
    ver->add_option("--seed", exp_cfg.seed, "experiment seed")->default_val(default_seed());
    ver->add_option("--model", ver_model, "pretrained checkpoint (skips training)");
    ver->add_option("--n-train", exp_cfg.n_train, "training samples")->capture_default_str();
    ver->add_option("--n-cal", exp_cfg.n_cal, "calibration samples per trial")
        ->capture_default_str();
    ver->add_option("--n-test", exp_cfg.n_test, "test samples per trial")->capture_default_str();
    ver->add_option("--trials", exp_cfg.n_trials, "number of Monte Carlo trials")
        ->capture_default_str();
    ver->add_option("--jobs", exp_cfg.jobs, "trial worker threads, 0 = hardware concurrency")
        ->capture_default_str();
    ver->add_flag("--strict", strict, "exit 3 when the subgroup guarantee verdict fails");
    ver->add_option("--alpha", exp_cfg.alpha, "target risk level")->capture_default_str();
    ver->add_option("--delta", exp_cfg.delta, "risk of exceeding alpha")->capture_default_str();
    ver->add_option("--lambda-max", exp_cfg.grid.lambda_max, "upper end of the lambda grid")
        ->capture_default_str();
    ver->add_option("--d-lambda", exp_cfg.grid.d_lambda, "lambda grid step")
        ->capture_default_str();
    ver->add_option("--hoeffding-n", ver_granularity,
                    "what counts as one Hoeffding observation: sample or voxel")
        ->check(CLI::IsMember({"sample", "voxel"}))
        ->capture_default_str();
    DimsOpt ver_dims;
    add_phantom_options(ver, exp_cfg.phantom, ver_dims);
    add_train_options(ver, exp_cfg.train_cfg);

    // report
    auto* rep = app.add_subcommand("report", "recompute a verdict from a per-trial CSV");
    std::string rep_trials, rep_out_dir;
    double rep_alpha = 0.1, rep_delta = 0.1;
    rep->add_option("--trials", rep_trials, "trials.csv path")->required();
    rep->add_option("--alpha", rep_alpha, "target risk level")->capture_default_str();
    rep->add_option("--delta", rep_delta, "risk of exceeding alpha")->capture_default_str();
    rep->add_option("--out-dir", rep_out_dir, "report output directory (stdout when omitted)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return run_gen(gen_out, phantom, dims, seed, gen_n);
        if (tr->parsed()) return run_train(train_data, train_out, train_cfg, seed);
        if (cal->parsed())
            return run_calibrate(cal_model, cal_data, cal_method, cal_groups, cal_opts,
                                 granularity, cal_out);
        if (ver->parsed())
            return run_verify(ver_out_dir, exp_cfg, ver_dims, ver_granularity, ver_model, strict);
        if (rep->parsed()) return run_report(rep_trials, rep_alpha, rep_delta, rep_out_dir);
    } catch (const irreducible_penalty_error& e) {
        std::cerr << "riskcal: infeasible: " << e.what() << "\n";
        return kExitInfeasible;
    } catch (const std::exception& e) {
        std::cerr << "riskcal: error: " << e.what() << "\n";
        return kExitError;
    }
    return kExitError;
}
