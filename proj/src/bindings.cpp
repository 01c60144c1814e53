#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "riskcal/experiment.hpp"

namespace py = pybind11;
using namespace riskcal;

namespace {

// Volumes cross the boundary as C-contiguous float64 arrays of shape
// (D, H, W), matching the x-fastest flat layout.
VoxelVolume volume_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 3) throw contract_error("expected a 3D array (D, H, W)");
    const Dims dims{static_cast<int>(a.shape(2)), static_cast<int>(a.shape(1)),
                    static_cast<int>(a.shape(0))};
    std::vector<double> values(a.data(), a.data() + a.size());
    return VoxelVolume(dims, std::move(values));
}

py::array_t<double> volume_to_array(const VoxelVolume& v) {
    const Dims d = v.dims();
    py::array_t<double> a({d.d, d.h, d.w});
    std::copy(v.values().begin(), v.values().end(), a.mutable_data());
    return a;
}

SubgroupMask mask_from_array(const py::array_t<bool, py::array::c_style | py::array::forcecast>& a,
                             int subgroup_id) {
    if (a.ndim() != 3) throw contract_error("expected a 3D mask (D, H, W)");
    SubgroupMask m{{static_cast<int>(a.shape(2)), static_cast<int>(a.shape(1)),
                    static_cast<int>(a.shape(0))},
                   std::vector<std::uint8_t>(a.data(), a.data() + a.size()),
                   subgroup_id};
    return m;
}

py::dict result_to_dict(const CalibrationResult& r) {
    py::dict d;
    d["lambda_hat"] = r.lambda_hat;
    d["feasible"] = r.feasible;
    d["binding_subgroup"] =
        r.binding_subgroup ? py::object(py::int_(*r.binding_subgroup)) : py::none();
    d["alpha"] = r.alpha;
    d["delta"] = r.delta;
    return d;
}

CalibrationOptions make_options(double alpha, double delta, double lambda_max, double d_lambda,
                                const std::string& granularity) {
    CalibrationOptions opts;
    opts.alpha = alpha;
    opts.delta = delta;
    opts.grid.lambda_max = lambda_max;
    opts.grid.d_lambda = d_lambda;
    if (granularity == "voxel")
        opts.granularity = HoeffdingGranularity::voxel;
    else if (granularity != "sample")
        throw contract_error("granularity must be 'sample' or 'voxel'");
    return opts;
}

// entries: list of (point, lower_offset, upper_offset, dose, mask) tuples.
CalibrationSet set_from_python(const py::list& entries, int subgroup_id) {
    std::vector<CalibrationEntry> out;
    for (const auto& item : entries) {
        const auto t = item.cast<py::tuple>();
        if (t.size() != 5)
            throw contract_error("each entry must be (point, lower, upper, dose, mask)");
        out.push_back({HeuristicPrediction{volume_from_array(t[0].cast<py::array_t<double>>()),
                                           volume_from_array(t[1].cast<py::array_t<double>>()),
                                           volume_from_array(t[2].cast<py::array_t<double>>())},
                       volume_from_array(t[3].cast<py::array_t<double>>()),
                       mask_from_array(t[4].cast<py::array_t<bool>>(), subgroup_id)});
    }
    return CalibrationSet::from_entries(std::move(out), subgroup_id);
}

}  // namespace

PYBIND11_MODULE(_riskcal, m) {
    m.doc() = "risk-controlled prediction interval calibration";

    py::register_exception<contract_error>(m, "ContractError", PyExc_ValueError);
    py::register_exception<irreducible_penalty_error>(m, "IrreduciblePenaltyError",
                                                      PyExc_RuntimeError);
    py::register_exception<training_error>(m, "TrainingError", PyExc_RuntimeError);
    py::register_exception<io_error>(m, "IOError", PyExc_OSError);

    m.attr("FOREGROUND") = kForeground;
    m.attr("BACKGROUND") = kBackground;
    m.attr("COMBINED") = kCombined;

    m.def(
        "generate_phantom",
        [](std::uint64_t seed, std::tuple<int, int, int> dims, double beam_fraction,
           double amplitude, double falloff, double noise_fg, double noise_bg,
           double threshold_fraction) {
            PhantomConfig cfg;
            cfg.dims = {std::get<2>(dims), std::get<1>(dims), std::get<0>(dims)};
            cfg.beam_fraction = beam_fraction;
            cfg.profile.amplitude = amplitude;
            cfg.profile.falloff = falloff;
            cfg.noise_fg = noise_fg;
            cfg.noise_bg = noise_bg;
            cfg.threshold_fraction = threshold_fraction;
            const Sample s = generate_phantom(cfg, seed);
            py::dict out;
            py::list channels;
            for (const auto& ch : s.features) channels.append(volume_to_array(ch));
            out["channels"] = channels;
            out["dose"] = volume_to_array(s.dose);
            py::list masks;
            for (const auto& msk : s.masks) {
                py::array_t<bool> a({s.dose.dims().d, s.dose.dims().h, s.dose.dims().w});
                std::copy(msk.membership.begin(), msk.membership.end(), a.mutable_data());
                masks.append(a);
            }
            out["masks"] = masks;
            return out;
        },
        py::arg("seed"), py::arg("dims") = std::make_tuple(8, 16, 16),
        py::arg("beam_fraction") = 0.08, py::arg("amplitude") = 10.0, py::arg("falloff") = 8.0,
        py::arg("noise_fg") = 1.0, py::arg("noise_bg") = 0.02,
        py::arg("threshold_fraction") = kDefaultThresholdFraction,
        "Generate one synthetic phantom; arrays are (D, H, W).");

    m.def(
        "build_interval",
        [](const py::array_t<double>& point, const py::array_t<double>& lower,
           const py::array_t<double>& upper, double lam) {
            const auto iv = build_interval(
                HeuristicPrediction{volume_from_array(point), volume_from_array(lower),
                                    volume_from_array(upper)},
                lam);
            return py::make_tuple(volume_to_array(iv.lo), volume_to_array(iv.hi));
        },
        py::arg("point"), py::arg("lower_offset"), py::arg("upper_offset"), py::arg("lam"),
        "Scale the offsets by lambda and return (lo, hi) arrays.");

    m.def(
        "interval_loss",
        [](const py::array_t<double>& lo, const py::array_t<double>& hi,
           const py::array_t<double>& dose, const py::array_t<bool>& mask) {
            IntervalField iv{volume_from_array(lo), volume_from_array(hi), 0.0};
            return empirical_interval_loss(iv, volume_from_array(dose),
                                           mask_from_array(mask, kCombined));
        },
        py::arg("lo"), py::arg("hi"), py::arg("dose"), py::arg("mask"),
        "Fraction of masked voxels whose dose falls outside [lo, hi].");

    m.def(
        "hoeffding_ucb",
        [](const std::vector<double>& losses, double delta) {
            return hoeffding_ucb(losses, delta);
        },
        py::arg("losses"), py::arg("delta"),
        "Sample mean plus the Hoeffding penalty sqrt(log(1/delta)/(2n)).");

    m.def(
        "rcps_calibrate",
        [](const py::list& entries, double alpha, double delta, double lambda_max,
           double d_lambda, const std::string& granularity) {
            return result_to_dict(
                rcps_calibrate(set_from_python(entries, kCombined),
                               make_options(alpha, delta, lambda_max, d_lambda, granularity)));
        },
        py::arg("entries"), py::arg("alpha") = 0.1, py::arg("delta") = 0.1,
        py::arg("lambda_max") = 10.0, py::arg("d_lambda") = 0.01,
        py::arg("granularity") = "sample",
        "Pooled calibration over (point, lower, upper, dose, mask) entries.");

    m.def(
        "sg_rcps_calibrate",
        [](const py::list& groups, double alpha, double delta, double lambda_max, double d_lambda,
           const std::string& granularity) {
            std::vector<CalibrationSet> sets;
            int sg = 0;
            for (const auto& g : groups)
                sets.push_back(set_from_python(g.cast<py::list>(), ++sg));
            return result_to_dict(sg_rcps_calibrate(
                sets, make_options(alpha, delta, lambda_max, d_lambda, granularity)));
        },
        py::arg("groups"), py::arg("alpha") = 0.1, py::arg("delta") = 0.1,
        py::arg("lambda_max") = 10.0, py::arg("d_lambda") = 0.01,
        py::arg("granularity") = "sample",
        "Subgroup-aware calibration; `groups` is a list of entry lists.");

    m.def(
        "train_model",
        [](const py::list& samples, double alpha, double learning_rate, int epochs,
           int batch_size, std::uint64_t seed) {
            // samples: list of (channels_list, dose) tuples
            std::vector<Sample> ds;
            for (const auto& item : samples) {
                const auto t = item.cast<py::tuple>();
                Sample s;
                for (const auto& ch : t[0].cast<py::list>())
                    s.features.push_back(volume_from_array(ch.cast<py::array_t<double>>()));
                s.dose = volume_from_array(t[1].cast<py::array_t<double>>());
                s.masks = subgroup_masks_from_dose(s.dose);
                ds.push_back(std::move(s));
            }
            TrainConfig cfg;
            cfg.alpha = alpha;
            cfg.learning_rate = learning_rate;
            cfg.epochs = epochs;
            cfg.batch_size = batch_size;
            cfg.seed = seed;
            const auto res = train(ds, cfg);
            py::dict out;
            out["loss_trace"] = res.loss_trace;
            out["input_width"] = res.params.input_width;
            out["hidden"] = res.params.hidden;
            out["params"] = res.params.params;
            out["seed"] = res.params.seed;
            return out;
        },
        py::arg("samples"), py::arg("alpha") = 0.1, py::arg("learning_rate") = 0.05,
        py::arg("epochs") = 100, py::arg("batch_size") = 8, py::arg("seed") = 0,
        "Train the per-voxel interval regressor on (channels, dose) samples.");

    m.def(
        "predict",
        [](const py::dict& model, const py::list& channels) {
            ModelParams params;
            params.input_width = model["input_width"].cast<int>();
            params.hidden = model["hidden"].cast<std::vector<int>>();
            params.seed = model["seed"].cast<std::uint64_t>();
            params.params = model["params"].cast<std::vector<double>>();
            Sample s;
            for (const auto& ch : channels)
                s.features.push_back(volume_from_array(ch.cast<py::array_t<double>>()));
            s.dose = VoxelVolume::filled(s.features.front().dims(), 0.0);
            const auto pred = predict(params, s);
            return py::make_tuple(volume_to_array(pred.point), volume_to_array(pred.lower_offset),
                                  volume_to_array(pred.upper_offset));
        },
        py::arg("model"), py::arg("channels"),
        "Per-voxel (point, lower_offset, upper_offset) prediction.");

    m.def(
        "run_trial",
        [](std::uint64_t trial_seed, const py::dict& model, double alpha, double delta, int n_cal,
           int n_test) {
            ModelParams params;
            params.input_width = model["input_width"].cast<int>();
            params.hidden = model["hidden"].cast<std::vector<int>>();
            params.seed = model["seed"].cast<std::uint64_t>();
            params.params = model["params"].cast<std::vector<double>>();
            const auto rec = run_trial(standard_phantom(), params, alpha, delta, GridConfig{},
                                       n_cal, n_test, trial_seed);
            auto method = [](const MethodOutcome& o) {
                py::dict d;
                d["lambda_hat"] = o.lambda_hat;
                d["feasible"] = o.feasible;
                d["risk"] = o.risk;
                return d;
            };
            py::dict out;
            out["trial_seed"] = rec.trial_seed;
            out["rcps"] = method(rec.rcps);
            out["sg_rcps"] = method(rec.sg_rcps);
            return out;
        },
        py::arg("trial_seed"), py::arg("model"), py::arg("alpha") = 0.1, py::arg("delta") = 0.1,
        py::arg("n_cal") = 50, py::arg("n_test") = 50,
        "One Monte Carlo calibration trial on the standard phantom.");
}
