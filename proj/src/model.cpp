#include "riskcal/model.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "riskcal/rng.hpp"

namespace riskcal {

std::vector<int> ModelParams::layer_sizes() const {
    std::vector<int> sizes;
    sizes.push_back(input_width);
    for (int h : hidden) sizes.push_back(h);
    sizes.push_back(3);
    return sizes;
}

std::size_t ModelParams::param_count() const {
    const auto sizes = layer_sizes();
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l)
        n += static_cast<std::size_t>(sizes[l + 1]) * sizes[l] + sizes[l + 1];
    return n;
}

void ModelParams::validate() const {
    if (input_width <= 0) throw contract_error("ModelParams: input_width must be positive");
    for (int h : hidden)
        if (h <= 0) throw contract_error("ModelParams: hidden widths must be positive");
    if (params.size() != param_count()) throw contract_error("ModelParams: bad parameter count");
    for (double p : params)
        if (!std::isfinite(p)) throw contract_error("ModelParams: non-finite parameter");
    if (output_transform != "softplus")
        throw contract_error("ModelParams: unknown output transform " + output_transform);
}

void TrainConfig::validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw contract_error("TrainConfig: alpha must be in (0,1)");
    if (!(learning_rate > 0.0)) throw contract_error("TrainConfig: learning_rate must be positive");
    if (epochs < 0) throw contract_error("TrainConfig: epochs must be nonnegative");
    if (batch_size <= 0) throw contract_error("TrainConfig: batch_size must be positive");
    for (double w : loss_weights)
        if (w < 0.0) throw contract_error("TrainConfig: loss weights must be nonnegative");
}

double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -700.0) x = -700.0;
    return std::log1p(std::exp(x));
}

double sigmoid(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double pinball_loss(double q_hat, double y, double beta) {
    if (!(beta > 0.0 && beta < 1.0)) throw contract_error("pinball_loss: beta must be in (0,1)");
    return y > q_hat ? (y - q_hat) * beta : (q_hat - y) * (1.0 - beta);
}

double combined_objective(const HeuristicPrediction& pred, const VoxelVolume& dose, double alpha,
                          std::array<double, 3> loss_weights) {
    pred.validate();
    if (!(pred.point.dims() == dose.dims()))
        throw contract_error("combined_objective: dims disagree");
    if (!(alpha > 0.0 && alpha < 1.0)) throw contract_error("combined_objective: alpha in (0,1)");
    const double beta_lo = alpha / 2.0, beta_hi = 1.0 - alpha / 2.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < dose.size(); ++i) {
        const double f = pred.point[i], y = dose[i];
        sum += loss_weights[0] * pinball_loss(f - pred.lower_offset[i], y, beta_lo) +
               loss_weights[1] * pinball_loss(f + pred.upper_offset[i], y, beta_hi) +
               loss_weights[2] * (y - f) * (y - f);
    }
    return sum / static_cast<double>(dose.size());
}

namespace {

// d/dq of the pinball loss; the y == q tie takes the (1 - beta) branch,
// matching the indicator split of the loss itself.
double pinball_dq(double q_hat, double y, double beta) {
    return y > q_hat ? -beta : (1.0 - beta);
}

struct Scratch {
    std::vector<std::vector<double>> acts;   // acts[0] = input ... acts[L] = raw outputs
    std::vector<std::vector<double>> delta;  // per-layer backprop buffers

    void resize(const std::vector<int>& sizes) {
        acts.resize(sizes.size());
        delta.resize(sizes.size());
        for (std::size_t l = 0; l < sizes.size(); ++l) {
            acts[l].resize(sizes[l]);
            delta[l].resize(sizes[l]);
        }
    }
};

// Forward pass; tanh on hidden layers, linear raw outputs.
void forward(const ModelParams& p, std::span<const double> x, Scratch& ws) {
    const auto sizes = p.layer_sizes();
    std::copy(x.begin(), x.end(), ws.acts[0].begin());
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        const int in = sizes[l], out = sizes[l + 1];
        const double* w = p.params.data() + off;
        const double* b = w + static_cast<std::size_t>(out) * in;
        const double* a = ws.acts[l].data();
        double* next = ws.acts[l + 1].data();
        const bool last = (l + 2 == sizes.size());
        for (int j = 0; j < out; ++j) {
            double s = b[j];
            const double* row = w + static_cast<std::size_t>(j) * in;
            for (int i = 0; i < in; ++i) s += row[i] * a[i];
            next[j] = last ? s : std::tanh(s);
        }
        off += static_cast<std::size_t>(out) * in + out;
    }
}

void backward(const ModelParams& p, Scratch& ws, std::span<double> grad) {
    const auto sizes = p.layer_sizes();
    // Layer parameter offsets.
    std::vector<std::size_t> offs(sizes.size() - 1);
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        offs[l] = off;
        off += static_cast<std::size_t>(sizes[l + 1]) * sizes[l] + sizes[l + 1];
    }
    for (std::size_t l = sizes.size() - 2;; --l) {
        const int in = sizes[l], out = sizes[l + 1];
        const double* w = p.params.data() + offs[l];
        const double* a = ws.acts[l].data();
        const double* d = ws.delta[l + 1].data();
        double* gw = grad.data() + offs[l];
        double* gb = gw + static_cast<std::size_t>(out) * in;
        for (int j = 0; j < out; ++j) {
            gb[j] += d[j];
            double* grow = gw + static_cast<std::size_t>(j) * in;
            for (int i = 0; i < in; ++i) grow[i] += d[j] * a[i];
        }
        if (l == 0) break;
        double* dprev = ws.delta[l].data();
        for (int i = 0; i < in; ++i) {
            double s = 0.0;
            for (int j = 0; j < out; ++j) s += d[j] * w[static_cast<std::size_t>(j) * in + i];
            dprev[i] = s * (1.0 - a[i] * a[i]);  // tanh'
        }
    }
}

double voxel_terms(double point, double l_off, double u_off, double y, double alpha,
                   const std::array<double, 3>& w, double* d_point, double* d_l, double* d_u) {
    const double beta_lo = alpha / 2.0, beta_hi = 1.0 - alpha / 2.0;
    const double q_lo = point - l_off, q_hi = point + u_off;
    const double value = w[0] * pinball_loss(q_lo, y, beta_lo) +
                         w[1] * pinball_loss(q_hi, y, beta_hi) +
                         w[2] * (y - point) * (y - point);
    if (d_point) {
        *d_point = w[2] * 2.0 * (point - y);
        *d_l = w[0] * -pinball_dq(q_lo, y, beta_lo);
        *d_u = w[1] * pinball_dq(q_hi, y, beta_hi);
    }
    return value;
}

}  // namespace

double objective_and_gradient(const ModelParams& params, std::span<const double> features,
                              double y, double alpha, std::array<double, 3> loss_weights,
                              std::span<double> grad_accum) {
    thread_local Scratch ws;
    ws.resize(params.layer_sizes());
    forward(params, features, ws);
    auto& raw = ws.acts.back();
    const double point = raw[0];
    const double l_off = softplus(raw[1]), u_off = softplus(raw[2]);
    double dp, dl, du;
    const double value = voxel_terms(point, l_off, u_off, y, alpha, loss_weights, &dp, &dl, &du);
    if (!grad_accum.empty()) {
        ws.delta.back()[0] = dp;
        ws.delta.back()[1] = dl * sigmoid(raw[1]);
        ws.delta.back()[2] = du * sigmoid(raw[2]);
        backward(params, ws, grad_accum);
    }
    return value;
}

double objective_frozen_point(const ModelParams& params, std::span<const double> features,
                              double y, double alpha, std::array<double, 3> loss_weights,
                              double frozen_point) {
    thread_local Scratch ws;
    ws.resize(params.layer_sizes());
    forward(params, features, ws);
    auto& raw = ws.acts.back();
    const double point = raw[0];
    const double l_off = softplus(raw[1]), u_off = softplus(raw[2]);
    const double beta_lo = alpha / 2.0, beta_hi = 1.0 - alpha / 2.0;
    return loss_weights[0] * pinball_loss(frozen_point - l_off, y, beta_lo) +
           loss_weights[1] * pinball_loss(frozen_point + u_off, y, beta_hi) +
           loss_weights[2] * (y - point) * (y - point);
}

std::array<double, 3> forward_voxel(const ModelParams& params, std::span<const double> features) {
    if (static_cast<int>(features.size()) != params.input_width)
        throw contract_error("forward_voxel: feature width mismatch");
    thread_local Scratch ws;
    ws.resize(params.layer_sizes());
    forward(params, features, ws);
    const auto& raw = ws.acts.back();
    return {raw[0], softplus(raw[1]), softplus(raw[2])};
}

ModelParams init_model(int input_width, const std::vector<int>& hidden, std::uint64_t seed) {
    ModelParams p;
    p.input_width = input_width;
    p.hidden = hidden;
    p.seed = seed;
    const auto sizes = p.layer_sizes();
    p.params.reserve(p.param_count());
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        CounterRng rng(seed, 0x4d4c5000ULL + l);
        const int in = sizes[l], out = sizes[l + 1];
        const double s = std::sqrt(6.0 / (in + out));
        for (int i = 0; i < out * in; ++i) p.params.push_back((rng.uniform() * 2.0 - 1.0) * s);
        for (int i = 0; i < out; ++i) p.params.push_back(0.0);
    }
    p.validate();
    return p;
}

std::vector<double> voxel_features(const Sample& sample, int x, int y, int z) {
    const Dims d = sample.dose.dims();
    std::vector<double> f;
    f.reserve(sample.features.size() + kSpatialEncodings);
    const std::size_t idx = sample.dose.index(x, y, z);
    for (const auto& ch : sample.features) f.push_back(ch[idx]);
    f.push_back(d.w > 1 ? static_cast<double>(x) / (d.w - 1) : 0.0);
    f.push_back(d.h > 1 ? static_cast<double>(y) / (d.h - 1) : 0.0);
    f.push_back(d.d > 1 ? static_cast<double>(z) / (d.d - 1) : 0.0);
    return f;
}

namespace {

// Flattened training data: per-voxel feature rows and targets.
struct Flattened {
    int width = 0;
    std::vector<std::size_t> sample_begin;  // voxel row range per sample
    std::vector<double> x;                  // row-major, width per row
    std::vector<double> y;
};

Flattened flatten(const std::vector<Sample>& dataset) {
    Flattened fl;
    fl.width = static_cast<int>(dataset.front().features.size()) + kSpatialEncodings;
    for (const auto& s : dataset) {
        s.validate();
        if (static_cast<int>(s.features.size()) + kSpatialEncodings != fl.width)
            throw contract_error("train: inconsistent channel counts across samples");
        fl.sample_begin.push_back(fl.y.size());
        const Dims d = s.dose.dims();
        for (int z = 0; z < d.d; ++z)
            for (int yy = 0; yy < d.h; ++yy)
                for (int xx = 0; xx < d.w; ++xx) {
                    const auto f = voxel_features(s, xx, yy, z);
                    fl.x.insert(fl.x.end(), f.begin(), f.end());
                    fl.y.push_back(s.dose.at(xx, yy, z));
                }
    }
    fl.sample_begin.push_back(fl.y.size());
    return fl;
}

double dataset_objective(const ModelParams& p, const Flattened& fl, double alpha,
                         const std::array<double, 3>& w) {
    double sum = 0.0;
    for (std::size_t r = 0; r < fl.y.size(); ++r) {
        sum += objective_and_gradient(
            p, std::span<const double>(fl.x.data() + r * fl.width, fl.width), fl.y[r], alpha, w,
            {});
    }
    return sum / static_cast<double>(fl.y.size());
}

}  // namespace

TrainResult train(const std::vector<Sample>& dataset, const TrainConfig& cfg) {
    cfg.validate();
    if (dataset.empty()) throw contract_error("train: empty dataset");
    const Flattened fl = flatten(dataset);

    TrainResult res;
    res.params = init_model(fl.width, {32, 32}, cfg.seed);
    res.loss_trace.push_back(dataset_objective(res.params, fl, cfg.alpha, cfg.loss_weights));

    const std::size_t n_samples = dataset.size();
    std::vector<std::size_t> order(n_samples);
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> grad(res.params.params.size());

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        CounterRng rng(cfg.seed, 0x45504f00ULL + epoch);
        for (std::size_t i = n_samples; i > 1; --i)
            std::swap(order[i - 1], order[rng.below(i)]);

        for (std::size_t start = 0; start < n_samples;
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(start + static_cast<std::size_t>(cfg.batch_size), n_samples);
            std::fill(grad.begin(), grad.end(), 0.0);
            std::size_t n_vox = 0;
            for (std::size_t b = start; b < end; ++b) {
                const std::size_t s = order[b];
                for (std::size_t r = fl.sample_begin[s]; r < fl.sample_begin[s + 1]; ++r) {
                    objective_and_gradient(
                        res.params,
                        std::span<const double>(fl.x.data() + r * fl.width, fl.width), fl.y[r],
                        cfg.alpha, cfg.loss_weights, grad);
                    ++n_vox;
                }
            }
            const double scale = cfg.learning_rate / static_cast<double>(n_vox);
            for (std::size_t i = 0; i < grad.size(); ++i) res.params.params[i] -= scale * grad[i];
        }

        const double loss = dataset_objective(res.params, fl, cfg.alpha, cfg.loss_weights);
        if (!std::isfinite(loss))
            throw training_error("train: NaN in loss at epoch " + std::to_string(epoch) +
                                 " (learning rate too high?)");
        res.loss_trace.push_back(loss);
    }
    return res;
}

HeuristicPrediction predict(const ModelParams& params, const Sample& sample) {
    params.validate();
    const int width = static_cast<int>(sample.features.size()) + kSpatialEncodings;
    if (width != params.input_width)
        throw contract_error("predict: sample has " + std::to_string(width) +
                             " input features, model expects " +
                             std::to_string(params.input_width));
    const Dims d = sample.dose.dims();
    std::vector<double> point(d.size()), lower(d.size()), upper(d.size());
    thread_local Scratch ws;
    ws.resize(params.layer_sizes());
    std::vector<double> f(width);
    for (int z = 0; z < d.d; ++z)
        for (int y = 0; y < d.h; ++y)
            for (int x = 0; x < d.w; ++x) {
                const std::size_t idx = sample.dose.index(x, y, z);
                for (std::size_t c = 0; c < sample.features.size(); ++c)
                    f[c] = sample.features[c][idx];
                f[sample.features.size()] = d.w > 1 ? static_cast<double>(x) / (d.w - 1) : 0.0;
                f[sample.features.size() + 1] = d.h > 1 ? static_cast<double>(y) / (d.h - 1) : 0.0;
                f[sample.features.size() + 2] = d.d > 1 ? static_cast<double>(z) / (d.d - 1) : 0.0;
                forward(params, f, ws);
                const auto& raw = ws.acts.back();
                point[idx] = raw[0];
                lower[idx] = softplus(raw[1]);
                upper[idx] = softplus(raw[2]);
            }
    return HeuristicPrediction{VoxelVolume(d, std::move(point)), VoxelVolume(d, std::move(lower)),
                               VoxelVolume(d, std::move(upper))};
}

namespace {

nlohmann::json config_to_json(const TrainConfig& c) {
    return {{"alpha", c.alpha},           {"learning_rate", c.learning_rate},
            {"epochs", c.epochs},         {"batch_size", c.batch_size},
            {"seed", c.seed},             {"loss_weights", c.loss_weights}};
}

TrainConfig config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.alpha = j.at("alpha");
    c.learning_rate = j.at("learning_rate");
    c.epochs = j.at("epochs");
    c.batch_size = j.at("batch_size");
    c.seed = j.at("seed");
    c.loss_weights = j.at("loss_weights");
    return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    ckpt.params.validate();
    nlohmann::json j;
    j["format_version"] = 1;
    j["input_width"] = ckpt.params.input_width;
    j["hidden"] = ckpt.params.hidden;
    j["output_transform"] = ckpt.params.output_transform;
    j["seed"] = ckpt.params.seed;
    j["train_config"] = config_to_json(ckpt.config);
    j["params"] = ckpt.params.params;
    j["loss_trace"] = ckpt.loss_trace;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("save_checkpoint: cannot open " + path);
    out << j.dump(2) << "\n";
    if (!out) throw io_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("load_checkpoint: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw io_error("load_checkpoint: bad JSON in " + path + ": " + e.what());
    }
    if (j.at("format_version").get<int>() != 1)
        throw io_error("load_checkpoint: unsupported format version");
    Checkpoint c;
    c.params.input_width = j.at("input_width");
    c.params.hidden = j.at("hidden").get<std::vector<int>>();
    c.params.output_transform = j.at("output_transform");
    c.params.seed = j.at("seed");
    c.params.params = j.at("params").get<std::vector<double>>();
    c.config = config_from_json(j.at("train_config"));
    c.loss_trace = j.at("loss_trace").get<std::vector<double>>();
    c.params.validate();
    return c;
}

}  // namespace riskcal
