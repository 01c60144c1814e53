#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "riskcal/volume.hpp"

namespace riskcal {

// Fully connected per-voxel regressor with three outputs: point prediction,
// raw lower offset, raw upper offset. The offset outputs pass through a
// strictly positive softplus transform. Input is the feature channels plus
// three normalized spatial coordinates.
struct ModelParams {
    int input_width = 0;
    std::vector<int> hidden = {32, 32};
    std::string output_transform = "softplus";
    std::uint64_t seed = 0;
    std::vector<double> params;  // per layer: weights (out x in, row-major), then biases

    std::size_t param_count() const;
    std::vector<int> layer_sizes() const;  // input_width, hidden..., 3
    void validate() const;
};

struct TrainConfig {
    double alpha = 0.1;  // quantile levels alpha/2 and 1 - alpha/2
    double learning_rate = 0.05;
    int epochs = 100;
    int batch_size = 8;  // samples per mini-batch
    std::uint64_t seed = 0;
    std::array<double, 3> loss_weights = {1.0, 1.0, 1.0};  // lower pinball, upper pinball, MSE

    void validate() const;
};

struct TrainResult {
    ModelParams params;
    std::vector<double> loss_trace;  // full-dataset objective, index 0 = at initialization
};

inline constexpr int kSpatialEncodings = 3;

double softplus(double x);
double sigmoid(double x);

double pinball_loss(double q_hat, double y, double beta);

// Mean over voxels of the weighted three-term objective. Value only; the
// gradient routing (each term to its own head) lives in the training path.
double combined_objective(const HeuristicPrediction& pred, const VoxelVolume& dose, double alpha,
                          std::array<double, 3> loss_weights = {1.0, 1.0, 1.0});

ModelParams init_model(int input_width, const std::vector<int>& hidden, std::uint64_t seed);

TrainResult train(const std::vector<Sample>& dataset, const TrainConfig& cfg);

HeuristicPrediction predict(const ModelParams& params, const Sample& sample);

// Feature vector for one voxel: channels then x/(W-1), y/(H-1), z/(D-1).
std::vector<double> voxel_features(const Sample& sample, int x, int y, int z);

// Per-voxel objective with analytic gradient accumulation. The pinball terms
// treat the point output as a constant, so their gradients reach only the
// offset heads; the MSE term reaches only the point head. Returns the
// objective value.
double objective_and_gradient(const ModelParams& params, std::span<const double> features,
                              double y, double alpha, std::array<double, 3> loss_weights,
                              std::span<double> grad_accum);

// Same objective but with the point value entering the pinball terms pinned
// to `frozen_point`. Finite-differencing this function reproduces the routed
// gradient above.
double objective_frozen_point(const ModelParams& params, std::span<const double> features,
                              double y, double alpha, std::array<double, 3> loss_weights,
                              double frozen_point);

// Single-voxel forward pass: (point, lower_offset, upper_offset).
std::array<double, 3> forward_voxel(const ModelParams& params, std::span<const double> features);

struct Checkpoint {
    ModelParams params;
    TrainConfig config;
    std::vector<double> loss_trace;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace riskcal
