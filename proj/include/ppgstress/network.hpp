#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ppgstress/nn.hpp"

namespace ppgstress {

/// Structure parameters of one CNN-MLP model. `mlp_layers` counts the output
/// layer, so mlp_layers = 2 means one hidden layer of `mlp_units` plus the
/// `classes`-wide output. `stride` is the framing-time stride, carried for
/// provenance and used when the model's owner cuts frames.
struct NetworkConfig {
    int cnn_layers = 2;   // n
    int mlp_layers = 2;   // m (includes the output layer)
    int frame_len = 1024; // Fsize
    int kernel_len = 512; // fsize
    int subsample = 8;    // SS
    int stride = 2;       // st
    int cnn_maps = 8;
    int mlp_units = 5;
    int classes = 2;

    bool operator==(const NetworkConfig&) const = default;
};

/// Per-layer signal geometry. Layers 1..n-1 apply conv -> tanh ->
/// subsample; the final layer applies conv -> tanh -> mean collapse to one
/// scalar per map. Only the final layer may clamp its kernel to the incoming
/// signal length (the adaptive rule that keeps large-kernel configurations
/// runnable); any earlier layer too short for the kernel is a hard error.
struct ShapePlan {
    std::vector<int> in_len;
    std::vector<int> kernel_len;
    std::vector<int> conv_out_len;
    std::vector<int> out_len;  // after subsampling (non-final layers), else conv_out_len
};

/// Throws std::invalid_argument naming the failing layer when the geometry
/// is infeasible.
ShapePlan plan_shapes(const NetworkConfig& config);

/// Closed-form parameter census (kernels + biases + dense weights).
size_t param_count(const NetworkConfig& config);

struct ModelState {
    NetworkConfig config;
    std::vector<nn::ConvLayer> conv_layers;
    std::vector<nn::DenseLayer> dense_layers;
    uint64_t init_seed = 0;
};

/// Builds the model with kernels and weights drawn uniformly from
/// +-sqrt(6/(fan_in+fan_out)) and zero biases; bit-identical for a fixed
/// seed.
ModelState build_network(const NetworkConfig& config, uint64_t seed);

/// Everything the backward pass needs from one forward evaluation.
struct ForwardTrace {
    std::vector<nn::ConvTrace> conv;                        // per conv layer
    std::vector<std::vector<std::vector<double>>> conv_act; // tanh outputs per layer/map
    std::vector<double> cnn_out;                            // collapsed scalars, one per map
    std::vector<std::vector<double>> dense_in;              // input vector of each dense layer
    std::vector<std::vector<double>> dense_act;             // tanh output (hidden) per dense layer
    std::vector<double> logits;
    std::vector<double> probs;
};

/// Runs the frame through the network and returns class probabilities
/// (softmax over the final logits). The frame length must equal
/// config.frame_len.
std::vector<double> forward(const ModelState& model, std::span<const double> frame,
                            ForwardTrace* trace = nullptr);

/// Argmax of forward probabilities; ties break toward the lower class index.
int predict(const ModelState& model, std::span<const double> frame);

size_t param_count(const ModelState& model);

/// Copies all parameters (conv kernels, conv biases, dense weights, dense
/// biases, in layer order) into one flat vector.
std::vector<double> flatten_params(const ModelState& model);

void unflatten_params(ModelState& model, std::span<const double> params);

/// Checkpoint: magic, JSON header (version, config, seed), little-endian
/// float64 parameter blob, CRC32. Round-trips bit-exactly.
void save_model(const ModelState& model, const std::filesystem::path& path);

ModelState load_model(const std::filesystem::path& path);

}  // namespace ppgstress
