#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ppgstress/dataset.hpp"
#include "ppgstress/network.hpp"

namespace ppgstress {

enum class StopReason { max_epochs, delta_lms, best_fit };

const char* to_string(StopReason r);
StopReason stop_reason_from_string(const std::string& s);

struct TrainConfig {
    int max_epochs = 200;
    double delta_lms_threshold = 0.001;  // mean squared per-parameter weight change per epoch
    double learning_rate = 0.01;
    int patience = 20;          // epochs without validation improvement before best-fit stop
    double val_fraction = 0.15; // carved from the train partition; 0 disables best-fit
    uint64_t seed = 0;
};

using Confusion = std::array<std::array<long, 2>, 2>;  // [true class][predicted class]

struct TrainReport {
    double train_accuracy = 0.0;
    double test_accuracy = 0.0;  // NaN when the split has no test frames
    int epochs_run = 0;
    StopReason stop_reason = StopReason::max_epochs;
    std::vector<double> loss_curve;          // mean per-frame loss per epoch
    std::vector<double> delta_lms_curve;     // mean squared weight change per epoch
    std::vector<double> val_accuracy_curve;  // empty when validation is disabled
    Confusion confusion{};                   // test-set confusion
};

struct EvalResult {
    double accuracy = 0.0;
    Confusion confusion{};
};

/// Accuracy and confusion counts of the model over the frames.
EvalResult evaluate(const ModelState& model, const FrameSet& frames);

/// Deterministic carve of the early-stop monitoring slice out of the train
/// partition: (sgd frames, validation frames).
std::pair<FrameSet, FrameSet> carve_validation(const FrameSet& train, const TrainConfig& cfg);

/// Online SGD over shuffled train frames, one update per frame, with the
/// three stopping rules checked after each epoch in order: epoch cap,
/// delta-LMS at or below threshold, validation stalled for `patience`
/// epochs (best-fit; restores the best-validation weights). Deterministic
/// for fixed seeds. Throws NumericError naming the epoch if the loss stops
/// being finite.
std::pair<ModelState, TrainReport> train(ModelState model, const DatasetSplit& split,
                                         const TrainConfig& cfg);

struct NetworkGrads {
    std::vector<nn::ConvGrads> conv;
    std::vector<nn::DenseGrads> dense;
};

/// Full-network backward pass for one labeled frame; returns the loss.
double compute_gradients(const ModelState& model, std::span<const double> frame, int label,
                         NetworkGrads& grads);

/// Gradients in flatten_params order.
std::vector<double> flatten_grads(const ModelState& model, const NetworkGrads& grads);

struct GradCheckLayer {
    std::string name;
    double max_rel_error = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckLayer> layers;
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

/// Compares the analytic full-network gradient on one random frame against
/// central finite differences (eps 1e-5) and reports the max relative error
/// per layer. Deterministic per seed.
GradCheckReport gradient_check(const NetworkConfig& config, uint64_t seed,
                               double tolerance = 1e-4);

/// Versioned JSON document for one training run.
std::string report_to_json(const TrainReport& report, const NetworkConfig& config);

}  // namespace ppgstress
