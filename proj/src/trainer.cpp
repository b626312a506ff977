#include "ppgstress/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "ppgstress/util.hpp"

namespace ppgstress {

using nlohmann::json;

const char* to_string(StopReason r) {
    switch (r) {
        case StopReason::max_epochs: return "max_epochs";
        case StopReason::delta_lms: return "delta_lms";
        case StopReason::best_fit: return "best_fit";
    }
    return "unknown";
}

StopReason stop_reason_from_string(const std::string& s) {
    if (s == "max_epochs") return StopReason::max_epochs;
    if (s == "delta_lms") return StopReason::delta_lms;
    if (s == "best_fit") return StopReason::best_fit;
    throw std::invalid_argument("unknown stop reason '" + s + "'");
}

EvalResult evaluate(const ModelState& model, const FrameSet& frames) {
    if (frames.empty()) throw std::invalid_argument("cannot evaluate an empty frame set");
    EvalResult res;
    long correct = 0;
    for (size_t i = 0; i < frames.size(); ++i) {
        const int truth = frames.label(i);
        const int pred = predict(model, frames.values(i));
        if (truth < 0 || truth > 1) throw std::invalid_argument("evaluate: frame without a label");
        res.confusion[static_cast<size_t>(truth)][static_cast<size_t>(std::min(pred, 1))]++;
        if (pred == truth) ++correct;
    }
    res.accuracy = static_cast<double>(correct) / static_cast<double>(frames.size());
    return res;
}

double compute_gradients(const ModelState& model, std::span<const double> frame, int label,
                         NetworkGrads& grads) {
    ForwardTrace trace;
    forward(model, frame, &trace);
    const auto xent = nn::softmax_xent(trace.logits, label);

    grads.conv.assign(model.conv_layers.size(), nn::ConvGrads{});
    grads.dense.assign(model.dense_layers.size(), nn::DenseGrads{});

    // Dense stack, output layer first.
    std::vector<double> upstream = xent.grad;
    for (size_t l = model.dense_layers.size(); l-- > 0;) {
        const bool output_layer = (l + 1 == model.dense_layers.size());
        if (!output_layer) {
            upstream = nn::tanh_backward(trace.dense_act[l], upstream);
        }
        std::vector<double> input_grad;
        grads.dense[l] = nn::dense_backward(trace.dense_in[l], model.dense_layers[l], upstream,
                                            &input_grad);
        upstream = std::move(input_grad);
    }

    // `upstream` now holds d loss / d cnn_out (one scalar per map).
    const size_t last = model.conv_layers.size() - 1;
    std::vector<std::vector<double>> map_grads(model.config.cnn_maps);
    for (int k = 0; k < model.config.cnn_maps; ++k) {
        map_grads[static_cast<size_t>(k)] = nn::collapse_backward(
            trace.conv_act[last][static_cast<size_t>(k)].size(),
            upstream[static_cast<size_t>(k)]);
    }

    for (size_t l = model.conv_layers.size(); l-- > 0;) {
        for (size_t k = 0; k < map_grads.size(); ++k) {
            map_grads[k] = nn::tanh_backward(trace.conv_act[l][k], map_grads[k]);
        }
        std::vector<std::vector<double>> input_grads;
        grads.conv[l] = nn::conv_layer_backward(model.conv_layers[l], trace.conv[l], map_grads,
                                                l > 0 ? &input_grads : nullptr);
        if (l > 0) {
            // Undo the subsampling between layer l-1 and layer l.
            const int rate = model.conv_layers[l - 1].subsample_rate;
            map_grads.resize(input_grads.size());
            for (size_t k = 0; k < input_grads.size(); ++k) {
                map_grads[k] = nn::subsample_backward(trace.conv_act[l - 1][k].size(), rate,
                                                      input_grads[k]);
            }
        }
    }
    return xent.loss;
}

std::vector<double> flatten_grads(const ModelState& model, const NetworkGrads& grads) {
    std::vector<double> out;
    out.reserve(param_count(model));
    for (const auto& g : grads.conv) {
        out.insert(out.end(), g.kernels.begin(), g.kernels.end());
        out.insert(out.end(), g.biases.begin(), g.biases.end());
    }
    for (const auto& g : grads.dense) {
        out.insert(out.end(), g.weights.begin(), g.weights.end());
        out.insert(out.end(), g.biases.begin(), g.biases.end());
    }
    return out;
}

namespace {

constexpr uint64_t kValCarveSalt = 0x56414C0Full;
constexpr uint64_t kEpochSalt = 0x45504F43ull;

void sgd_step(ModelState& model, const NetworkGrads& grads, double lr) {
    for (size_t l = 0; l < model.conv_layers.size(); ++l) {
        auto& layer = model.conv_layers[l];
        const auto& g = grads.conv[l];
        for (size_t i = 0; i < layer.kernels.size(); ++i) layer.kernels[i] -= lr * g.kernels[i];
        for (size_t i = 0; i < layer.biases.size(); ++i) layer.biases[i] -= lr * g.biases[i];
    }
    for (size_t l = 0; l < model.dense_layers.size(); ++l) {
        auto& layer = model.dense_layers[l];
        const auto& g = grads.dense[l];
        for (size_t i = 0; i < layer.weights.size(); ++i) layer.weights[i] -= lr * g.weights[i];
        for (size_t i = 0; i < layer.biases.size(); ++i) layer.biases[i] -= lr * g.biases[i];
    }
}

}  // namespace

std::pair<FrameSet, FrameSet> carve_validation(const FrameSet& train, const TrainConfig& cfg) {
    const auto n_val = static_cast<size_t>(
        std::llround(cfg.val_fraction * static_cast<double>(train.size())));
    std::vector<size_t> perm(train.size());
    for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    Rng rng(mix_seed(cfg.seed, kValCarveSalt));
    shuffle_in_place(perm, rng);

    std::vector<size_t> val_idx(perm.begin(), perm.begin() + std::min(n_val, perm.size()));
    std::vector<size_t> sgd_idx(perm.begin() + std::min(n_val, perm.size()), perm.end());
    std::sort(val_idx.begin(), val_idx.end());
    std::sort(sgd_idx.begin(), sgd_idx.end());
    return {train.select(sgd_idx), train.select(val_idx)};
}

std::pair<ModelState, TrainReport> train(ModelState model, const DatasetSplit& split,
                                         const TrainConfig& cfg) {
    if (split.train.empty()) throw std::invalid_argument("empty train set");
    if (cfg.max_epochs < 1) throw std::invalid_argument("max_epochs must be at least 1");
    if (cfg.delta_lms_threshold <= 0.0) {
        throw std::invalid_argument("delta-LMS threshold must be positive");
    }
    if (cfg.learning_rate < 0.0) throw std::invalid_argument("learning rate must be non-negative");
    if (cfg.val_fraction < 0.0 || cfg.val_fraction >= 1.0) {
        throw std::invalid_argument("validation fraction must lie in [0, 1)");
    }

    auto [sgd_frames, val_frames] = carve_validation(split.train, cfg);
    if (sgd_frames.empty()) {
        // Degenerate carve (tiny train set): train on everything, no best-fit.
        sgd_frames = split.train;
        val_frames = FrameSet(split.train.frame_len(), split.train.stride());
    }
    const bool best_fit_enabled = !val_frames.empty() && cfg.patience > 0;

    TrainReport report;
    const size_t n_params = param_count(model);

    double best_val = -1.0;
    std::vector<double> best_params;
    int stall = 0;

    NetworkGrads grads;
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto order =
            shuffle_epoch(sgd_frames, mix_seed(mix_seed(cfg.seed, kEpochSalt),
                                               static_cast<uint64_t>(epoch)));
        const std::vector<double> before = flatten_params(model);

        double loss_sum = 0.0;
        for (size_t i = 0; i < order.size(); ++i) {
            const double loss = compute_gradients(model, order.values(i), order.label(i), grads);
            if (!std::isfinite(loss)) {
                throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
            }
            sgd_step(model, grads, cfg.learning_rate);
            loss_sum += loss;
        }
        report.loss_curve.push_back(loss_sum / static_cast<double>(order.size()));

        const std::vector<double> after = flatten_params(model);
        double delta_sq = 0.0;
        for (size_t i = 0; i < n_params; ++i) {
            const double d = after[i] - before[i];
            delta_sq += d * d;
        }
        const double delta_lms = delta_sq / static_cast<double>(n_params);
        report.delta_lms_curve.push_back(delta_lms);

        if (best_fit_enabled) {
            const double val_acc = evaluate(model, val_frames).accuracy;
            report.val_accuracy_curve.push_back(val_acc);
            if (val_acc > best_val) {
                best_val = val_acc;
                best_params = after;
                stall = 0;
            } else {
                ++stall;
            }
        }

        report.epochs_run = epoch;
        if (epoch == cfg.max_epochs) {
            report.stop_reason = StopReason::max_epochs;
            break;
        }
        if (delta_lms <= cfg.delta_lms_threshold) {
            report.stop_reason = StopReason::delta_lms;
            break;
        }
        if (best_fit_enabled && stall >= cfg.patience) {
            report.stop_reason = StopReason::best_fit;
            unflatten_params(model, best_params);
            break;
        }
    }

    report.train_accuracy = evaluate(model, split.train).accuracy;
    if (!split.test.empty()) {
        const EvalResult test = evaluate(model, split.test);
        report.test_accuracy = test.accuracy;
        report.confusion = test.confusion;
    } else {
        report.test_accuracy = std::numeric_limits<double>::quiet_NaN();
    }
    return {std::move(model), std::move(report)};
}

GradCheckReport gradient_check(const NetworkConfig& config, uint64_t seed, double tolerance) {
    ModelState model = build_network(config, mix_seed(seed, 0x494E4954ull));

    Rng rng(mix_seed(seed, 0x4652414Dull));
    std::vector<double> frame(static_cast<size_t>(config.frame_len));
    for (double& v : frame) v = rng.uniform(-1.0, 1.0);
    const int label = static_cast<int>(rng.below(static_cast<uint64_t>(config.classes)));

    NetworkGrads grads;
    compute_gradients(model, frame, label, grads);
    const std::vector<double> analytic = flatten_grads(model, grads);

    const std::vector<double> params = flatten_params(model);
    ModelState probe = model;
    const auto loss_at = [&](std::span<const double> p) {
        unflatten_params(probe, p);
        ForwardTrace trace;
        forward(probe, frame, &trace);
        return nn::softmax_xent(trace.logits, label).loss;
    };
    const std::vector<double> numeric = nn::finite_diff_gradient(loss_at, params, 1e-5);

    // Relative error with an absolute floor: gradients this far below the
    // finite-difference noise floor are treated as matching.
    const auto rel_error = [](double a, double n) {
        const double denom = std::max(std::abs(a), std::abs(n));
        if (denom < 1e-6) return 0.0;
        return std::abs(a - n) / denom;
    };

    GradCheckReport report;
    report.tolerance = tolerance;
    size_t pos = 0;
    auto check_block = [&](const std::string& name, size_t count) {
        double worst = 0.0;
        for (size_t i = 0; i < count; ++i, ++pos) {
            worst = std::max(worst, rel_error(analytic[pos], numeric[pos]));
        }
        report.layers.push_back({name, worst});
        report.max_rel_error = std::max(report.max_rel_error, worst);
    };
    for (size_t l = 0; l < model.conv_layers.size(); ++l) {
        check_block("conv" + std::to_string(l + 1), model.conv_layers[l].param_count());
    }
    for (size_t l = 0; l < model.dense_layers.size(); ++l) {
        check_block("dense" + std::to_string(l + 1), model.dense_layers[l].param_count());
    }
    report.passed = report.max_rel_error < tolerance;
    return report;
}

std::string report_to_json(const TrainReport& report, const NetworkConfig& config) {
    json j = {
        {"version", 1},
        {"config",
         {{"cnn_layers", config.cnn_layers},
          {"mlp_layers", config.mlp_layers},
          {"frame_len", config.frame_len},
          {"kernel_len", config.kernel_len},
          {"subsample", config.subsample},
          {"stride", config.stride},
          {"cnn_maps", config.cnn_maps},
          {"mlp_units", config.mlp_units},
          {"classes", config.classes}}},
        {"train_accuracy", report.train_accuracy},
        {"test_accuracy", report.test_accuracy},
        {"epochs_run", report.epochs_run},
        {"stop_reason", to_string(report.stop_reason)},
        {"loss_curve", report.loss_curve},
        {"delta_lms_curve", report.delta_lms_curve},
        {"val_accuracy_curve", report.val_accuracy_curve},
        {"confusion",
         {{report.confusion[0][0], report.confusion[0][1]},
          {report.confusion[1][0], report.confusion[1][1]}}},
    };
    return j.dump(2) + "\n";
}

}  // namespace ppgstress
