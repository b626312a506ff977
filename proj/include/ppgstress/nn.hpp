#pragma once

#include <functional>
#include <span>
#include <vector>

namespace ppgstress::nn {

/// Valid-mode 1D cross-correlation (no kernel flip):
///   y[t] = sum_{j=0}^{K-1} w[j] * x[t+j],  t = 0..L-K.
/// Each output element is accumulated in ascending j order.
std::vector<double> conv1d_valid(std::span<const double> x, std::span<const double> w);

/// One convolutional layer: out_maps kernels per input map plus one bias per
/// output map, followed (outside this struct) by activation and subsampling.
struct ConvLayer {
    int in_maps = 1;
    int out_maps = 1;
    int kernel_len = 1;
    int subsample_rate = 1;
    std::vector<double> kernels;  // [out][in][kernel_len], row-major
    std::vector<double> biases;   // [out]

    static ConvLayer zeros(int in_maps, int out_maps, int kernel_len, int subsample_rate);

    double& kernel_at(int out, int in, int j) {
        return kernels[(static_cast<size_t>(out) * in_maps + in) * kernel_len + j];
    }
    double kernel_at(int out, int in, int j) const {
        return kernels[(static_cast<size_t>(out) * in_maps + in) * kernel_len + j];
    }
    size_t param_count() const { return kernels.size() + biases.size(); }
};

/// Inputs and pre-activations retained by conv_layer_forward for the
/// backward pass.
struct ConvTrace {
    std::vector<std::vector<double>> inputs;
    std::vector<std::vector<double>> preacts;
};

/// Pre-activation maps: x_k = b_k + sum_i corr(inputs[i], kernel[k][i]).
/// Output map k starts from its bias and accumulates the per-input-map
/// correlations in ascending i order.
std::vector<std::vector<double>> conv_layer_forward(
    const std::vector<std::vector<double>>& inputs, const ConvLayer& layer,
    ConvTrace* trace = nullptr);

struct ConvGrads {
    std::vector<double> kernels;
    std::vector<double> biases;
};

/// Exact gradients of (conv + bias) with respect to kernels, biases and
/// inputs. `trace` must come from the matching forward call.
ConvGrads conv_layer_backward(const ConvLayer& layer, const ConvTrace& trace,
                              const std::vector<std::vector<double>>& upstream,
                              std::vector<std::vector<double>>* input_grads = nullptr);

std::vector<double> activate_tanh(std::span<const double> x);

/// Backward through tanh given the forward outputs: g * (1 - y^2).
std::vector<double> tanh_backward(std::span<const double> activated,
                                  std::span<const double> upstream);

/// Average pooling: y[t] = mean(x[t*rate .. t*rate+rate-1]); the trailing
/// remainder (len mod rate) is dropped. Each mean is a plain ascending sum
/// divided by rate.
std::vector<double> subsample_avg(std::span<const double> x, int rate);

/// Distributes each pooled gradient uniformly over its bin; dropped trailing
/// samples receive zero.
std::vector<double> subsample_backward(size_t input_len, int rate,
                                       std::span<const double> upstream);

/// Mean of the sequence (the adaptive scalar reduction of a feature map).
double global_collapse(std::span<const double> x);

std::vector<double> collapse_backward(size_t input_len, double upstream);

struct DenseLayer {
    int in_dim = 1;
    int out_dim = 1;
    std::vector<double> weights;  // [out][in], row-major
    std::vector<double> biases;   // [out]

    static DenseLayer zeros(int in_dim, int out_dim);
    size_t param_count() const { return weights.size() + biases.size(); }
};

/// y = Wx + b; each output starts from its bias and accumulates products in
/// ascending input order.
std::vector<double> dense_forward(std::span<const double> x, const DenseLayer& layer);

struct DenseGrads {
    std::vector<double> weights;
    std::vector<double> biases;
};

DenseGrads dense_backward(std::span<const double> x, const DenseLayer& layer,
                          std::span<const double> upstream,
                          std::vector<double>* input_grad = nullptr);

struct SoftmaxXent {
    double loss = 0.0;
    std::vector<double> grad;   // d loss / d logits = p - onehot(label)
    std::vector<double> probs;
};

std::vector<double> softmax(std::span<const double> logits);

/// Numerically stable softmax cross-entropy against an integer label.
SoftmaxXent softmax_xent(std::span<const double> logits, int label);

/// Central-difference gradient estimate, (f(p+eps) - f(p-eps)) / (2 eps) per
/// coordinate. Test oracle for every hand-derived backward pass.
std::vector<double> finite_diff_gradient(
    const std::function<double(std::span<const double>)>& f, std::span<const double> params,
    double eps);

}  // namespace ppgstress::nn
