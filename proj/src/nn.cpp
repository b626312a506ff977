#include "ppgstress/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ppgstress::nn {

namespace {

// Accumulates corr(x, w) into out (out must hold L-K+1 zeros or prior
// partial sums). Kernel-outer loop order: each out[t] still gathers its
// terms in ascending j order, so results match a naive j-inner loop
// bit-for-bit while the inner loop vectorizes.
void corr_accumulate(const double* x, size_t L, const double* w, size_t K, double* out) {
    const size_t out_len = L - K + 1;
    for (size_t j = 0; j < K; ++j) {
        const double wj = w[j];
        const double* xs = x + j;
        for (size_t t = 0; t < out_len; ++t) out[t] += wj * xs[t];
    }
}

}  // namespace

std::vector<double> conv1d_valid(std::span<const double> x, std::span<const double> w) {
    const size_t L = x.size(), K = w.size();
    if (K == 0) throw std::invalid_argument("empty kernel");
    if (K > L) throw std::invalid_argument("kernel longer than input");
    std::vector<double> y(L - K + 1, 0.0);
    corr_accumulate(x.data(), L, w.data(), K, y.data());
    return y;
}

ConvLayer ConvLayer::zeros(int in_maps, int out_maps, int kernel_len, int subsample_rate) {
    if (in_maps < 1 || out_maps < 1 || kernel_len < 1 || subsample_rate < 1) {
        throw std::invalid_argument("conv layer dimensions must be positive");
    }
    ConvLayer l;
    l.in_maps = in_maps;
    l.out_maps = out_maps;
    l.kernel_len = kernel_len;
    l.subsample_rate = subsample_rate;
    l.kernels.assign(static_cast<size_t>(out_maps) * in_maps * kernel_len, 0.0);
    l.biases.assign(static_cast<size_t>(out_maps), 0.0);
    return l;
}

std::vector<std::vector<double>> conv_layer_forward(const std::vector<std::vector<double>>& inputs,
                                                    const ConvLayer& layer, ConvTrace* trace) {
    if (static_cast<int>(inputs.size()) != layer.in_maps) {
        throw std::invalid_argument("conv layer: wrong number of input maps");
    }
    const size_t L = inputs.front().size();
    for (const auto& in : inputs) {
        if (in.size() != L) throw std::invalid_argument("conv layer: mismatched input lengths");
    }
    if (L < static_cast<size_t>(layer.kernel_len)) {
        throw std::invalid_argument("kernel longer than input");
    }
    const size_t out_len = L - static_cast<size_t>(layer.kernel_len) + 1;

    std::vector<std::vector<double>> out(static_cast<size_t>(layer.out_maps));
    std::vector<double> conv(out_len);
    for (int k = 0; k < layer.out_maps; ++k) {
        auto& map = out[static_cast<size_t>(k)];
        map.assign(out_len, layer.biases[static_cast<size_t>(k)]);
        for (int i = 0; i < layer.in_maps; ++i) {
            const double* w = &layer.kernels[(static_cast<size_t>(k) * layer.in_maps + i) *
                                             layer.kernel_len];
            const auto& x = inputs[static_cast<size_t>(i)];
            std::fill(conv.begin(), conv.end(), 0.0);
            corr_accumulate(x.data(), x.size(), w, static_cast<size_t>(layer.kernel_len),
                            conv.data());
            for (size_t t = 0; t < out_len; ++t) map[t] += conv[t];
        }
    }
    if (trace) {
        trace->inputs = inputs;
        trace->preacts = out;
    }
    return out;
}

ConvGrads conv_layer_backward(const ConvLayer& layer, const ConvTrace& trace,
                              const std::vector<std::vector<double>>& upstream,
                              std::vector<std::vector<double>>* input_grads) {
    if (static_cast<int>(trace.inputs.size()) != layer.in_maps ||
        static_cast<int>(trace.preacts.size()) != layer.out_maps) {
        throw std::invalid_argument("conv backward: trace does not match layer geometry");
    }
    const size_t L = trace.inputs.front().size();
    const size_t out_len = L - static_cast<size_t>(layer.kernel_len) + 1;
    if (trace.preacts.front().size() != out_len ||
        static_cast<int>(upstream.size()) != layer.out_maps ||
        upstream.front().size() != out_len) {
        throw std::invalid_argument("conv backward: trace does not match layer geometry");
    }

    ConvGrads grads;
    grads.kernels.assign(layer.kernels.size(), 0.0);
    grads.biases.assign(layer.biases.size(), 0.0);

    for (int k = 0; k < layer.out_maps; ++k) {
        const auto& g = upstream[static_cast<size_t>(k)];
        double bias_acc = 0.0;
        for (size_t t = 0; t < out_len; ++t) bias_acc += g[t];
        grads.biases[static_cast<size_t>(k)] = bias_acc;

        // Kernel gradients accumulate over t in ascending order with the
        // inner loop running across kernel positions (vectorizable).
        for (int i = 0; i < layer.in_maps; ++i) {
            const auto& x = trace.inputs[static_cast<size_t>(i)];
            double* gw =
                &grads.kernels[(static_cast<size_t>(k) * layer.in_maps + i) * layer.kernel_len];
            for (size_t t = 0; t < out_len; ++t) {
                const double gt = g[t];
                const double* xs = x.data() + t;
                for (int j = 0; j < layer.kernel_len; ++j) gw[j] += gt * xs[j];
            }
        }
    }

    if (input_grads) {
        input_grads->assign(static_cast<size_t>(layer.in_maps), std::vector<double>(L, 0.0));
        for (int i = 0; i < layer.in_maps; ++i) {
            auto& gx = (*input_grads)[static_cast<size_t>(i)];
            for (int k = 0; k < layer.out_maps; ++k) {
                const auto& g = upstream[static_cast<size_t>(k)];
                const double* w = &layer.kernels[(static_cast<size_t>(k) * layer.in_maps + i) *
                                                 layer.kernel_len];
                for (size_t t = 0; t < out_len; ++t) {
                    const double gt = g[t];
                    for (int j = 0; j < layer.kernel_len; ++j) {
                        gx[t + static_cast<size_t>(j)] += gt * w[j];
                    }
                }
            }
        }
    }
    return grads;
}

std::vector<double> activate_tanh(std::span<const double> x) {
    std::vector<double> y(x.size());
    for (size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
    return y;
}

std::vector<double> tanh_backward(std::span<const double> activated,
                                  std::span<const double> upstream) {
    if (activated.size() != upstream.size()) {
        throw std::invalid_argument("tanh backward: size mismatch");
    }
    std::vector<double> g(activated.size());
    for (size_t i = 0; i < g.size(); ++i) {
        g[i] = upstream[i] * (1.0 - activated[i] * activated[i]);
    }
    return g;
}

std::vector<double> subsample_avg(std::span<const double> x, int rate) {
    if (rate < 1) throw std::invalid_argument("subsample rate must be positive");
    const size_t out_len = x.size() / static_cast<size_t>(rate);
    std::vector<double> y(out_len);
    for (size_t t = 0; t < out_len; ++t) {
        double acc = 0.0;
        for (int j = 0; j < rate; ++j) acc += x[t * static_cast<size_t>(rate) + j];
        y[t] = acc / rate;
    }
    return y;
}

std::vector<double> subsample_backward(size_t input_len, int rate,
                                       std::span<const double> upstream) {
    if (rate < 1) throw std::invalid_argument("subsample rate must be positive");
    std::vector<double> g(input_len, 0.0);
    const double inv = 1.0 / rate;
    for (size_t t = 0; t < upstream.size(); ++t) {
        for (int j = 0; j < rate; ++j) {
            g[t * static_cast<size_t>(rate) + j] = upstream[t] * inv;
        }
    }
    return g;
}

double global_collapse(std::span<const double> x) {
    if (x.empty()) throw std::invalid_argument("global_collapse: empty input");
    double acc = 0.0;
    for (double v : x) acc += v;
    return acc / static_cast<double>(x.size());
}

std::vector<double> collapse_backward(size_t input_len, double upstream) {
    if (input_len == 0) throw std::invalid_argument("collapse_backward: empty input");
    return std::vector<double>(input_len, upstream / static_cast<double>(input_len));
}

DenseLayer DenseLayer::zeros(int in_dim, int out_dim) {
    if (in_dim < 1 || out_dim < 1) {
        throw std::invalid_argument("dense layer dimensions must be positive");
    }
    DenseLayer l;
    l.in_dim = in_dim;
    l.out_dim = out_dim;
    l.weights.assign(static_cast<size_t>(out_dim) * in_dim, 0.0);
    l.biases.assign(static_cast<size_t>(out_dim), 0.0);
    return l;
}

std::vector<double> dense_forward(std::span<const double> x, const DenseLayer& layer) {
    if (static_cast<int>(x.size()) != layer.in_dim) {
        throw std::invalid_argument("dense layer: input width mismatch");
    }
    std::vector<double> y(static_cast<size_t>(layer.out_dim));
    for (int o = 0; o < layer.out_dim; ++o) {
        double acc = layer.biases[static_cast<size_t>(o)];
        const double* w = &layer.weights[static_cast<size_t>(o) * layer.in_dim];
        for (int i = 0; i < layer.in_dim; ++i) acc += w[i] * x[static_cast<size_t>(i)];
        y[static_cast<size_t>(o)] = acc;
    }
    return y;
}

DenseGrads dense_backward(std::span<const double> x, const DenseLayer& layer,
                          std::span<const double> upstream, std::vector<double>* input_grad) {
    if (static_cast<int>(x.size()) != layer.in_dim ||
        static_cast<int>(upstream.size()) != layer.out_dim) {
        throw std::invalid_argument("dense backward: size mismatch");
    }
    DenseGrads grads;
    grads.weights.assign(layer.weights.size(), 0.0);
    grads.biases.assign(upstream.begin(), upstream.end());
    for (int o = 0; o < layer.out_dim; ++o) {
        const double g = upstream[static_cast<size_t>(o)];
        double* gw = &grads.weights[static_cast<size_t>(o) * layer.in_dim];
        for (int i = 0; i < layer.in_dim; ++i) gw[i] = g * x[static_cast<size_t>(i)];
    }
    if (input_grad) {
        input_grad->assign(static_cast<size_t>(layer.in_dim), 0.0);
        for (int o = 0; o < layer.out_dim; ++o) {
            const double g = upstream[static_cast<size_t>(o)];
            const double* w = &layer.weights[static_cast<size_t>(o) * layer.in_dim];
            for (int i = 0; i < layer.in_dim; ++i) (*input_grad)[static_cast<size_t>(i)] += g * w[i];
        }
    }
    return grads;
}

std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) throw std::invalid_argument("softmax: empty logits");
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

SoftmaxXent softmax_xent(std::span<const double> logits, int label) {
    if (label < 0 || static_cast<size_t>(label) >= logits.size()) {
        throw std::invalid_argument("softmax_xent: label out of range");
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double l : logits) sum += std::exp(l - mx);

    SoftmaxXent out;
    out.probs.resize(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) out.probs[i] = std::exp(logits[i] - mx) / sum;
    out.loss = std::log(sum) - (logits[static_cast<size_t>(label)] - mx);
    out.grad = out.probs;
    out.grad[static_cast<size_t>(label)] -= 1.0;
    return out;
}

std::vector<double> finite_diff_gradient(
    const std::function<double(std::span<const double>)>& f, std::span<const double> params,
    double eps) {
    if (eps <= 0.0) throw std::invalid_argument("finite differences need a positive step");
    std::vector<double> p(params.begin(), params.end());
    std::vector<double> grad(p.size());
    for (size_t i = 0; i < p.size(); ++i) {
        const double saved = p[i];
        p[i] = saved + eps;
        const double fp = f(p);
        p[i] = saved - eps;
        const double fm = f(p);
        p[i] = saved;
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    return grad;
}

}  // namespace ppgstress::nn
