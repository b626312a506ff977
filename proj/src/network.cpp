#include "ppgstress/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>
#include <zlib.h>

#include "ppgstress/util.hpp"

namespace ppgstress {

using nlohmann::json;

ShapePlan plan_shapes(const NetworkConfig& c) {
    if (c.cnn_layers < 1) throw std::invalid_argument("need at least one CNN layer");
    if (c.mlp_layers < 1) throw std::invalid_argument("need at least one MLP layer");
    if (c.frame_len < 1 || c.kernel_len < 1 || c.subsample < 1 || c.stride < 1 ||
        c.cnn_maps < 1 || c.mlp_units < 1 || c.classes < 2) {
        throw std::invalid_argument("network structure parameters must be positive");
    }

    ShapePlan plan;
    int len = c.frame_len;
    for (int l = 1; l <= c.cnn_layers; ++l) {
        const bool final_layer = (l == c.cnn_layers);
        if (len < 1) {
            throw std::invalid_argument("CNN layer " + std::to_string(l) +
                                        ": no samples left after subsampling");
        }
        int k = c.kernel_len;
        if (k > len) {
            if (!final_layer) {
                throw std::invalid_argument("CNN layer " + std::to_string(l) +
                                            ": kernel length " + std::to_string(k) +
                                            " exceeds incoming signal length " +
                                            std::to_string(len));
            }
            k = len;  // adaptive clamp, final layer only
        }
        const int conv_out = len - k + 1;
        plan.in_len.push_back(len);
        plan.kernel_len.push_back(k);
        plan.conv_out_len.push_back(conv_out);
        if (final_layer) {
            plan.out_len.push_back(conv_out);  // collapsed to a scalar afterwards
        } else {
            len = conv_out / c.subsample;
            plan.out_len.push_back(len);
            if (len < 1) {
                throw std::invalid_argument("CNN layer " + std::to_string(l + 1) +
                                            ": no samples left after subsampling");
            }
        }
    }
    return plan;
}

namespace {

std::vector<int> dense_widths(const NetworkConfig& c) {
    // cnn_maps -> mlp_units -> ... -> classes, mlp_layers entries total.
    std::vector<int> widths;
    widths.push_back(c.cnn_maps);
    for (int l = 1; l < c.mlp_layers; ++l) widths.push_back(c.mlp_units);
    widths.push_back(c.classes);
    return widths;
}

}  // namespace

size_t param_count(const NetworkConfig& c) {
    const ShapePlan plan = plan_shapes(c);
    size_t count = 0;
    int in_maps = 1;
    for (int l = 0; l < c.cnn_layers; ++l) {
        count += static_cast<size_t>(c.cnn_maps) * in_maps * plan.kernel_len[l] + c.cnn_maps;
        in_maps = c.cnn_maps;
    }
    const auto widths = dense_widths(c);
    for (size_t l = 0; l + 1 < widths.size(); ++l) {
        count += static_cast<size_t>(widths[l + 1]) * widths[l] + widths[l + 1];
    }
    return count;
}

ModelState build_network(const NetworkConfig& config, uint64_t seed) {
    const ShapePlan plan = plan_shapes(config);
    ModelState model;
    model.config = config;
    model.init_seed = seed;

    Rng rng(seed);
    int in_maps = 1;
    for (int l = 0; l < config.cnn_layers; ++l) {
        auto layer = nn::ConvLayer::zeros(in_maps, config.cnn_maps, plan.kernel_len[l],
                                          config.subsample);
        const double fan_in = static_cast<double>(in_maps) * plan.kernel_len[l];
        const double fan_out = static_cast<double>(config.cnn_maps) * plan.kernel_len[l];
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        for (double& w : layer.kernels) w = rng.uniform(-limit, limit);
        model.conv_layers.push_back(std::move(layer));
        in_maps = config.cnn_maps;
    }

    const auto widths = dense_widths(config);
    for (size_t l = 0; l + 1 < widths.size(); ++l) {
        auto layer = nn::DenseLayer::zeros(widths[l], widths[l + 1]);
        const double limit = std::sqrt(6.0 / (widths[l] + widths[l + 1]));
        for (double& w : layer.weights) w = rng.uniform(-limit, limit);
        model.dense_layers.push_back(std::move(layer));
    }
    return model;
}

std::vector<double> forward(const ModelState& model, std::span<const double> frame,
                            ForwardTrace* trace) {
    const NetworkConfig& c = model.config;
    if (static_cast<int>(frame.size()) != c.frame_len) {
        throw std::invalid_argument("frame length " + std::to_string(frame.size()) +
                                    " does not match configured frame size " +
                                    std::to_string(c.frame_len));
    }
    if (trace) *trace = ForwardTrace{};

    std::vector<std::vector<double>> maps(1);
    maps[0].assign(frame.begin(), frame.end());

    std::vector<double> cnn_out;
    for (size_t l = 0; l < model.conv_layers.size(); ++l) {
        const bool final_layer = (l + 1 == model.conv_layers.size());
        nn::ConvTrace conv_trace;
        auto preacts = nn::conv_layer_forward(maps, model.conv_layers[l],
                                              trace ? &conv_trace : nullptr);
        std::vector<std::vector<double>> acts(preacts.size());
        for (size_t k = 0; k < preacts.size(); ++k) acts[k] = nn::activate_tanh(preacts[k]);

        if (final_layer) {
            cnn_out.resize(acts.size());
            for (size_t k = 0; k < acts.size(); ++k) cnn_out[k] = nn::global_collapse(acts[k]);
        } else {
            maps.resize(acts.size());
            for (size_t k = 0; k < acts.size(); ++k) {
                maps[k] = nn::subsample_avg(acts[k], model.conv_layers[l].subsample_rate);
            }
        }
        if (trace) {
            trace->conv.push_back(std::move(conv_trace));
            trace->conv_act.push_back(std::move(acts));
        }
    }

    std::vector<double> x = cnn_out;
    std::vector<double> logits;
    for (size_t l = 0; l < model.dense_layers.size(); ++l) {
        const bool output_layer = (l + 1 == model.dense_layers.size());
        if (trace) trace->dense_in.push_back(x);
        auto z = nn::dense_forward(x, model.dense_layers[l]);
        if (output_layer) {
            logits = std::move(z);
            if (trace) trace->dense_act.push_back(logits);
        } else {
            x = nn::activate_tanh(z);
            if (trace) trace->dense_act.push_back(x);
        }
    }

    auto probs = nn::softmax(logits);
    if (trace) {
        trace->cnn_out = std::move(cnn_out);
        trace->logits = std::move(logits);
        trace->probs = probs;
    }
    return probs;
}

int predict(const ModelState& model, std::span<const double> frame) {
    const auto probs = forward(model, frame);
    int best = 0;
    for (size_t i = 1; i < probs.size(); ++i) {
        if (probs[i] > probs[static_cast<size_t>(best)]) best = static_cast<int>(i);
    }
    return best;
}

size_t param_count(const ModelState& model) {
    size_t count = 0;
    for (const auto& l : model.conv_layers) count += l.param_count();
    for (const auto& l : model.dense_layers) count += l.param_count();
    return count;
}

std::vector<double> flatten_params(const ModelState& model) {
    std::vector<double> out;
    out.reserve(param_count(model));
    for (const auto& l : model.conv_layers) {
        out.insert(out.end(), l.kernels.begin(), l.kernels.end());
        out.insert(out.end(), l.biases.begin(), l.biases.end());
    }
    for (const auto& l : model.dense_layers) {
        out.insert(out.end(), l.weights.begin(), l.weights.end());
        out.insert(out.end(), l.biases.begin(), l.biases.end());
    }
    return out;
}

void unflatten_params(ModelState& model, std::span<const double> params) {
    if (params.size() != param_count(model)) {
        throw std::invalid_argument("parameter vector size mismatch");
    }
    size_t pos = 0;
    auto take = [&](std::vector<double>& dst) {
        std::copy(params.begin() + static_cast<long>(pos),
                  params.begin() + static_cast<long>(pos + dst.size()), dst.begin());
        pos += dst.size();
    };
    for (auto& l : model.conv_layers) {
        take(l.kernels);
        take(l.biases);
    }
    for (auto& l : model.dense_layers) {
        take(l.weights);
        take(l.biases);
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kModelMagic[9] = "PPGSCKP1";
constexpr int kModelVersion = 1;

uint32_t crc_of(const std::string& bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()),
                static_cast<uInt>(bytes.size()));
    return static_cast<uint32_t>(crc);
}

json config_to_json(const NetworkConfig& c) {
    return json{{"cnn_layers", c.cnn_layers},   {"mlp_layers", c.mlp_layers},
                {"frame_len", c.frame_len},     {"kernel_len", c.kernel_len},
                {"subsample", c.subsample},     {"stride", c.stride},
                {"cnn_maps", c.cnn_maps},       {"mlp_units", c.mlp_units},
                {"classes", c.classes}};
}

NetworkConfig config_from_json(const json& j) {
    NetworkConfig c;
    c.cnn_layers = j.at("cnn_layers").get<int>();
    c.mlp_layers = j.at("mlp_layers").get<int>();
    c.frame_len = j.at("frame_len").get<int>();
    c.kernel_len = j.at("kernel_len").get<int>();
    c.subsample = j.at("subsample").get<int>();
    c.stride = j.at("stride").get<int>();
    c.cnn_maps = j.at("cnn_maps").get<int>();
    c.mlp_units = j.at("mlp_units").get<int>();
    c.classes = j.at("classes").get<int>();
    return c;
}

}  // namespace

void save_model(const ModelState& model, const std::filesystem::path& path) {
    const auto params = flatten_params(model);
    json header = {
        {"version", kModelVersion},
        {"config", config_to_json(model.config)},
        {"init_seed", model.init_seed},
        {"param_count", params.size()},
    };
    const std::string header_str = header.dump();

    std::string bytes(kModelMagic, 8);
    append_u32_le(bytes, static_cast<uint32_t>(header_str.size()));
    bytes += header_str;
    for (double v : params) append_f64_le(bytes, v);
    append_u32_le(bytes, crc_of(bytes));

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError(path.string() + ": cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError(path.string() + ": write failed");
}

ModelState load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(path.string() + ": cannot open file");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (bytes.size() < 16) throw DataError(path.string() + ": truncated checkpoint");
    if (bytes.compare(0, 8, kModelMagic, 8) != 0) {
        throw DataError(path.string() + ": not a model checkpoint");
    }
    const std::string body = bytes.substr(0, bytes.size() - 4);
    const uint32_t stored_crc =
        read_u32_le(reinterpret_cast<const unsigned char*>(bytes.data()) + bytes.size() - 4);
    if (crc_of(body) != stored_crc) {
        throw DataError(path.string() + ": checksum mismatch (corrupted checkpoint)");
    }

    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    size_t pos = 8;
    const uint32_t header_len = read_u32_le(p + pos);
    pos += 4;
    if (pos + header_len > body.size()) throw DataError(path.string() + ": truncated checkpoint");
    json header = json::parse(bytes.substr(pos, header_len), nullptr, false);
    if (header.is_discarded()) throw DataError(path.string() + ": malformed checkpoint header");
    pos += header_len;

    const int version = header.value("version", -1);
    if (version != kModelVersion) {
        throw DataError(path.string() + ": unsupported checkpoint version " +
                        std::to_string(version));
    }

    ModelState model = build_network(config_from_json(header.at("config")),
                                     header.value("init_seed", uint64_t{0}));
    const auto n_params = header.at("param_count").get<size_t>();
    if (n_params != param_count(model)) {
        throw DataError(path.string() + ": parameter count does not match configuration");
    }
    if (pos + n_params * 8 > body.size()) {
        throw DataError(path.string() + ": truncated checkpoint");
    }
    std::vector<double> params(n_params);
    for (size_t i = 0; i < n_params; ++i) {
        params[i] = read_f64_le(p + pos);
        pos += 8;
    }
    unflatten_params(model, params);
    return model;
}

}  // namespace ppgstress
