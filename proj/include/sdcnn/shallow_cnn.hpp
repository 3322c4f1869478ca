#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdcnn/errors.hpp"
#include "sdcnn/image.hpp"
#include "sdcnn/image_io.hpp"
#include "sdcnn/rng.hpp"

namespace sdcnn {

// Fixed patch-to-patch architecture: a 15x15 input goes through two valid
// 7x7 convolutions with ReLU (10 channels each) down to 3x3, then a linear
// 1x1 convolution produces the 3x3 output patch.
inline constexpr int kCnnInputSize = 15;
inline constexpr int kCnnHidden1Size = 9;
inline constexpr int kCnnOutputSize = 3;
inline constexpr int kCnnKernelSize = 7;
inline constexpr int kCnnChannels = 10;

struct ConvLayerParams {
    int out_channels = 0;
    int in_channels = 0;
    int kh = 0;
    int kw = 0;
    std::vector<double> kernels; // [out][in][kh][kw]
    std::vector<double> biases;  // [out]

    ConvLayerParams() = default;
    ConvLayerParams(int oc, int ic, int kh_, int kw_)
        : out_channels(oc), in_channels(ic), kh(kh_), kw(kw_),
          kernels(static_cast<std::size_t>(oc) * ic * kh_ * kw_, 0.0), biases(oc, 0.0) {}

    double& k(int o, int i, int u, int v) {
        return kernels[((static_cast<std::size_t>(o) * in_channels + i) * kh + u) * kw + v];
    }
    double k(int o, int i, int u, int v) const {
        return kernels[((static_cast<std::size_t>(o) * in_channels + i) * kh + u) * kw + v];
    }
    std::size_t parameter_count() const { return kernels.size() + biases.size(); }
};

struct ShallowCnnModel {
    ConvLayerParams layer1;       // 1 -> 10, 7x7
    ConvLayerParams layer2;       // 10 -> 10, 7x7
    ConvLayerParams output_layer; // 10 -> 1, 1x1, linear

    static ShallowCnnModel zeros() {
        ShallowCnnModel m;
        m.layer1 = ConvLayerParams(kCnnChannels, 1, kCnnKernelSize, kCnnKernelSize);
        m.layer2 = ConvLayerParams(kCnnChannels, kCnnChannels, kCnnKernelSize, kCnnKernelSize);
        m.output_layer = ConvLayerParams(1, kCnnChannels, 1, 1);
        return m;
    }
};

inline std::size_t parameter_count(const ShallowCnnModel& m) {
    return m.layer1.parameter_count() + m.layer2.parameter_count() +
           m.output_layer.parameter_count();
}

struct TrainConfig {
    double learning_rate = 0.01;
    int batch_size = 128;
    int epochs = 50;
    int early_stop_patience = 10; // epochs without validation improvement; 0 disables
    std::uint64_t rng_seed = 0;
};

struct PatchPair {
    ImageGrid input;  // 15x15
    ImageGrid target; // 3x3
};

// Glorot-style uniform init: kernels ~ U(-a, a) with a = sqrt(6/(fan_in+fan_out)),
// biases zero.
inline ShallowCnnModel init_model(std::uint64_t rng_seed) {
    ShallowCnnModel m = ShallowCnnModel::zeros();
    Rng rng(rng_seed);
    auto fill = [&rng](ConvLayerParams& layer) {
        const double fan_in = static_cast<double>(layer.in_channels) * layer.kh * layer.kw;
        const double fan_out = static_cast<double>(layer.out_channels) * layer.kh * layer.kw;
        const double a = std::sqrt(6.0 / (fan_in + fan_out));
        for (double& w : layer.kernels) w = rng.uniform(-a, a);
    };
    fill(m.layer1);
    fill(m.layer2);
    fill(m.output_layer);
    return m;
}

namespace detail {

inline void check_patch_shape(const ImageGrid& g, int side, const char* what) {
    if (g.width != side || g.height != side)
        throw ShapeError(std::string(what) + " must be " + std::to_string(side) + "x" +
                         std::to_string(side) + ", got " + std::to_string(g.width) + "x" +
                         std::to_string(g.height));
}

// Activations kept by the forward pass for backprop. Channel-major planes.
struct CnnTrace {
    std::vector<double> z1; // [10][9][9] pre-activation
    std::vector<double> a1; // [10][9][9] post-ReLU
    std::vector<double> z2; // [10][3][3] pre-activation
    std::vector<double> a2; // [10][3][3] post-ReLU
    std::vector<double> out; // [3][3]
};

inline void forward_trace(const ShallowCnnModel& m, const ImageGrid& input, CnnTrace& t) {
    constexpr int H1 = kCnnHidden1Size, H2 = kCnnOutputSize, K = kCnnKernelSize,
                  C = kCnnChannels, IN = kCnnInputSize;
    t.z1.assign(C * H1 * H1, 0.0);
    t.a1.assign(C * H1 * H1, 0.0);
    t.z2.assign(C * H2 * H2, 0.0);
    t.a2.assign(C * H2 * H2, 0.0);
    t.out.assign(H2 * H2, 0.0);

    for (int o = 0; o < C; ++o) {
        const double* ker = &m.layer1.kernels[static_cast<std::size_t>(o) * K * K];
        const double b = m.layer1.biases[o];
        for (int y = 0; y < H1; ++y)
            for (int x = 0; x < H1; ++x) {
                double acc = b;
                for (int u = 0; u < K; ++u) {
                    const double* row = &input.data[static_cast<std::size_t>(y + u) * IN + x];
                    const double* kr = &ker[u * K];
                    for (int v = 0; v < K; ++v) acc += kr[v] * row[v];
                }
                const std::size_t idx = (static_cast<std::size_t>(o) * H1 + y) * H1 + x;
                t.z1[idx] = acc;
                t.a1[idx] = acc > 0.0 ? acc : 0.0;
            }
    }

    for (int o = 0; o < C; ++o) {
        const double b = m.layer2.biases[o];
        for (int y = 0; y < H2; ++y)
            for (int x = 0; x < H2; ++x) {
                double acc = b;
                for (int i = 0; i < C; ++i) {
                    const double* plane = &t.a1[static_cast<std::size_t>(i) * H1 * H1];
                    const double* ker =
                        &m.layer2.kernels[(static_cast<std::size_t>(o) * C + i) * K * K];
                    for (int u = 0; u < K; ++u) {
                        const double* row = &plane[static_cast<std::size_t>(y + u) * H1 + x];
                        const double* kr = &ker[u * K];
                        for (int v = 0; v < K; ++v) acc += kr[v] * row[v];
                    }
                }
                const std::size_t idx = (static_cast<std::size_t>(o) * H2 + y) * H2 + x;
                t.z2[idx] = acc;
                t.a2[idx] = acc > 0.0 ? acc : 0.0;
            }
    }

    for (int y = 0; y < H2; ++y)
        for (int x = 0; x < H2; ++x) {
            double acc = m.output_layer.biases[0];
            for (int i = 0; i < C; ++i)
                acc += m.output_layer.kernels[i] *
                       t.a2[(static_cast<std::size_t>(i) * H2 + y) * H2 + x];
            t.out[static_cast<std::size_t>(y) * H2 + x] = acc;
        }
}

} // namespace detail

inline ImageGrid forward(const ShallowCnnModel& m, const ImageGrid& input) {
    detail::check_patch_shape(input, kCnnInputSize, "shallow CNN input");
    detail::CnnTrace t;
    detail::forward_trace(m, input, t);
    ImageGrid out(kCnnOutputSize, kCnnOutputSize);
    out.data = t.out;
    return out;
}

// (1/9) * sum of squared differences.
inline double loss_mse(const ImageGrid& pred, const ImageGrid& target) {
    if (!pred.same_shape(target)) throw ShapeError("loss_mse shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred.data[i] - target.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(pred.size());
}

// Exact analytic gradient of loss_mse(forward(m, input), target) w.r.t. every
// parameter. ReLU subgradient at 0 is taken as 0. Gradients accumulate into
// `grad` (caller zeroes it), scaled by `scale`; returns the sample loss.
inline double backward(const ShallowCnnModel& m, const ImageGrid& input, const ImageGrid& target,
                       ShallowCnnModel& grad, double scale = 1.0) {
    detail::check_patch_shape(input, kCnnInputSize, "shallow CNN input");
    detail::check_patch_shape(target, kCnnOutputSize, "shallow CNN target");
    constexpr int H1 = kCnnHidden1Size, H2 = kCnnOutputSize, K = kCnnKernelSize,
                  C = kCnnChannels, IN = kCnnInputSize;

    detail::CnnTrace t;
    detail::forward_trace(m, input, t);

    double loss = 0.0;
    std::vector<double> d_out(H2 * H2); // dL/d(output)
    for (int i = 0; i < H2 * H2; ++i) {
        const double diff = t.out[i] - target.data[i];
        loss += diff * diff;
        d_out[i] = 2.0 * diff / (H2 * H2);
    }
    loss /= H2 * H2;

    // output 1x1 layer
    std::vector<double> d_a2(C * H2 * H2, 0.0);
    {
        double db = 0.0;
        for (int i = 0; i < H2 * H2; ++i) db += d_out[i];
        grad.output_layer.biases[0] += scale * db;
        for (int c = 0; c < C; ++c) {
            double dw = 0.0;
            const double w = m.output_layer.kernels[c];
            for (int i = 0; i < H2 * H2; ++i) {
                const std::size_t idx = static_cast<std::size_t>(c) * H2 * H2 + i;
                dw += d_out[i] * t.a2[idx];
                d_a2[idx] += d_out[i] * w;
            }
            grad.output_layer.kernels[c] += scale * dw;
        }
    }

    // layer2: ReLU mask, kernel/bias grads, then grad w.r.t. a1
    std::vector<double> d_z2(C * H2 * H2);
    for (std::size_t i = 0; i < d_z2.size(); ++i) d_z2[i] = t.z2[i] > 0.0 ? d_a2[i] : 0.0;

    std::vector<double> d_a1(C * H1 * H1, 0.0);
    for (int o = 0; o < C; ++o) {
        const double* dz = &d_z2[static_cast<std::size_t>(o) * H2 * H2];
        double db = 0.0;
        for (int i = 0; i < H2 * H2; ++i) db += dz[i];
        grad.layer2.biases[o] += scale * db;
        for (int c = 0; c < C; ++c) {
            const double* a1p = &t.a1[static_cast<std::size_t>(c) * H1 * H1];
            double* da1p = &d_a1[static_cast<std::size_t>(c) * H1 * H1];
            const double* ker = &m.layer2.kernels[(static_cast<std::size_t>(o) * C + c) * K * K];
            double* gker = &grad.layer2.kernels[(static_cast<std::size_t>(o) * C + c) * K * K];
            for (int y = 0; y < H2; ++y)
                for (int x = 0; x < H2; ++x) {
                    const double g = dz[y * H2 + x];
                    if (g == 0.0) continue;
                    for (int u = 0; u < K; ++u)
                        for (int v = 0; v < K; ++v) {
                            gker[u * K + v] += scale * g * a1p[(y + u) * H1 + (x + v)];
                            da1p[(y + u) * H1 + (x + v)] += g * ker[u * K + v];
                        }
                }
        }
    }

    // layer1
    for (int o = 0; o < C; ++o) {
        const double* dz_base = &d_a1[static_cast<std::size_t>(o) * H1 * H1];
        const double* z1p = &t.z1[static_cast<std::size_t>(o) * H1 * H1];
        double* gker = &grad.layer1.kernels[static_cast<std::size_t>(o) * K * K];
        double db = 0.0;
        for (int y = 0; y < H1; ++y)
            for (int x = 0; x < H1; ++x) {
                const double g = z1p[y * H1 + x] > 0.0 ? dz_base[y * H1 + x] : 0.0;
                if (g == 0.0) continue;
                db += g;
                for (int u = 0; u < K; ++u)
                    for (int v = 0; v < K; ++v)
                        gker[u * K + v] += scale * g * input.data[(y + u) * IN + (x + v)];
            }
        grad.layer1.biases[o] += scale * db;
    }

    return loss;
}

namespace detail {

inline void axpy(ConvLayerParams& dst, const ConvLayerParams& src, double alpha) {
    for (std::size_t i = 0; i < dst.kernels.size(); ++i) dst.kernels[i] += alpha * src.kernels[i];
    for (std::size_t i = 0; i < dst.biases.size(); ++i) dst.biases[i] += alpha * src.biases[i];
}

inline void zero(ConvLayerParams& p) {
    std::fill(p.kernels.begin(), p.kernels.end(), 0.0);
    std::fill(p.biases.begin(), p.biases.end(), 0.0);
}

} // namespace detail

struct TrainHistory {
    std::vector<double> train_loss; // mean per-sample loss per epoch
    std::vector<double> val_mse;    // validation MSE per epoch (NaN when no validation set)
};

struct TrainResult {
    ShallowCnnModel model;
    TrainHistory history;
};

inline double validation_mse(const ShallowCnnModel& m, const std::vector<PatchPair>& pairs) {
    if (pairs.empty()) return std::numeric_limits<double>::quiet_NaN();
    double acc = 0.0;
    for (const PatchPair& p : pairs) acc += loss_mse(forward(m, p.input), p.target);
    return acc / static_cast<double>(pairs.size());
}

// Mini-batch SGD: per epoch, shuffle with the seeded RNG and walk batches of
// batch_size (final partial batch included), updating with the mean gradient.
inline TrainResult train(ShallowCnnModel model, const std::vector<PatchPair>& pairs,
                         const TrainConfig& config, const std::vector<PatchPair>& validation = {}) {
    if (pairs.empty()) throw ConfigError("training set is empty");
    if (config.learning_rate < 0.0) throw ConfigError("learning rate must be >= 0");
    if (config.batch_size < 1) throw ConfigError("batch size must be >= 1");

    Rng rng(config.rng_seed);
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    TrainResult result;
    result.history.train_loss.reserve(config.epochs);
    result.history.val_mse.reserve(config.epochs);

    ShallowCnnModel grad = ShallowCnnModel::zeros();
    double best_val = std::numeric_limits<double>::infinity();
    int epochs_since_best = 0;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            const double inv_n = 1.0 / static_cast<double>(end - start);
            detail::zero(grad.layer1);
            detail::zero(grad.layer2);
            detail::zero(grad.output_layer);
            for (std::size_t i = start; i < end; ++i) {
                const PatchPair& p = pairs[order[i]];
                epoch_loss += backward(model, p.input, p.target, grad, inv_n);
            }
            detail::axpy(model.layer1, grad.layer1, -config.learning_rate);
            detail::axpy(model.layer2, grad.layer2, -config.learning_rate);
            detail::axpy(model.output_layer, grad.output_layer, -config.learning_rate);
        }
        result.history.train_loss.push_back(epoch_loss / static_cast<double>(pairs.size()));

        const double val = validation_mse(model, validation);
        result.history.val_mse.push_back(val);
        if (!validation.empty() && config.early_stop_patience > 0) {
            if (val < best_val) {
                best_val = val;
                epochs_since_best = 0;
            } else if (++epochs_since_best >= config.early_stop_patience) {
                break;
            }
        }
    }

    result.model = std::move(model);
    return result;
}

// ---------------------------------------------------------------------------
// Persistence: JSON manifest + raw little-endian float64 blob in canonical
// order (layer1 kernels, layer1 biases, layer2 kernels, layer2 biases,
// output kernels, output biases).
// ---------------------------------------------------------------------------

inline fs::path shallow_model_blob_path(const fs::path& manifest_path) {
    fs::path p = manifest_path;
    p.replace_extension(".bin");
    return p;
}

inline void save_shallow_model(const fs::path& manifest_path, const ShallowCnnModel& m,
                               const TrainConfig& config) {
    nlohmann::json doc;
    doc["format"] = "sdcnn-shallow-model";
    doc["version"] = 1;
    doc["architecture"] = {
        {"input", kCnnInputSize}, {"output", kCnnOutputSize},
        {"channels", kCnnChannels}, {"kernel", kCnnKernelSize}};
    doc["parameter_count"] = parameter_count(m);
    doc["config"] = {{"learning_rate", config.learning_rate},
                     {"batch_size", config.batch_size},
                     {"epochs", config.epochs},
                     {"early_stop_patience", config.early_stop_patience},
                     {"rng_seed", config.rng_seed}};
    doc["blob"] = shallow_model_blob_path(manifest_path).filename().string();

    std::vector<double> blob;
    blob.reserve(parameter_count(m));
    for (const ConvLayerParams* layer : {&m.layer1, &m.layer2, &m.output_layer}) {
        blob.insert(blob.end(), layer->kernels.begin(), layer->kernels.end());
        blob.insert(blob.end(), layer->biases.begin(), layer->biases.end());
    }
    atomic_write_file(shallow_model_blob_path(manifest_path), blob.data(),
                      blob.size() * sizeof(double));
    atomic_write_text(manifest_path, doc.dump(2) + "\n");
}

inline ShallowCnnModel load_shallow_model(const fs::path& manifest_path,
                                          TrainConfig* config_out = nullptr) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_text_file(manifest_path));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad shallow model manifest '" + manifest_path.string() + "': " + e.what());
    }
    if (doc.value("format", "") != "sdcnn-shallow-model")
        throw IoError("'" + manifest_path.string() + "' is not a shallow model manifest");
    ShallowCnnModel m = ShallowCnnModel::zeros();
    const fs::path blob_path = manifest_path.parent_path() / doc.at("blob").get<std::string>();
    std::ifstream in(blob_path, std::ios::binary);
    if (!in) throw IoError("cannot open weight blob '" + blob_path.string() + "'");
    std::vector<double> blob(parameter_count(m));
    in.read(reinterpret_cast<char*>(blob.data()),
            static_cast<std::streamsize>(blob.size() * sizeof(double)));
    if (static_cast<std::size_t>(in.gcount()) != blob.size() * sizeof(double))
        throw IoError("weight blob '" + blob_path.string() + "' truncated");
    std::size_t off = 0;
    for (ConvLayerParams* layer : {&m.layer1, &m.layer2, &m.output_layer}) {
        std::copy_n(blob.begin() + off, layer->kernels.size(), layer->kernels.begin());
        off += layer->kernels.size();
        std::copy_n(blob.begin() + off, layer->biases.size(), layer->biases.begin());
        off += layer->biases.size();
    }
    if (config_out && doc.contains("config")) {
        const auto& c = doc["config"];
        config_out->learning_rate = c.value("learning_rate", 0.01);
        config_out->batch_size = c.value("batch_size", 128);
        config_out->epochs = c.value("epochs", 50);
        config_out->early_stop_patience = c.value("early_stop_patience", 10);
        config_out->rng_seed = c.value("rng_seed", std::uint64_t{0});
    }
    return m;
}

} // namespace sdcnn
