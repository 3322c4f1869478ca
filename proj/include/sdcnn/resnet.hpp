#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <limits>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "sdcnn/errors.hpp"
#include "sdcnn/image.hpp"
#include "sdcnn/image_io.hpp"
#include "sdcnn/rng.hpp"

namespace sdcnn {

// 50-layer residual network, inference only. Stage layout [3,4,6,3] bottleneck
// blocks; features are tapped after the final block of each stage and each
// channel map is reduced to its spatial mean, giving 256+512+1024+2048 = 3840
// values per image.
inline constexpr std::array<int, 4> kResNetBlockCounts = {3, 4, 6, 3};
inline constexpr std::array<int, 4> kResNetMidChannels = {64, 128, 256, 512};
inline constexpr std::array<int, 4> kResNetOutChannels = {256, 512, 1024, 2048};
inline constexpr std::array<int, 4> kResNetTapSpatial = {56, 28, 14, 7};
inline constexpr int kFeaturesPerImage = 256 + 512 + 1024 + 2048;

struct TensorSpec {
    std::string name;
    std::vector<int> shape;

    std::size_t element_count() const {
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        return n;
    }
};

// Canonical tensor list; also the blob layout emitted by save_resnet_weights.
inline std::vector<TensorSpec> resnet50_tensor_specs() {
    std::vector<TensorSpec> specs;
    auto bn = [&specs](const std::string& prefix, int channels) {
        for (const char* part : {"gamma", "beta", "mean", "var"})
            specs.push_back({prefix + "." + part, {channels}});
    };
    specs.push_back({"stem.conv.weight", {64, 3, 7, 7}});
    bn("stem.bn", 64);
    int in_ch = 64;
    for (int s = 0; s < 4; ++s) {
        const int mid = kResNetMidChannels[s];
        const int out = kResNetOutChannels[s];
        for (int b = 0; b < kResNetBlockCounts[s]; ++b) {
            const std::string p =
                "stage" + std::to_string(s + 1) + ".block" + std::to_string(b) + ".";
            specs.push_back({p + "conv1.weight", {mid, in_ch, 1, 1}});
            bn(p + "bn1", mid);
            specs.push_back({p + "conv2.weight", {mid, mid, 3, 3}});
            bn(p + "bn2", mid);
            specs.push_back({p + "conv3.weight", {out, mid, 1, 1}});
            bn(p + "bn3", out);
            if (b == 0) {
                specs.push_back({p + "proj.weight", {out, in_ch, 1, 1}});
                bn(p + "proj_bn", out);
            }
            in_ch = out;
        }
    }
    return specs;
}

struct ResNetWeights {
    // tensor name -> float data, shapes fixed by resnet50_tensor_specs()
    std::unordered_map<std::string, std::vector<float>> tensors;
    double bn_epsilon = 1e-5;
    // optional per-channel input normalization declared by the weight file
    std::array<double, 3> channel_mean = {0.0, 0.0, 0.0};
    std::array<double, 3> channel_std = {1.0, 1.0, 1.0};

    const std::vector<float>& get(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw DataError("missing tensor '" + name + "'");
        return it->second;
    }
};

// He-style random weights: conv kernels ~ N(0, sqrt(2/fan_in)), batch-norm
// gamma 1 / beta 0 / mean 0 / var 1. Valid for end-to-end runs and tests;
// not a trained network.
inline ResNetWeights random_resnet_weights(std::uint64_t seed) {
    ResNetWeights w;
    Rng rng(seed);
    for (const TensorSpec& spec : resnet50_tensor_specs()) {
        std::vector<float> data(spec.element_count());
        if (spec.shape.size() == 4) {
            const double fan_in =
                static_cast<double>(spec.shape[1]) * spec.shape[2] * spec.shape[3];
            const double stddev = std::sqrt(2.0 / fan_in);
            for (float& v : data) v = static_cast<float>(rng.normal(0.0, stddev));
        } else if (spec.name.ends_with(".gamma")) {
            std::fill(data.begin(), data.end(), 1.0f);
        } else if (spec.name.ends_with(".var")) {
            std::fill(data.begin(), data.end(), 1.0f);
        } // beta, mean stay 0
        w.tensors.emplace(spec.name, std::move(data));
    }
    return w;
}

// ---------------------------------------------------------------------------
// Weight container: JSON manifest + raw little-endian float32 blob, tensors
// laid out in manifest order.
// ---------------------------------------------------------------------------

inline void save_resnet_weights(const fs::path& manifest_path, const ResNetWeights& w) {
    const std::vector<TensorSpec> specs = resnet50_tensor_specs();
    fs::path blob_path = manifest_path;
    blob_path.replace_extension(".bin");

    nlohmann::json doc;
    doc["format"] = "sdcnn-resnet50-weights";
    doc["version"] = 1;
    doc["dtype"] = "float32";
    doc["byte_order"] = "little";
    doc["bn_epsilon"] = w.bn_epsilon;
    doc["channel_mean"] = w.channel_mean;
    doc["channel_std"] = w.channel_std;
    doc["blob"] = blob_path.filename().string();
    nlohmann::json tensors = nlohmann::json::array();

    std::vector<float> blob;
    for (const TensorSpec& spec : specs) {
        const std::vector<float>& data = w.get(spec.name);
        if (data.size() != spec.element_count())
            throw ShapeError("tensor '" + spec.name + "' has wrong element count");
        tensors.push_back({{"name", spec.name}, {"shape", spec.shape}});
        blob.insert(blob.end(), data.begin(), data.end());
    }
    doc["tensors"] = tensors;
    atomic_write_file(blob_path, blob.data(), blob.size() * sizeof(float));
    atomic_write_text(manifest_path, doc.dump(2) + "\n");
}

inline ResNetWeights load_resnet_weights(const fs::path& manifest_path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_text_file(manifest_path));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad weight manifest '" + manifest_path.string() + "': " + e.what());
    }
    if (doc.value("format", "") != "sdcnn-resnet50-weights")
        throw IoError("'" + manifest_path.string() + "' is not a resnet-50 weight manifest");
    if (doc.value("dtype", "float32") != "float32" || doc.value("byte_order", "little") != "little")
        throw IoError("unsupported dtype/byte order in '" + manifest_path.string() + "'");

    ResNetWeights w;
    w.bn_epsilon = doc.value("bn_epsilon", 1e-5);
    if (doc.contains("channel_mean")) w.channel_mean = doc["channel_mean"].get<std::array<double, 3>>();
    if (doc.contains("channel_std")) w.channel_std = doc["channel_std"].get<std::array<double, 3>>();

    // expected name -> shape
    std::unordered_map<std::string, std::vector<int>> expected;
    for (const TensorSpec& spec : resnet50_tensor_specs()) expected.emplace(spec.name, spec.shape);

    const fs::path blob_path = manifest_path.parent_path() / doc.at("blob").get<std::string>();
    std::ifstream blob(blob_path, std::ios::binary);
    if (!blob) throw IoError("cannot open weight blob '" + blob_path.string() + "'");

    for (const auto& entry : doc.at("tensors")) {
        const std::string name = entry.at("name").get<std::string>();
        const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
        auto it = expected.find(name);
        if (it == expected.end()) throw DataError("unexpected tensor '" + name + "'");
        if (shape != it->second) throw ShapeError("tensor '" + name + "' has mismatched shape");
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        std::vector<float> data(n);
        blob.read(reinterpret_cast<char*>(data.data()),
                  static_cast<std::streamsize>(n * sizeof(float)));
        if (static_cast<std::size_t>(blob.gcount()) != n * sizeof(float))
            throw IoError("weight blob '" + blob_path.string() + "' truncated at tensor '" + name +
                          "'");
        w.tensors.emplace(name, std::move(data));
        expected.erase(it);
    }
    if (!expected.empty()) throw DataError("missing tensor '" + expected.begin()->first + "'");

    for (const auto& [name, data] : w.tensors) {
        if (!name.ends_with(".var")) continue;
        for (float v : data)
            if (!(v > 0.0f)) throw DataError("batch-norm variance not positive in '" + name + "'");
    }
    return w;
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

namespace detail {

struct FeatureMapF {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> data; // CHW

    float* plane(int c) { return data.data() + static_cast<std::size_t>(c) * height * width; }
    const float* plane(int c) const {
        return data.data() + static_cast<std::size_t>(c) * height * width;
    }
};

using MatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapF = Eigen::Map<MatrixF>;
using ConstMapF = Eigen::Map<const MatrixF>;

// weight shape [outC, inC, kh, kw]; zero padding, no bias
inline FeatureMapF conv2d(const FeatureMapF& in, const std::vector<float>& weight, int out_c,
                          int kh, int kw, int stride, int pad) {
    const int out_h = (in.height + 2 * pad - kh) / stride + 1;
    const int out_w = (in.width + 2 * pad - kw) / stride + 1;
    FeatureMapF out;
    out.channels = out_c;
    out.height = out_h;
    out.width = out_w;
    out.data.resize(static_cast<std::size_t>(out_c) * out_h * out_w);

    const int k = in.channels * kh * kw;
    const int positions = out_h * out_w;
    ConstMapF w_mat(weight.data(), out_c, k);
    MapF out_mat(out.data.data(), out_c, positions);

    if (kh == 1 && kw == 1 && pad == 0 && stride == 1) {
        ConstMapF in_mat(in.data.data(), in.channels, in.height * in.width);
        out_mat.noalias() = w_mat * in_mat;
        return out;
    }

    std::vector<float> cols(static_cast<std::size_t>(k) * positions);
    for (int c = 0; c < in.channels; ++c) {
        const float* src = in.plane(c);
        for (int u = 0; u < kh; ++u)
            for (int v = 0; v < kw; ++v) {
                float* dst = &cols[(static_cast<std::size_t>(c) * kh * kw + u * kw + v) *
                                   positions];
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride + u - pad;
                    if (iy < 0 || iy >= in.height) {
                        std::memset(dst + static_cast<std::size_t>(oy) * out_w, 0,
                                    sizeof(float) * out_w);
                        continue;
                    }
                    const float* row = src + static_cast<std::size_t>(iy) * in.width;
                    float* drow = dst + static_cast<std::size_t>(oy) * out_w;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * stride + v - pad;
                        drow[ox] = (ix >= 0 && ix < in.width) ? row[ix] : 0.0f;
                    }
                }
            }
    }
    ConstMapF cols_mat(cols.data(), k, positions);
    out_mat.noalias() = w_mat * cols_mat;
    return out;
}

inline void batchnorm_inplace(FeatureMapF& m, const std::vector<float>& gamma,
                              const std::vector<float>& beta, const std::vector<float>& mean,
                              const std::vector<float>& var, double eps) {
    for (int c = 0; c < m.channels; ++c) {
        const double scale = static_cast<double>(gamma[c]) / std::sqrt(static_cast<double>(var[c]) + eps);
        const double shift = static_cast<double>(beta[c]) - static_cast<double>(mean[c]) * scale;
        const float fs = static_cast<float>(scale);
        const float fb = static_cast<float>(shift);
        float* p = m.plane(c);
        const std::size_t n = static_cast<std::size_t>(m.height) * m.width;
        for (std::size_t i = 0; i < n; ++i) p[i] = p[i] * fs + fb;
    }
}

inline void relu_inplace(FeatureMapF& m) {
    for (float& v : m.data) v = v > 0.0f ? v : 0.0f;
}

inline void add_inplace(FeatureMapF& dst, const FeatureMapF& src) {
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

inline FeatureMapF maxpool3x3_s2_p1(const FeatureMapF& in) {
    const int out_h = (in.height + 2 - 3) / 2 + 1;
    const int out_w = (in.width + 2 - 3) / 2 + 1;
    FeatureMapF out;
    out.channels = in.channels;
    out.height = out_h;
    out.width = out_w;
    out.data.resize(static_cast<std::size_t>(in.channels) * out_h * out_w);
    for (int c = 0; c < in.channels; ++c) {
        const float* src = in.plane(c);
        float* dst = out.plane(c);
        for (int oy = 0; oy < out_h; ++oy)
            for (int ox = 0; ox < out_w; ++ox) {
                float best = -std::numeric_limits<float>::infinity();
                for (int u = -1; u <= 1; ++u) {
                    const int iy = oy * 2 + u;
                    if (iy < 0 || iy >= in.height) continue;
                    for (int v = -1; v <= 1; ++v) {
                        const int ix = ox * 2 + v;
                        if (ix < 0 || ix >= in.width) continue;
                        best = std::max(best, src[static_cast<std::size_t>(iy) * in.width + ix]);
                    }
                }
                dst[static_cast<std::size_t>(oy) * out_w + ox] = best;
            }
    }
    return out;
}

// spatial mean per channel, accumulated in double
inline std::vector<double> global_average_pool(const FeatureMapF& m) {
    std::vector<double> means(m.channels);
    const std::size_t n = static_cast<std::size_t>(m.height) * m.width;
    for (int c = 0; c < m.channels; ++c) {
        const float* p = m.plane(c);
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(p[i]);
        means[c] = acc / static_cast<double>(n);
    }
    return means;
}

struct BnTensors {
    const std::vector<float>*g, *b, *m, *v;
};

inline BnTensors bn_tensors(const ResNetWeights& w, const std::string& prefix) {
    return {&w.get(prefix + ".gamma"), &w.get(prefix + ".beta"), &w.get(prefix + ".mean"),
            &w.get(prefix + ".var")};
}

inline void apply_bn(FeatureMapF& m, const ResNetWeights& w, const std::string& prefix) {
    const BnTensors t = bn_tensors(w, prefix);
    batchnorm_inplace(m, *t.g, *t.b, *t.m, *t.v, w.bn_epsilon);
}

// Bottleneck: 1x1 reduce -> 3x3 -> 1x1 expand, BN after each conv, ReLU after
// the first two and after the residual addition. Downsampling blocks carry
// stride 2 on the first 1x1 conv and on the projection, per the original
// 50-layer design.
inline FeatureMapF bottleneck(const FeatureMapF& in, const ResNetWeights& w,
                              const std::string& prefix, int mid, int out_c, int stride,
                              bool projection) {
    FeatureMapF x = conv2d(in, w.get(prefix + "conv1.weight"), mid, 1, 1, stride, 0);
    apply_bn(x, w, prefix + "bn1");
    relu_inplace(x);
    x = conv2d(x, w.get(prefix + "conv2.weight"), mid, 3, 3, 1, 1);
    apply_bn(x, w, prefix + "bn2");
    relu_inplace(x);
    x = conv2d(x, w.get(prefix + "conv3.weight"), out_c, 1, 1, 1, 0);
    apply_bn(x, w, prefix + "bn3");

    if (projection) {
        FeatureMapF shortcut = conv2d(in, w.get(prefix + "proj.weight"), out_c, 1, 1, stride, 0);
        apply_bn(shortcut, w, prefix + "proj_bn");
        add_inplace(x, shortcut);
    } else {
        add_inplace(x, in);
    }
    relu_inplace(x);
    return x;
}

} // namespace detail

struct FeatureVector {
    std::vector<double> values; // 3840 per view, stage-major then channel
    SourceTag source = SourceTag::FFDM;
    ViewName view = ViewName::CC;
};

// Forward pass over a 224x224 [0,1] patch: grayscale replicated to three
// channels (optionally normalized per the manifest), stem conv/BN/ReLU,
// 3x3 max-pool, the four bottleneck stages, with a global-average-pooled tap
// after the final block of each stage. `tap_maps_out`, when given, receives
// the four captured activation tensors (diagnostic hook).
inline FeatureVector extract_features(const ResNetWeights& w, const ImageGrid& image,
                                      std::vector<detail::FeatureMapF>* tap_maps_out = nullptr) {
    if (image.width != kPatchSize || image.height != kPatchSize)
        throw ShapeError("extract_features expects a 224x224 patch, got " +
                         std::to_string(image.width) + "x" + std::to_string(image.height));

    detail::FeatureMapF x;
    x.channels = 3;
    x.height = image.height;
    x.width = image.width;
    x.data.resize(3 * image.size());
    for (int c = 0; c < 3; ++c) {
        const double mean = w.channel_mean[c];
        const double inv_std = 1.0 / w.channel_std[c];
        float* p = x.plane(c);
        for (std::size_t i = 0; i < image.size(); ++i)
            p[i] = static_cast<float>((image.data[i] - mean) * inv_std);
    }

    x = detail::conv2d(x, w.get("stem.conv.weight"), 64, 7, 7, 2, 3);
    detail::apply_bn(x, w, "stem.bn");
    detail::relu_inplace(x);
    x = detail::maxpool3x3_s2_p1(x);

    FeatureVector fv;
    fv.values.reserve(kFeaturesPerImage);
    for (int s = 0; s < 4; ++s) {
        const int mid = kResNetMidChannels[s];
        const int out_c = kResNetOutChannels[s];
        for (int b = 0; b < kResNetBlockCounts[s]; ++b) {
            const std::string prefix =
                "stage" + std::to_string(s + 1) + ".block" + std::to_string(b) + ".";
            const int stride = (b == 0 && s > 0) ? 2 : 1;
            x = detail::bottleneck(x, w, prefix, mid, out_c, stride, b == 0);
        }
        if (x.channels != out_c || x.height != kResNetTapSpatial[s] ||
            x.width != kResNetTapSpatial[s])
            throw std::logic_error("resnet tap shape mismatch at stage " + std::to_string(s + 1));
        const std::vector<double> pooled = detail::global_average_pool(x);
        fv.values.insert(fv.values.end(), pooled.begin(), pooled.end());
        if (tap_maps_out) tap_maps_out->push_back(x);
    }
    return fv;
}

// ---------------------------------------------------------------------------
// Per-case assembly
// ---------------------------------------------------------------------------

struct FeatureTag {
    SourceTag source = SourceTag::FFDM;
    ViewName view = ViewName::CC;
    int stage = 1;   // 1..4
    int channel = 0; // within stage

    bool operator==(const FeatureTag&) const = default;
};

struct CaseFeatures {
    std::vector<double> values;
    std::vector<FeatureTag> tags;
};

// Concatenates per-view vectors in fixed order: CC before MLO, and within a
// view LE/FFDM before RECOMBINED/VIRTUAL (SourceTag enum order).
inline CaseFeatures case_feature_vector(std::vector<FeatureVector> views) {
    if (views.empty()) throw ConfigError("case_feature_vector needs at least one view vector");
    std::sort(views.begin(), views.end(), [](const FeatureVector& a, const FeatureVector& b) {
        if (a.view != b.view) return static_cast<int>(a.view) < static_cast<int>(b.view);
        return static_cast<int>(a.source) < static_cast<int>(b.source);
    });
    for (std::size_t i = 1; i < views.size(); ++i)
        if (views[i].view == views[i - 1].view && views[i].source == views[i - 1].source)
            throw ConfigError(std::string("duplicate (view, source) pair: ") +
                              to_string(views[i].view) + "/" + to_string(views[i].source));

    CaseFeatures out;
    out.values.reserve(views.size() * kFeaturesPerImage);
    out.tags.reserve(views.size() * kFeaturesPerImage);
    for (const FeatureVector& v : views) {
        if (static_cast<int>(v.values.size()) != kFeaturesPerImage)
            throw ShapeError("view feature vector must have 3840 values");
        for (int s = 0; s < 4; ++s)
            for (int c = 0; c < kResNetOutChannels[s]; ++c)
                out.tags.push_back(FeatureTag{v.source, v.view, s + 1, c});
        out.values.insert(out.values.end(), v.values.begin(), v.values.end());
    }
    return out;
}

} // namespace sdcnn
