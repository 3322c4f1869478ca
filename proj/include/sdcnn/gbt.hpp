#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdcnn/errors.hpp"
#include "sdcnn/image_io.hpp"
#include "sdcnn/rng.hpp"

namespace sdcnn {

// Dense row-major feature matrix: one row per case.
struct FeatureMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    FeatureMatrix() = default;
    FeatureMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}

    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
    double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
    const double* row(std::size_t r) const { return values.data() + r * cols; }
};

// I_G(p) = 1 - sum p_i^2 over class fractions.
inline double gini_impurity(const std::vector<double>& class_fractions) {
    double sum = 0.0, sq = 0.0;
    for (double p : class_fractions) {
        if (p < 0.0) throw DomainError("class fractions must be >= 0");
        sum += p;
        sq += p * p;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw DomainError("class fractions must sum to 1");
    return 1.0 - sq;
}

struct GbtConfig {
    int n_trees = 21;
    int max_depth = 3;
    int min_samples_leaf = 2;
    int max_features = 0; // candidate features per split; 0 = floor(sqrt(n_features))
    double learning_rate = 0.1;
    double weight_benign = 1.0;
    double weight_cancer = 1.0;
    std::uint64_t rng_seed = 0;
};

struct TreeNode {
    int feature = -1; // -1 marks a leaf
    double threshold = 0.0;
    double impurity_reduction = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0; // leaf output

    bool is_leaf() const { return feature < 0; }
};

struct RegressionTree {
    std::vector<TreeNode> nodes; // nodes[0] is the root

    double predict(const double* x) const {
        int i = 0;
        while (!nodes[i].is_leaf()) i = x[nodes[i].feature] <= nodes[i].threshold
                                            ? nodes[i].left
                                            : nodes[i].right;
        return nodes[i].value;
    }
};

struct GbtModel {
    double base_score = 0.0; // log-odds of the weighted class prior
    double learning_rate = 0.1;
    std::size_t n_features = 0;
    std::vector<RegressionTree> trees;
    std::vector<double> feature_importance; // normalized; all zero when no split exists
    bool any_split = false;
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

namespace detail {

inline constexpr double kProbClamp = 1e-12;

// Fits one regression tree to gradient targets r with hessians h and sample
// weights w, using weighted variance (SSE) reduction as the split criterion.
class TreeBuilder {
public:
    TreeBuilder(const FeatureMatrix& x, const std::vector<double>& r, const std::vector<double>& h,
                const std::vector<double>& w, const GbtConfig& config, int n_candidates, Rng& rng,
                std::vector<double>& importance_raw)
        : x_(x), r_(r), h_(h), w_(w), config_(config), n_candidates_(n_candidates), rng_(rng),
          importance_raw_(importance_raw), feature_pool_(x.cols) {
        for (std::size_t i = 0; i < feature_pool_.size(); ++i)
            feature_pool_[i] = static_cast<int>(i);
    }

    RegressionTree build() {
        RegressionTree tree;
        std::vector<std::size_t> indices(x_.rows);
        for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
        grow(tree, indices, 0);
        return tree;
    }

private:
    struct Split {
        int feature = -1;
        double threshold = 0.0;
        double gain = 0.0;
    };

    double leaf_value(const std::vector<std::size_t>& idx) const {
        double num = 0.0, den = 0.0;
        for (std::size_t i : idx) {
            num += w_[i] * r_[i];
            den += w_[i] * h_[i];
        }
        if (den <= 0.0) return 0.0;
        return num / den;
    }

    int make_leaf(RegressionTree& tree, const std::vector<std::size_t>& idx) {
        TreeNode node;
        node.value = leaf_value(idx);
        tree.nodes.push_back(node);
        return static_cast<int>(tree.nodes.size()) - 1;
    }

    // Weighted SSE of targets about their weighted mean, from sufficient stats.
    static double sse(double sw, double swr, double swr2) {
        if (sw <= 0.0) return 0.0;
        return swr2 - swr * swr / sw;
    }

    Split find_split(const std::vector<std::size_t>& idx) {
        // partial Fisher-Yates draw of candidate features, then sorted so ties
        // resolve to the lowest feature index
        const int d = static_cast<int>(x_.cols);
        const int k = std::min(n_candidates_, d);
        for (int i = 0; i < k; ++i) {
            const std::size_t j = i + rng_.uniform_index(static_cast<std::size_t>(d - i));
            std::swap(feature_pool_[i], feature_pool_[j]);
        }
        std::vector<int> candidates(feature_pool_.begin(), feature_pool_.begin() + k);
        std::sort(candidates.begin(), candidates.end());

        double sw = 0.0, swr = 0.0, swr2 = 0.0;
        for (std::size_t i : idx) {
            sw += w_[i];
            swr += w_[i] * r_[i];
            swr2 += w_[i] * r_[i] * r_[i];
        }
        const double total_sse = sse(sw, swr, swr2);
        // SSE differences below this are cancellation dust, not real splits
        const double gain_floor = 1e-12 * std::max(swr2, 1e-300);
        if (total_sse <= gain_floor) return {};

        Split best;
        best.gain = gain_floor;
        std::vector<std::pair<double, std::size_t>> order;
        order.reserve(idx.size());
        for (int f : candidates) {
            order.clear();
            for (std::size_t i : idx) order.emplace_back(x_.at(i, f), i);
            std::sort(order.begin(), order.end());
            if (order.front().first == order.back().first) continue; // constant feature

            double lw = 0.0, lwr = 0.0, lwr2 = 0.0;
            for (std::size_t pos = 0; pos + 1 < order.size(); ++pos) {
                const std::size_t i = order[pos].second;
                lw += w_[i];
                lwr += w_[i] * r_[i];
                lwr2 += w_[i] * r_[i] * r_[i];
                const double v0 = order[pos].first;
                const double v1 = order[pos + 1].first;
                if (v0 == v1) continue;
                const std::size_t n_left = pos + 1;
                const std::size_t n_right = order.size() - n_left;
                if (n_left < static_cast<std::size_t>(config_.min_samples_leaf) ||
                    n_right < static_cast<std::size_t>(config_.min_samples_leaf))
                    continue;
                const double gain =
                    total_sse - sse(lw, lwr, lwr2) - sse(sw - lw, swr - lwr, swr2 - lwr2);
                if (gain > best.gain) {
                    double thr = 0.5 * (v0 + v1);
                    if (thr >= v1) thr = v0; // midpoint rounded onto the upper value
                    best.feature = f;
                    best.threshold = thr;
                    best.gain = gain;
                }
            }
        }
        return best;
    }

    int grow(RegressionTree& tree, const std::vector<std::size_t>& idx, int depth) {
        if (depth >= config_.max_depth ||
            idx.size() < 2 * static_cast<std::size_t>(config_.min_samples_leaf))
            return make_leaf(tree, idx);

        const Split split = find_split(idx);
        if (split.feature < 0 || !(split.gain > 0.0)) return make_leaf(tree, idx);

        std::vector<std::size_t> left, right;
        for (std::size_t i : idx)
            (x_.at(i, split.feature) <= split.threshold ? left : right).push_back(i);

        TreeNode node;
        node.feature = split.feature;
        node.threshold = split.threshold;
        node.impurity_reduction = split.gain;
        tree.nodes.push_back(node);
        const int node_id = static_cast<int>(tree.nodes.size()) - 1;
        importance_raw_[split.feature] += split.gain;

        const int left_id = grow(tree, left, depth + 1);
        const int right_id = grow(tree, right, depth + 1);
        tree.nodes[node_id].left = left_id;
        tree.nodes[node_id].right = right_id;
        return node_id;
    }

    const FeatureMatrix& x_;
    const std::vector<double>& r_;
    const std::vector<double>& h_;
    const std::vector<double>& w_;
    const GbtConfig& config_;
    int n_candidates_;
    Rng& rng_;
    std::vector<double>& importance_raw_;
    std::vector<int> feature_pool_;
};

} // namespace detail

// Stage-wise logistic-loss boosting: the prior log-odds seed the raw score,
// each stage fits a regression tree to the per-sample negative gradients
// (y - p) with one-step Newton leaf estimates, and the raw score advances by
// learning_rate times the leaf output.
inline GbtModel fit(const FeatureMatrix& features, const std::vector<int>& labels,
                    const GbtConfig& config) {
    if (features.rows < 2) throw ConfigError("gbt fit needs at least 2 cases");
    if (features.rows != labels.size()) throw ShapeError("label count != feature rows");
    if (config.n_trees < 1 || config.max_depth < 1 || config.min_samples_leaf < 1)
        throw ConfigError("invalid gbt configuration");
    for (double v : features.values)
        if (!std::isfinite(v)) throw DataError("feature matrix contains non-finite values");

    double pos_w = 0.0, neg_w = 0.0;
    std::vector<double> w(features.rows);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw DomainError("labels must be 0 or 1");
        w[i] = labels[i] ? config.weight_cancer : config.weight_benign;
        (labels[i] ? pos_w : neg_w) += w[i];
    }
    if (pos_w <= 0.0 || neg_w <= 0.0)
        throw DomainError("labels contain a single class; cannot fit a classifier");

    GbtModel model;
    model.base_score = std::log(pos_w / neg_w);
    model.learning_rate = config.learning_rate;
    model.n_features = features.cols;
    model.feature_importance.assign(features.cols, 0.0);

    const int n_candidates =
        config.max_features > 0
            ? std::min<int>(config.max_features, static_cast<int>(features.cols))
            : std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(features.cols)))));

    Rng rng(config.rng_seed);
    std::vector<double> raw(features.rows, model.base_score);
    std::vector<double> residual(features.rows), hessian(features.rows);
    std::vector<double> importance_raw(features.cols, 0.0);

    for (int t = 0; t < config.n_trees; ++t) {
        for (std::size_t i = 0; i < features.rows; ++i) {
            const double p = sigmoid(raw[i]);
            residual[i] = static_cast<double>(labels[i]) - p;
            hessian[i] = p * (1.0 - p);
        }
        detail::TreeBuilder builder(features, residual, hessian, w, config, n_candidates, rng,
                                    importance_raw);
        RegressionTree tree = builder.build();
        for (std::size_t i = 0; i < features.rows; ++i)
            raw[i] += config.learning_rate * tree.predict(features.row(i));
        model.trees.push_back(std::move(tree));
    }

    double total = 0.0;
    for (double v : importance_raw) total += v;
    model.any_split = total > 0.0;
    if (model.any_split)
        for (std::size_t i = 0; i < importance_raw.size(); ++i)
            model.feature_importance[i] = importance_raw[i] / total;
    return model;
}

inline double predict_raw(const GbtModel& model, const double* x) {
    double score = model.base_score;
    for (const RegressionTree& tree : model.trees) score += model.learning_rate * tree.predict(x);
    return score;
}

inline double predict_proba(const GbtModel& model, const std::vector<double>& features) {
    if (features.size() != model.n_features)
        throw ShapeError("feature vector length " + std::to_string(features.size()) +
                         " != model expectation " + std::to_string(model.n_features));
    const double p = sigmoid(predict_raw(model, features.data()));
    return std::clamp(p, detail::kProbClamp, 1.0 - detail::kProbClamp);
}

// Normalized cumulative impurity reduction per feature (zeros when the model
// never split; check model.any_split).
inline std::vector<double> feature_importance(const GbtModel& model) {
    return model.feature_importance;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

inline void save_gbt_model(const fs::path& path, const GbtModel& model) {
    nlohmann::json doc;
    doc["format"] = "sdcnn-gbt-model";
    doc["version"] = 1;
    doc["base_score"] = model.base_score;
    doc["learning_rate"] = model.learning_rate;
    doc["n_features"] = model.n_features;
    doc["any_split"] = model.any_split;
    doc["feature_importance"] = model.feature_importance;
    nlohmann::json trees = nlohmann::json::array();
    for (const RegressionTree& tree : model.trees) {
        nlohmann::json nodes = nlohmann::json::array();
        for (const TreeNode& n : tree.nodes)
            nodes.push_back({{"feature", n.feature},
                             {"threshold", n.threshold},
                             {"impurity_reduction", n.impurity_reduction},
                             {"left", n.left},
                             {"right", n.right},
                             {"value", n.value}});
        trees.push_back(std::move(nodes));
    }
    doc["trees"] = std::move(trees);
    atomic_write_text(path, doc.dump(2) + "\n");
}

inline GbtModel load_gbt_model(const fs::path& path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad gbt model file '" + path.string() + "': " + e.what());
    }
    if (doc.value("format", "") != "sdcnn-gbt-model")
        throw IoError("'" + path.string() + "' is not a gbt model file");
    GbtModel model;
    model.base_score = doc.at("base_score").get<double>();
    model.learning_rate = doc.at("learning_rate").get<double>();
    model.n_features = doc.at("n_features").get<std::size_t>();
    model.any_split = doc.at("any_split").get<bool>();
    model.feature_importance = doc.at("feature_importance").get<std::vector<double>>();
    for (const auto& tree_json : doc.at("trees")) {
        RegressionTree tree;
        for (const auto& n : tree_json) {
            TreeNode node;
            node.feature = n.at("feature").get<int>();
            node.threshold = n.at("threshold").get<double>();
            node.impurity_reduction = n.at("impurity_reduction").get<double>();
            node.left = n.at("left").get<int>();
            node.right = n.at("right").get<int>();
            node.value = n.at("value").get<double>();
            tree.nodes.push_back(node);
        }
        model.trees.push_back(std::move(tree));
    }
    return model;
}

} // namespace sdcnn
