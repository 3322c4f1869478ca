#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <vector>

#include "sdcnn/gbt.hpp"
#include "sdcnn/rng.hpp"

using namespace sdcnn;

namespace {

struct Dataset {
    FeatureMatrix x;
    std::vector<int> y;
};

// linearly separable by a few informative features, plus noise columns
Dataset separable_dataset(std::size_t n, std::size_t d, std::size_t informative, Rng& rng) {
    Dataset ds;
    ds.x = FeatureMatrix(n, d);
    ds.y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % 2);
        ds.y[i] = label;
        for (std::size_t c = 0; c < d; ++c) {
            double v = rng.uniform(-1.0, 1.0);
            if (c < informative) v += label ? 1.6 : -1.6;
            ds.x.at(i, c) = v;
        }
    }
    return ds;
}

// Exhaustive split enumeration: every feature, every midpoint threshold,
// weighted-SSE gain. The caller inspects the best, the runner-up, and the
// gain of any particular split.
struct CandidateSplit {
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
};

std::vector<CandidateSplit> oracle_enumerate_splits(const FeatureMatrix& x,
                                                    const std::vector<double>& r,
                                                    const std::vector<double>& w, int min_leaf) {
    auto sse_of = [&](const std::vector<std::size_t>& idx) {
        double sw = 0.0, swr = 0.0, swr2 = 0.0;
        for (std::size_t i : idx) {
            sw += w[i];
            swr += w[i] * r[i];
            swr2 += w[i] * r[i] * r[i];
        }
        return sw > 0.0 ? swr2 - swr * swr / sw : 0.0;
    };
    std::vector<std::size_t> all(x.rows);
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const double total = sse_of(all);

    std::vector<CandidateSplit> splits;
    for (std::size_t f = 0; f < x.cols; ++f) {
        std::vector<double> values;
        for (std::size_t i = 0; i < x.rows; ++i) values.push_back(x.at(i, f));
        std::vector<double> sorted = values;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t p = 0; p + 1 < sorted.size(); ++p) {
            if (sorted[p] == sorted[p + 1]) continue;
            double thr = 0.5 * (sorted[p] + sorted[p + 1]);
            if (thr >= sorted[p + 1]) thr = sorted[p];
            std::vector<std::size_t> left, right;
            for (std::size_t i = 0; i < x.rows; ++i)
                (values[i] <= thr ? left : right).push_back(i);
            if (left.size() < static_cast<std::size_t>(min_leaf) ||
                right.size() < static_cast<std::size_t>(min_leaf))
                continue;
            splits.push_back({static_cast<int>(f), thr, total - sse_of(left) - sse_of(right)});
        }
    }
    return splits;
}

double model_log_loss(const GbtModel& model, const Dataset& ds, std::size_t n_trees) {
    double loss = 0.0;
    for (std::size_t i = 0; i < ds.x.rows; ++i) {
        double raw = model.base_score;
        for (std::size_t t = 0; t < n_trees; ++t)
            raw += model.learning_rate * model.trees[t].predict(ds.x.row(i));
        const double p = std::clamp(sigmoid(raw), 1e-12, 1.0 - 1e-12);
        loss += ds.y[i] ? -std::log(p) : -std::log(1.0 - p);
    }
    return loss / static_cast<double>(ds.x.rows);
}

bool trees_identical(const GbtModel& a, const GbtModel& b) {
    if (a.trees.size() != b.trees.size()) return false;
    for (std::size_t t = 0; t < a.trees.size(); ++t) {
        const auto& na = a.trees[t].nodes;
        const auto& nb = b.trees[t].nodes;
        if (na.size() != nb.size()) return false;
        for (std::size_t i = 0; i < na.size(); ++i) {
            if (na[i].feature != nb[i].feature || na[i].left != nb[i].left ||
                na[i].right != nb[i].right)
                return false;
            if (na[i].threshold != nb[i].threshold) return false;
            if (std::abs(na[i].value - nb[i].value) > 1e-12) return false;
        }
    }
    return true;
}

} // namespace

TEST_CASE("gini impurity equation") {
    CHECK(gini_impurity({0.5, 0.5}) == Catch::Approx(0.5).margin(1e-12));
    CHECK(gini_impurity({1.0, 0.0}) == Catch::Approx(0.0).margin(1e-12));
    CHECK(gini_impurity({0.25, 0.25, 0.25, 0.25}) == Catch::Approx(0.75).margin(1e-12));
    CHECK_THROWS_AS(gini_impurity({0.5, 0.4}), DomainError);
    CHECK_THROWS_AS(gini_impurity({-0.1, 1.1}), DomainError);
}

TEST_CASE("gini impurity is maximized at the uniform distribution") {
    Rng rng(3);
    for (int j : {2, 3, 4}) {
        const double uniform_value = gini_impurity(std::vector<double>(j, 1.0 / j));
        CHECK(uniform_value == Catch::Approx(1.0 - 1.0 / j).margin(1e-12));
        for (int trial = 0; trial < 200; ++trial) {
            std::vector<double> p(j);
            double sum = 0.0;
            for (double& v : p) sum += (v = rng.uniform(0.001, 1.0));
            for (double& v : p) v /= sum;
            CHECK(gini_impurity(p) <= uniform_value + 1e-12);
        }
    }
}

TEST_CASE("first-tree root split matches the exhaustive oracle") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 8 + rng.uniform_index(13); // up to 20 samples
        const std::size_t d = 2 + rng.uniform_index(4);
        Dataset ds;
        ds.x = FeatureMatrix(n, d);
        ds.y.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            ds.y[i] = static_cast<int>(i % 2);
            for (std::size_t c = 0; c < d; ++c) ds.x.at(i, c) = rng.uniform(-2.0, 2.0);
        }

        GbtConfig config;
        config.n_trees = 1;
        config.max_depth = 1;
        config.min_samples_leaf = 2;
        config.max_features = static_cast<int>(d); // all features
        config.rng_seed = trial;
        const GbtModel model = fit(ds.x, ds.y, config);

        // oracle works on the same first-stage targets: r = y - sigmoid(prior)
        const double prior = sigmoid(model.base_score);
        std::vector<double> r(n), w(n, 1.0);
        for (std::size_t i = 0; i < n; ++i) r[i] = ds.y[i] - prior;
        const auto splits = oracle_enumerate_splits(ds.x, r, w, 2);

        CandidateSplit best;
        double runner_up = 0.0;
        for (const CandidateSplit& s : splits)
            if (s.gain > best.gain) {
                runner_up = best.gain;
                best = s;
            } else {
                runner_up = std::max(runner_up, s.gain);
            }

        const TreeNode& root = model.trees[0].nodes[0];
        if (best.gain < 1e-9) {
            CHECK(root.is_leaf());
            continue;
        }
        REQUIRE_FALSE(root.is_leaf());
        // the chosen split achieves the best oracle gain (ulp-level arithmetic
        // differences aside)
        double chosen_gain = -1.0;
        for (const CandidateSplit& s : splits)
            if (s.feature == root.feature && s.threshold == root.threshold) chosen_gain = s.gain;
        REQUIRE(chosen_gain >= 0.0);
        CHECK(chosen_gain == Catch::Approx(best.gain).epsilon(1e-9));
        CHECK(root.impurity_reduction == Catch::Approx(best.gain).epsilon(1e-7));
        // with a uniquely best oracle split, identity must hold exactly
        if (best.gain > runner_up + 1e-9 * best.gain) {
            CHECK(root.feature == best.feature);
            CHECK(root.threshold == best.threshold);
        }
    }
}

TEST_CASE("a perfectly separating feature is chosen at the root") {
    Rng rng(13);
    const std::size_t n = 20, d = 5, k = 3;
    Dataset ds;
    ds.x = FeatureMatrix(n, d);
    ds.y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        ds.y[i] = static_cast<int>(i % 2);
        for (std::size_t c = 0; c < d; ++c) ds.x.at(i, c) = rng.uniform(0.0, 1.0);
        ds.x.at(i, k) = ds.y[i] ? rng.uniform(2.0, 3.0) : rng.uniform(-3.0, -2.0);
    }
    GbtConfig config;
    config.n_trees = 1;
    config.max_features = static_cast<int>(d);
    const GbtModel model = fit(ds.x, ds.y, config);
    const TreeNode& root = model.trees[0].nodes[0];
    CHECK(root.feature == static_cast<int>(k));
    CHECK(root.threshold > -2.0);
    CHECK(root.threshold < 2.0);
    // that feature carries all the importance
    CHECK(model.feature_importance[k] == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("duplicating every sample leaves the fitted trees unchanged") {
    Rng rng(17);
    Dataset ds = separable_dataset(24, 6, 2, rng);

    Dataset doubled;
    doubled.x = FeatureMatrix(48, 6);
    doubled.y.resize(48);
    for (std::size_t i = 0; i < 24; ++i) {
        for (std::size_t c = 0; c < 6; ++c) {
            doubled.x.at(i, c) = ds.x.at(i, c);
            doubled.x.at(i + 24, c) = ds.x.at(i, c);
        }
        doubled.y[i] = ds.y[i];
        doubled.y[i + 24] = ds.y[i];
    }

    GbtConfig config;
    config.n_trees = 5;
    config.max_depth = 3;
    config.min_samples_leaf = 1; // so admissibility cannot depend on multiplicity
    config.max_features = 6;
    config.rng_seed = 99;
    const GbtModel a = fit(ds.x, ds.y, config);
    const GbtModel b = fit(doubled.x, doubled.y, config);
    CHECK(trees_identical(a, b));
}

TEST_CASE("constant features give a prior-only model") {
    FeatureMatrix x(6, 3);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t c = 0; c < 3; ++c) x.at(i, c) = 1.5;
    const std::vector<int> y = {0, 1, 0, 1, 0, 1};
    GbtConfig config;
    config.n_trees = 1;
    config.max_depth = 1;
    const GbtModel model = fit(x, y, config);
    CHECK_FALSE(model.any_split);
    for (double v : model.feature_importance) CHECK(v == 0.0);
    CHECK(predict_proba(model, {1.5, 1.5, 1.5}) == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("single-class labels are rejected") {
    Rng rng(19);
    Dataset ds = separable_dataset(10, 3, 1, rng);
    std::fill(ds.y.begin(), ds.y.end(), 1);
    GbtConfig config;
    CHECK_THROWS_AS(fit(ds.x, ds.y, config), DomainError);
}

TEST_CASE("non-finite features are rejected") {
    Rng rng(23);
    Dataset ds = separable_dataset(10, 3, 1, rng);
    ds.x.at(4, 1) = std::numeric_limits<double>::quiet_NaN();
    GbtConfig config;
    CHECK_THROWS_AS(fit(ds.x, ds.y, config), DataError);
}

TEST_CASE("prior log-odds with 26 cancer and 23 benign") {
    GbtModel model;
    model.base_score = std::log(26.0 / 23.0);
    model.n_features = 2;
    const double p = predict_proba(model, {0.0, 0.0});
    CHECK(p == Catch::Approx(26.0 / 49.0).epsilon(1e-12));
    CHECK(p == Catch::Approx(0.5306).margin(5e-4));
}

TEST_CASE("appending a positive-leaf tree strictly increases the probability") {
    GbtModel model;
    model.base_score = 0.3;
    model.learning_rate = 0.1;
    model.n_features = 1;
    const double before = predict_proba(model, {0.0});
    RegressionTree tree;
    TreeNode leaf;
    leaf.value = 0.7;
    tree.nodes.push_back(leaf);
    model.trees.push_back(tree);
    const double after = predict_proba(model, {0.0});
    CHECK(after > before);
}

TEST_CASE("predict_proba stays within (0,1) and checks length") {
    Rng rng(29);
    const Dataset ds = separable_dataset(40, 4, 2, rng);
    GbtConfig config;
    config.n_trees = 40;
    config.max_features = 4;
    const GbtModel model = fit(ds.x, ds.y, config);
    for (std::size_t i = 0; i < ds.x.rows; ++i) {
        const double p =
            predict_proba(model, std::vector<double>(ds.x.row(i), ds.x.row(i) + ds.x.cols));
        CHECK(p > 0.0);
        CHECK(p < 1.0);
    }
    CHECK_THROWS_AS(predict_proba(model, {1.0, 2.0}), ShapeError);
}

TEST_CASE("impurity reductions are non-negative at every node") {
    Rng rng(31);
    const Dataset ds = separable_dataset(60, 8, 2, rng);
    GbtConfig config;
    config.n_trees = 15;
    config.rng_seed = 7;
    const GbtModel model = fit(ds.x, ds.y, config);
    int internal_nodes = 0;
    for (const RegressionTree& tree : model.trees)
        for (const TreeNode& node : tree.nodes)
            if (!node.is_leaf()) {
                CHECK(node.impurity_reduction >= 0.0);
                ++internal_nodes;
            }
    CHECK(internal_nodes > 0);
}

TEST_CASE("training log-loss is non-increasing in the number of trees") {
    Rng rng(37);
    const Dataset ds = separable_dataset(50, 6, 2, rng);
    GbtConfig config;
    config.n_trees = 25;
    config.rng_seed = 3;
    const GbtModel model = fit(ds.x, ds.y, config);
    double prev = model_log_loss(model, ds, 0);
    for (std::size_t t = 1; t <= model.trees.size(); ++t) {
        const double cur = model_log_loss(model, ds, t);
        CHECK(cur <= prev + 1e-9);
        prev = cur;
    }
}

TEST_CASE("importances are normalized and stable under weight scaling") {
    Rng rng(41);
    const Dataset ds = separable_dataset(80, 10, 3, rng);
    GbtConfig config;
    config.n_trees = 21;
    config.rng_seed = 11;
    const GbtModel base = fit(ds.x, ds.y, config);
    REQUIRE(base.any_split);
    double total = 0.0;
    for (double v : base.feature_importance) {
        CHECK(v >= 0.0);
        total += v;
    }
    CHECK(total == Catch::Approx(1.0).margin(1e-9));

    // rescaling both class weights by powers of two is exactly neutral
    for (double c : {2.0, 0.25}) {
        GbtConfig scaled = config;
        scaled.weight_benign = c;
        scaled.weight_cancer = c;
        const GbtModel other = fit(ds.x, ds.y, scaled);
        CHECK(trees_identical(base, other));
        CHECK(other.base_score == base.base_score);
    }
}

TEST_CASE("class weights change the prior and the fit") {
    Rng rng(43);
    const Dataset ds = separable_dataset(30, 4, 1, rng);
    GbtConfig config;
    config.n_trees = 1;
    config.max_depth = 1;
    config.weight_benign = 1.0;
    config.weight_cancer = 0.5;
    const GbtModel model = fit(ds.x, ds.y, config);
    // 15 cancer at weight 0.5 vs 15 benign at weight 1.0
    CHECK(model.base_score == Catch::Approx(std::log(7.5 / 15.0)).epsilon(1e-12));
}

TEST_CASE("fit is deterministic given the seed") {
    Rng rng(47);
    const Dataset ds = separable_dataset(60, 30, 2, rng);
    GbtConfig config;
    config.n_trees = 21;
    config.rng_seed = 1234; // sqrt-feature sampling active (max_features 0)
    const GbtModel a = fit(ds.x, ds.y, config);
    const GbtModel b = fit(ds.x, ds.y, config);
    CHECK(trees_identical(a, b));

    GbtConfig other = config;
    other.rng_seed = 1235;
    const GbtModel c = fit(ds.x, ds.y, other);
    CHECK_FALSE(trees_identical(a, c)); // different feature subsamples
}

TEST_CASE("an appended pure-noise feature earns little importance") {
    double worst = 0.0;
    double mean = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(1000 + seed);
        Dataset ds = separable_dataset(100, 8, 3, rng);
        // append one pure-noise column
        FeatureMatrix with_noise(ds.x.rows, ds.x.cols + 1);
        for (std::size_t i = 0; i < ds.x.rows; ++i) {
            std::copy_n(ds.x.row(i), ds.x.cols, &with_noise.at(i, 0));
            with_noise.at(i, ds.x.cols) = rng.uniform(-1.0, 1.0);
        }
        GbtConfig config;
        config.n_trees = 21;
        config.rng_seed = seed;
        const GbtModel model = fit(with_noise, ds.y, config);
        const double noise_importance = model.feature_importance.back();
        worst = std::max(worst, noise_importance);
        mean += noise_importance / 10.0;
    }
    INFO("noise feature importance mean " << mean << ", worst " << worst);
    CHECK(mean < 0.05);
}

TEST_CASE("gbt model persistence round trip") {
    namespace fsys = std::filesystem;
    Rng rng(53);
    const Dataset ds = separable_dataset(40, 5, 2, rng);
    GbtConfig config;
    config.n_trees = 9;
    config.rng_seed = 77;
    const GbtModel model = fit(ds.x, ds.y, config);

    const fsys::path dir = fsys::temp_directory_path() / "sdcnn_gbt_model";
    fsys::remove_all(dir);
    fsys::create_directories(dir);
    save_gbt_model(dir / "gbt.json", model);
    const GbtModel back = load_gbt_model(dir / "gbt.json");
    CHECK(back.base_score == model.base_score);
    CHECK(back.learning_rate == model.learning_rate);
    CHECK(back.n_features == model.n_features);
    CHECK(back.any_split == model.any_split);
    CHECK(trees_identical(back, model));
    for (std::size_t i = 0; i < ds.x.rows; ++i) {
        const std::vector<double> row(ds.x.row(i), ds.x.row(i) + ds.x.cols);
        CHECK(predict_proba(back, row) == predict_proba(model, row));
    }
    fsys::remove_all(dir);
}
