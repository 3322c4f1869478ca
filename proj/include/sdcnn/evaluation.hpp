#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "sdcnn/errors.hpp"
#include "sdcnn/gbt.hpp"
#include "sdcnn/resnet.hpp"
#include "sdcnn/rng.hpp"

namespace sdcnn {

enum class FoldScheme { LOOCV, StratifiedKFold };

struct FoldPlan {
    FoldScheme scheme = FoldScheme::LOOCV;
    int k = 0;                   // number of folds
    std::vector<int> assignment; // case index -> fold index
    std::uint64_t rng_seed = 0;
};

// LOOCV: one fold per case. Stratified k-fold: shuffle within each class with
// the seeded RNG, then deal round-robin, keeping per-fold class counts within
// one of exact proportionality.
inline FoldPlan make_folds(const std::vector<int>& labels, FoldScheme scheme, int k,
                           std::uint64_t seed) {
    const std::size_t n = labels.size();
    if (n < 2) throw ConfigError("need at least 2 cases to build folds");
    FoldPlan plan;
    plan.scheme = scheme;
    plan.rng_seed = seed;
    plan.assignment.resize(n);

    if (scheme == FoldScheme::LOOCV) {
        plan.k = static_cast<int>(n);
        for (std::size_t i = 0; i < n; ++i) plan.assignment[i] = static_cast<int>(i);
        return plan;
    }

    if (k < 2) throw ConfigError("stratified k-fold needs k >= 2");
    if (static_cast<std::size_t>(k) > n)
        throw ConfigError("fold count " + std::to_string(k) + " exceeds case count " +
                          std::to_string(n));
    bool has0 = false, has1 = false;
    for (int l : labels) (l ? has1 : has0) = true;
    if (!has0 || !has1) throw DomainError("stratified folds need both classes present");

    plan.k = k;
    Rng rng(seed);
    for (int cls : {0, 1}) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < n; ++i)
            if (labels[i] == cls) members.push_back(i);
        rng.shuffle(members);
        for (std::size_t pos = 0; pos < members.size(); ++pos)
            plan.assignment[members[pos]] = static_cast<int>(pos % k);
    }
    return plan;
}

struct ConfusionMetrics {
    long tp = 0, fp = 0, tn = 0, fn = 0;
    double accuracy = 0.0;
    std::optional<double> sensitivity; // undefined when no positive cases
    std::optional<double> specificity; // undefined when no negative cases
};

// Predicts cancer iff score >= threshold.
inline ConfusionMetrics confusion_metrics(const std::vector<double>& scores,
                                          const std::vector<int>& labels, double threshold) {
    if (scores.empty()) throw DomainError("confusion_metrics on empty input");
    if (scores.size() != labels.size()) throw ShapeError("scores/labels length mismatch");
    if (threshold < 0.0 || threshold > 1.0) throw ConfigError("threshold must be in [0, 1]");
    ConfusionMetrics m;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] >= threshold;
        if (labels[i] == 1)
            (pred ? m.tp : m.fn) += 1;
        else
            (pred ? m.fp : m.tn) += 1;
    }
    m.accuracy = static_cast<double>(m.tp + m.tn) / static_cast<double>(scores.size());
    if (m.tp + m.fn > 0) m.sensitivity = static_cast<double>(m.tp) / (m.tp + m.fn);
    if (m.tn + m.fp > 0) m.specificity = static_cast<double>(m.tn) / (m.tn + m.fp);
    return m;
}

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
};

struct RocResult {
    std::vector<RocPoint> points; // from (0,0) to (1,1), one step per distinct score
    double auc = 0.0;
};

// ROC by sweeping all distinct score thresholds (descending); AUC by the
// trapezoid rule, which gives tied positive/negative pairs half weight.
inline RocResult roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw ShapeError("scores/labels length mismatch");
    long pos = 0, neg = 0;
    for (int l : labels) (l ? pos : neg) += 1;
    if (pos == 0 || neg == 0) throw DomainError("AUC undefined: labels contain a single class");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&scores](std::size_t a, std::size_t b) {
        return scores[a] > scores[b];
    });

    RocResult result;
    result.points.push_back({0.0, 0.0});
    long tp = 0, fp = 0;
    double auc = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double v = scores[order[i]];
        long dtp = 0, dfp = 0;
        while (i < order.size() && scores[order[i]] == v) {
            (labels[order[i]] ? dtp : dfp) += 1;
            ++i;
        }
        const double x0 = static_cast<double>(fp) / neg;
        const double y0 = static_cast<double>(tp) / pos;
        tp += dtp;
        fp += dfp;
        const double x1 = static_cast<double>(fp) / neg;
        const double y1 = static_cast<double>(tp) / pos;
        auc += (x1 - x0) * 0.5 * (y0 + y1);
        result.points.push_back({x1, y1});
    }
    result.auc = auc;
    return result;
}

inline constexpr double kMeanRocGridStep = 0.01;

struct MeanRocResult {
    std::vector<RocPoint> points; // FPR grid 0..1 in steps of 0.01
    double mean_auc = 0.0;
    double sd_auc = 0.0; // sample standard deviation over folds (0 for one fold)
};

namespace detail {

// TPR of a fold curve at the given FPR; vertical runs resolve to the topmost
// point at that FPR.
inline double roc_tpr_at(const std::vector<RocPoint>& points, double fpr) {
    std::size_t j = 0;
    for (std::size_t i = 0; i < points.size(); ++i)
        if (points[i].fpr <= fpr) j = i;
    if (points[j].fpr >= fpr || j + 1 >= points.size()) return points[j].tpr;
    const RocPoint& a = points[j];
    const RocPoint& b = points[j + 1];
    const double t = (fpr - a.fpr) / (b.fpr - a.fpr);
    return a.tpr + t * (b.tpr - a.tpr);
}

} // namespace detail

// Vertical averaging: every fold's TPR interpolated onto a fixed FPR grid and
// averaged; the mean AUC is the mean of the per-fold AUCs.
inline MeanRocResult mean_roc(const std::vector<RocResult>& fold_curves) {
    if (fold_curves.empty()) throw ConfigError("mean_roc needs at least one fold curve");
    MeanRocResult out;
    const int n_grid = static_cast<int>(std::lround(1.0 / kMeanRocGridStep)) + 1;
    out.points.resize(n_grid);
    for (int g = 0; g < n_grid; ++g) {
        const double fpr = std::min(1.0, g * kMeanRocGridStep);
        double acc = 0.0;
        for (const RocResult& fold : fold_curves) acc += detail::roc_tpr_at(fold.points, fpr);
        out.points[g] = {fpr, acc / static_cast<double>(fold_curves.size())};
    }
    double mean = 0.0;
    for (const RocResult& fold : fold_curves) mean += fold.auc;
    mean /= static_cast<double>(fold_curves.size());
    out.mean_auc = mean;
    if (fold_curves.size() > 1) {
        double ss = 0.0;
        for (const RocResult& fold : fold_curves) ss += (fold.auc - mean) * (fold.auc - mean);
        out.sd_auc = std::sqrt(ss / static_cast<double>(fold_curves.size() - 1));
    }
    return out;
}

struct SourceContribution {
    SourceTag source = SourceTag::FFDM;
    long n_features_used = 0;  // features with nonzero fold-averaged importance
    double fraction = 0.0;     // share of total impurity reduction
};

// Splits fold-averaged importance by the source image each feature came from.
inline std::vector<SourceContribution> source_contribution(
    const std::vector<double>& averaged_importance, const std::vector<FeatureTag>& tags) {
    if (averaged_importance.size() != tags.size())
        throw DataError("importance vector and feature tags have different lengths");
    std::array<double, 4> sums = {0.0, 0.0, 0.0, 0.0};
    std::array<long, 4> counts = {0, 0, 0, 0};
    std::array<bool, 4> present = {false, false, false, false};
    for (std::size_t i = 0; i < tags.size(); ++i) {
        const int s = static_cast<int>(tags[i].source);
        present[s] = true;
        if (averaged_importance[i] > 0.0) {
            sums[s] += averaged_importance[i];
            counts[s] += 1;
        }
    }
    const double total = sums[0] + sums[1] + sums[2] + sums[3];
    std::vector<SourceContribution> rows;
    for (int s = 0; s < 4; ++s) {
        if (!present[s]) continue;
        SourceContribution row;
        row.source = static_cast<SourceTag>(s);
        row.n_features_used = counts[s];
        row.fraction = total > 0.0 ? sums[s] / total : 0.0;
        rows.push_back(row);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Cross-validated experiment
// ---------------------------------------------------------------------------

struct ExperimentConfig {
    FoldScheme scheme = FoldScheme::LOOCV;
    int k = 10;             // folds for the stratified scheme
    double threshold = 0.5; // decision threshold on predicted probability
    GbtConfig gbt;
    std::uint64_t fold_seed = 0;
};

struct FoldOutcome {
    int fold = 0;
    std::vector<std::size_t> test_cases;
    ConfusionMetrics metrics;
    std::optional<double> auc; // defined only when the fold holds both classes
};

struct MeanSd {
    double mean = 0.0;
    double sd = 0.0;
};

struct EvalReport {
    std::size_t n_cases = 0;
    FoldScheme scheme = FoldScheme::LOOCV;
    int n_folds = 0;
    double threshold = 0.5;
    std::vector<double> scores; // out-of-fold probability per case, input order
    std::vector<int> labels;
    ConfusionMetrics pooled;
    RocResult pooled_roc;
    std::vector<FoldOutcome> folds;
    std::optional<MeanSd> fold_accuracy;
    std::optional<MeanSd> fold_auc;
    std::optional<MeanRocResult> mean_roc_curve; // absent when no fold defines a curve (LOOCV)
    std::vector<double> averaged_importance;     // mean of per-fold normalized importances
    bool any_split = false;
    std::vector<SourceContribution> contributions; // empty when tags were not supplied
};

namespace detail {

inline MeanSd mean_sd(const std::vector<double>& xs) {
    MeanSd out;
    out.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - out.mean) * (x - out.mean);
        out.sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    }
    return out;
}

} // namespace detail

// Per fold: fit a GBT on the training split (fold-derived seed), score the
// test split. Scores are pooled for the aggregate metrics/ROC; importances
// are averaged across folds. Fully deterministic given the seeds.
inline EvalReport run_experiment(const FeatureMatrix& features, const std::vector<int>& labels,
                                 const std::vector<FeatureTag>& tags,
                                 const ExperimentConfig& config) {
    if (features.rows != labels.size()) throw ShapeError("label count != feature rows");
    if (!tags.empty() && tags.size() != features.cols)
        throw DataError("feature tag count != feature columns");

    const FoldPlan plan = make_folds(labels, config.scheme, config.k, config.fold_seed);

    EvalReport report;
    report.n_cases = features.rows;
    report.scheme = config.scheme;
    report.n_folds = plan.k;
    report.threshold = config.threshold;
    report.labels = labels;
    report.scores.assign(features.rows, 0.0);
    report.averaged_importance.assign(features.cols, 0.0);

    std::vector<RocResult> fold_curves;
    std::vector<double> fold_accuracies, fold_aucs;

    for (int f = 0; f < plan.k; ++f) {
        std::vector<std::size_t> train_idx, test_idx;
        for (std::size_t i = 0; i < features.rows; ++i)
            (plan.assignment[i] == f ? test_idx : train_idx).push_back(i);
        if (test_idx.empty()) continue;

        FeatureMatrix train(train_idx.size(), features.cols);
        std::vector<int> train_labels(train_idx.size());
        for (std::size_t r = 0; r < train_idx.size(); ++r) {
            std::copy_n(features.row(train_idx[r]), features.cols, &train.at(r, 0));
            train_labels[r] = labels[train_idx[r]];
        }

        GbtConfig fold_gbt = config.gbt;
        fold_gbt.rng_seed = derive_seed(config.gbt.rng_seed, static_cast<std::uint64_t>(f));
        const GbtModel model = fit(train, train_labels, fold_gbt);

        FoldOutcome outcome;
        outcome.fold = f;
        outcome.test_cases = test_idx;
        std::vector<double> fold_scores;
        std::vector<int> fold_labels;
        for (std::size_t i : test_idx) {
            std::vector<double> row(features.row(i), features.row(i) + features.cols);
            const double p = predict_proba(model, row);
            report.scores[i] = p;
            fold_scores.push_back(p);
            fold_labels.push_back(labels[i]);
        }
        outcome.metrics = confusion_metrics(fold_scores, fold_labels, config.threshold);
        fold_accuracies.push_back(outcome.metrics.accuracy);

        bool fold_has0 = false, fold_has1 = false;
        for (int l : fold_labels) (l ? fold_has1 : fold_has0) = true;
        if (fold_has0 && fold_has1) {
            RocResult curve = roc_auc(fold_scores, fold_labels);
            outcome.auc = curve.auc;
            fold_aucs.push_back(curve.auc);
            fold_curves.push_back(std::move(curve));
        }

        for (std::size_t c = 0; c < features.cols; ++c)
            report.averaged_importance[c] += model.feature_importance[c];
        report.folds.push_back(std::move(outcome));
    }

    const double inv_folds = 1.0 / static_cast<double>(report.folds.size());
    for (double& v : report.averaged_importance) v *= inv_folds;
    double importance_total = 0.0;
    for (double v : report.averaged_importance) importance_total += v;
    report.any_split = importance_total > 0.0;

    report.pooled = confusion_metrics(report.scores, labels, config.threshold);
    report.pooled_roc = roc_auc(report.scores, labels);
    if (!fold_accuracies.empty()) report.fold_accuracy = detail::mean_sd(fold_accuracies);
    if (!fold_aucs.empty()) report.fold_auc = detail::mean_sd(fold_aucs);
    if (!fold_curves.empty()) report.mean_roc_curve = mean_roc(fold_curves);
    if (!tags.empty())
        report.contributions = source_contribution(report.averaged_importance, tags);
    return report;
}

} // namespace sdcnn
