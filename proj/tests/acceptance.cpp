// Acceptance suite: runs every pipeline-level criterion and prints one
// PASS/FAIL line per criterion. Exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdcnn/evaluation.hpp"
#include "sdcnn/feature_csv.hpp"
#include "sdcnn/gbt.hpp"
#include "sdcnn/manifest.hpp"
#include "sdcnn/pipeline.hpp"
#include "sdcnn/resnet.hpp"
#include "sdcnn/rng.hpp"
#include "sdcnn/shallow_cnn.hpp"
#include "sdcnn/synthesis.hpp"
#include "sdcnn/synthetic.hpp"

using namespace sdcnn;
namespace fsys = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct CheckFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& message) {
    if (!ok) throw CheckFailure(message);
}

class Harness {
public:
    void criterion(int number, const std::string& title, const std::function<void()>& body) {
        const auto t0 = Clock::now();
        try {
            body();
            const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
            std::printf("PASS criterion %2d: %s (%.1f s)\n", number, title.c_str(), secs);
        } catch (const std::exception& e) {
            const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
            std::printf("FAIL criterion %2d: %s (%.1f s) -- %s\n", number, title.c_str(), secs,
                        e.what());
            ++failures_;
        }
        std::fflush(stdout);
    }

    int failures() const { return failures_; }

private:
    int failures_ = 0;
};

double elapsed_since(const Clock::time_point& t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

ImageGrid random_patch(int side, Rng& rng, double lo = 0.0, double hi = 1.0) {
    ImageGrid img(side, side);
    for (double& v : img.data) v = rng.uniform(lo, hi);
    return img;
}

ImageGrid smooth_patch(int side, Rng& rng) {
    ImageGrid coarse(4, 4);
    for (double& v : coarse.data) v = rng.uniform();
    ImageGrid img = resize_bilinear(coarse, side, side);
    for (double& v : img.data) v = std::clamp(v + rng.normal(0.0, 0.02), 0.0, 1.0);
    return img;
}

std::vector<PatchPair> identity_pairs(int n, Rng& rng) {
    std::vector<PatchPair> pairs;
    pairs.reserve(n);
    for (int i = 0; i < n; ++i) {
        PatchPair p;
        p.input = smooth_patch(15, rng);
        p.target = ImageGrid(3, 3);
        for (int y = 0; y < 3; ++y)
            for (int x = 0; x < 3; ++x) p.target.at(x, y) = p.input.at(x + 6, y + 6);
        pairs.push_back(std::move(p));
    }
    return pairs;
}

// ---- criterion 1 -----------------------------------------------------------

void gradient_correctness() {
    const auto t0 = Clock::now();
    Rng rng(1001);
    double max_rel_err = 0.0;
    for (int model_idx = 0; model_idx < 10; ++model_idx) {
        ShallowCnnModel m = init_model(4000 + model_idx);
        const ImageGrid input = random_patch(15, rng);
        const ImageGrid target = random_patch(3, rng, -0.5, 0.5);

        ShallowCnnModel grad = ShallowCnnModel::zeros();
        backward(m, input, target, grad);
        std::vector<double*> params, grads;
        for (ConvLayerParams* layer : {&m.layer1, &m.layer2, &m.output_layer}) {
            for (double& v : layer->kernels) params.push_back(&v);
            for (double& v : layer->biases) params.push_back(&v);
        }
        for (ConvLayerParams* layer : {&grad.layer1, &grad.layer2, &grad.output_layer}) {
            for (double& v : layer->kernels) grads.push_back(&v);
            for (double& v : layer->biases) grads.push_back(&v);
        }

        const double h = 1e-5;
        for (int probe = 0; probe < 100; ++probe) {
            const std::size_t idx = rng.uniform_index(params.size());
            const double saved = *params[idx];
            *params[idx] = saved + h;
            const double lp = loss_mse(forward(m, input), target);
            *params[idx] = saved - h;
            const double lm = loss_mse(forward(m, input), target);
            *params[idx] = saved;
            const double numeric = (lp - lm) / (2.0 * h);
            const double analytic = *grads[idx];
            const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-8});
            max_rel_err = std::max(max_rel_err, std::abs(numeric - analytic) / denom);
        }
    }
    require(max_rel_err < 1e-4,
            "max relative gradient error " + std::to_string(max_rel_err) + " >= 1e-4");
    require(elapsed_since(t0) < 30.0, "gradient check exceeded 30 s");
}

// ---- criterion 3 -----------------------------------------------------------

void identity_task_learning() {
    const auto t0 = Clock::now();
    Rng rng(1003);
    const std::vector<PatchPair> pairs = identity_pairs(2048, rng);
    const std::vector<PatchPair> val = identity_pairs(256, rng);

    TrainConfig config;
    config.learning_rate = 0.01; // paper hyperparameters
    config.batch_size = 128;
    config.epochs = 5;
    config.early_stop_patience = 0;

    const int batches_per_epoch =
        static_cast<int>((pairs.size() + config.batch_size - 1) / config.batch_size);
    ShallowCnnModel model = init_model(1003);
    int batches = 0;
    double val_mse = std::numeric_limits<double>::infinity();
    int chunk = 0;
    while (batches < 2000) {
        config.rng_seed = 9000 + chunk;
        ++chunk;
        TrainResult result = train(model, pairs, config, val);
        model = std::move(result.model);
        batches += batches_per_epoch * static_cast<int>(result.history.train_loss.size());
        val_mse = result.history.val_mse.back();
        if (val_mse < 1e-3) break;
    }
    require(val_mse < 1e-3, "validation MSE " + std::to_string(val_mse) +
                                " after " + std::to_string(batches) + " mini-batches");
    require(batches <= 2000, "needed more than 2000 mini-batches");
    require(elapsed_since(t0) < 60.0, "identity training exceeded 60 s");
}

// ---- criterion 4 -----------------------------------------------------------

void synthesis_assembly() {
    Rng rng(1004);
    const ImageGrid input = random_patch(48, rng);

    // interior coverage is exactly 9 at step 1
    const ShallowCnnModel model = init_model(1004);
    const SynthesisResult result = render_virtual_image(model, input, 1);
    for (int y = 8; y < 48 - 8; ++y)
        for (int x = 8; x < 48 - 8; ++x)
            require(result.coverage_at(x, y) == 9, "interior coverage != 9");

    // per-pixel average equals sum/coverage against a per-window re-run
    std::vector<double> sums(input.size(), 0.0);
    for (int wy = 0; wy + 15 <= input.height; ++wy)
        for (int wx = 0; wx + 15 <= input.width; ++wx) {
            ImageGrid window(15, 15);
            for (int y = 0; y < 15; ++y)
                for (int x = 0; x < 15; ++x) window.at(x, y) = input.at(wx + x, wy + y);
            const ImageGrid pred = forward(model, window);
            for (int j = 0; j < 3; ++j)
                for (int i = 0; i < 3; ++i)
                    sums[static_cast<std::size_t>(wy + 6 + j) * input.width + (wx + 6 + i)] +=
                        pred.at(i, j);
        }
    for (std::size_t i = 0; i < input.size(); ++i) {
        if (result.coverage[i] == 0) {
            require(result.virtual_image.data[i] == 0.0, "uncovered pixel not zero");
            continue;
        }
        const double err =
            std::abs(result.virtual_image.data[i] * result.coverage[i] - sums[i]);
        require(err < 1e-10, "averaging mismatch " + std::to_string(err));
    }

    // constant predictor renders a constant covered region
    ShallowCnnModel constant = ShallowCnnModel::zeros();
    constant.output_layer.biases[0] = 0.37;
    const SynthesisResult flat = render_virtual_image(constant, input, 1);
    for (std::size_t i = 0; i < flat.virtual_image.size(); ++i)
        if (flat.coverage[i] > 0)
            require(std::abs(flat.virtual_image.data[i] - 0.37) < 1e-12,
                    "constant predictor not constant");
}

// ---- criterion 5 -----------------------------------------------------------

void feature_geometry() {
    const ResNetWeights weights = random_resnet_weights(1005);
    Rng rng(1005);
    const ImageGrid patch = random_patch(224, rng);

    std::vector<detail::FeatureMapF> taps;
    FeatureVector fv = extract_features(weights, patch, &taps);
    require(fv.values.size() == 3840u, "feature vector length != 3840");
    require(taps.size() == 4u, "expected 4 tap points");
    const int channels[4] = {256, 512, 1024, 2048};
    const int spatial[4] = {56, 28, 14, 7};
    for (int s = 0; s < 4; ++s) {
        require(taps[s].channels == channels[s], "tap channel count mismatch");
        require(taps[s].height == spatial[s] && taps[s].width == spatial[s],
                "tap spatial shape mismatch");
    }

    // pooling equals the independent mean oracle
    std::size_t idx = 0;
    for (const auto& tap : taps) {
        const std::size_t n = static_cast<std::size_t>(tap.height) * tap.width;
        for (int c = 0; c < tap.channels; ++c) {
            double acc = 0.0;
            const float* p = tap.plane(c);
            for (std::size_t i = n; i-- > 0;) acc += static_cast<double>(p[i]);
            require(std::abs(fv.values[idx] - acc / static_cast<double>(n)) < 1e-10,
                    "pooled value differs from mean oracle");
            ++idx;
        }
    }

    // per-case concatenation lengths
    auto tagged = [&fv](SourceTag s, ViewName v) {
        FeatureVector out = fv;
        out.source = s;
        out.view = v;
        return out;
    };
    require(case_feature_vector({tagged(SourceTag::FFDM, ViewName::CC),
                                 tagged(SourceTag::FFDM, ViewName::MLO)})
                    .values.size() == 7680u,
            "2-view single-source length != 7680");
    require(case_feature_vector({tagged(SourceTag::LE, ViewName::CC),
                                 tagged(SourceTag::RECOMBINED, ViewName::CC),
                                 tagged(SourceTag::LE, ViewName::MLO),
                                 tagged(SourceTag::RECOMBINED, ViewName::MLO)})
                    .values.size() == 15360u,
            "2-view dual-source length != 15360");
}

// ---- criterion 6 -----------------------------------------------------------

void gini_equation() {
    require(std::abs(gini_impurity({0.5, 0.5}) - 0.5) < 1e-12, "gini(0.5,0.5) != 0.5");
    require(std::abs(gini_impurity({1.0, 0.0})) < 1e-12, "gini(1,0) != 0");
    Rng rng(1006);
    for (int j : {2, 3, 4}) {
        const double uniform_value = gini_impurity(std::vector<double>(j, 1.0 / j));
        require(std::abs(uniform_value - (1.0 - 1.0 / j)) < 1e-12, "uniform gini wrong");
        for (int trial = 0; trial < 500; ++trial) {
            std::vector<double> p(j);
            double sum = 0.0;
            for (double& v : p) sum += (v = rng.uniform(1e-3, 1.0));
            for (double& v : p) v /= sum;
            require(gini_impurity(p) <= uniform_value + 1e-12, "uniform not maximal");
        }
    }
}

// ---- criterion 7 -----------------------------------------------------------

void gbt_behavior() {
    const auto t0 = Clock::now();

    // 200-sample separable set, paper hyperparameters
    auto make_dataset = [](std::uint64_t seed, bool with_noise_column) {
        Rng rng(seed);
        const std::size_t n = 200, d = 24, informative = 5;
        FeatureMatrix x(n, with_noise_column ? d + 1 : d);
        std::vector<int> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = static_cast<int>(i % 2);
            for (std::size_t c = 0; c < d; ++c) {
                double v = rng.uniform(-1.0, 1.0);
                if (c < informative) v += y[i] ? 1.5 : -1.5;
                x.at(i, c) = v;
            }
            if (with_noise_column) x.at(i, d) = rng.uniform(-1.0, 1.0);
        }
        return std::make_pair(std::move(x), std::move(y));
    };

    GbtConfig config; // defaults: 21 trees, depth 3, sqrt features, min-leaf 2, lr 0.1
    config.rng_seed = 1007;
    {
        auto [x, y] = make_dataset(500, false);
        const GbtModel model = fit(x, y, config);
        long correct = 0;
        for (std::size_t i = 0; i < x.rows; ++i) {
            const std::vector<double> row(x.row(i), x.row(i) + x.cols);
            const double p = predict_proba(model, row);
            correct += ((p >= 0.5) == (y[i] == 1)) ? 1 : 0;
        }
        const double accuracy = static_cast<double>(correct) / static_cast<double>(x.rows);
        require(accuracy >= 0.99, "training accuracy " + std::to_string(accuracy) + " < 0.99");

        double total = 0.0;
        for (double v : model.feature_importance) total += v;
        require(model.any_split, "no splits on a separable dataset");
        require(std::abs(total - 1.0) < 1e-9, "importances do not sum to 1");
    }

    double noise_mean = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto [x, y] = make_dataset(600 + seed, true);
        GbtConfig seeded = config;
        seeded.rng_seed = seed;
        const GbtModel model = fit(x, y, seeded);
        noise_mean += model.feature_importance.back() / 10.0;
    }
    require(noise_mean < 0.05,
            "appended noise feature importance " + std::to_string(noise_mean) + " >= 0.05");
    require(elapsed_since(t0) < 30.0, "gbt criterion exceeded 30 s");
}

// ---- criterion 8 -----------------------------------------------------------

void auc_oracle() {
    Rng rng(1008);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 4 + rng.uniform_index(60);
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        for (std::size_t i = 0; i < n; ++i) {
            scores[i] = static_cast<double>(rng.uniform_index(10)) / 9.0; // ties likely
            labels[i] = static_cast<int>(rng.uniform_index(2));
        }
        labels[0] = 0;
        labels[n - 1] = 1;

        const double trapezoid = roc_auc(scores, labels).auc;
        double wins = 0.0;
        long pairs = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (!labels[i]) continue;
            for (std::size_t j = 0; j < n; ++j) {
                if (labels[j]) continue;
                ++pairs;
                if (scores[i] > scores[j])
                    wins += 1.0;
                else if (scores[i] == scores[j])
                    wins += 0.5;
            }
        }
        const double oracle = wins / static_cast<double>(pairs);
        require(std::abs(trapezoid - oracle) < 1e-12,
                "trapezoid/pairwise mismatch " + std::to_string(trapezoid - oracle));
    }
}

// ---- criterion 9 -----------------------------------------------------------

void cv_discipline() {
    // LOOCV: n folds, each case tested exactly once
    for (int n : {7, 49}) {
        std::vector<int> labels(n);
        for (int i = 0; i < n; ++i) labels[i] = i % 2;
        const FoldPlan plan = make_folds(labels, FoldScheme::LOOCV, 0, 1);
        require(plan.k == n, "LOOCV fold count != case count");
        std::vector<int> tested(n, 0);
        for (int f : plan.assignment) tested[f] += 1;
        for (int count : tested) require(count == 1, "case not tested exactly once");
    }

    // stratified 10-fold on a 30/59 split
    std::vector<int> labels(89, 0);
    for (int i = 30; i < 89; ++i) labels[i] = 1;
    const FoldPlan plan = make_folds(labels, FoldScheme::StratifiedKFold, 10, 2);
    std::map<int, std::pair<int, int>> per_fold;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto& [benign, cancer] = per_fold[plan.assignment[i]];
        (labels[i] ? cancer : benign) += 1;
    }
    require(per_fold.size() == 10u, "expected 10 folds");
    for (const auto& [fold, counts] : per_fold) {
        require(std::abs(counts.first - 30.0 / 10.0) <= 1.0, "benign count off by > 1");
        require(std::abs(counts.second - 59.0 / 10.0) <= 1.0, "cancer count off by > 1");
    }
}

// ---- criterion 10 ----------------------------------------------------------

void run_cli(const std::string& args) {
    const std::string cmd = std::string(SDCNN_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    require(status == 0, "CLI command failed (" + args + ")");
}

void run_pipeline(const fsys::path& dir) {
    fsys::create_directories(dir);
    run_cli("make-synthetic-dataset --out " + (dir / "fixture").string() +
            " --cedm-cases 10 --ffdm-cases 40 --views 1 --size 96 --seed 71");
    run_cli("train-shallow --manifest " + (dir / "fixture/cedm_manifest.json").string() +
            " --out " + (dir / "train").string() +
            " --pairs-per-image 1200 --validation-cases 2 --epochs 8 --patience 0 --seed 72");
    run_cli("synthesize --manifest " + (dir / "fixture/ffdm_manifest.json").string() +
            " --model " + (dir / "train/shallow_model.json").string() + " --out " +
            (dir / "virtual").string() + " --from FFDM");
    run_cli("preprocess --manifest " + (dir / "virtual/manifest.json").string() + " --out " +
            (dir / "patches").string());
    run_cli("gen-random-weights --seed 73 --out " + (dir / "weights/resnet50.json").string());
    run_cli("extract --index " + (dir / "patches/index.json").string() + " --weights " +
            (dir / "weights/resnet50.json").string() + " --out " +
            (dir / "features.csv").string());
    run_cli("evaluate --features " + (dir / "features.csv").string() + " --out " +
            (dir / "eval_ffdm").string() + " --sources FFDM --folds stratified:10 --seed 74");
    run_cli("evaluate --features " + (dir / "features.csv").string() + " --out " +
            (dir / "eval_both").string() +
            " --sources FFDM,VIRTUAL --folds stratified:10 --seed 74");
}

double pooled_auc_of(const fsys::path& report_path) {
    std::ifstream in(report_path);
    require(static_cast<bool>(in), "missing " + report_path.string());
    nlohmann::json doc = nlohmann::json::parse(in);
    return doc.at("pooled").at("auc").get<double>();
}

void compare_trees(const fsys::path& a, const fsys::path& b) {
    std::size_t n_files = 0;
    for (const auto& entry : fsys::recursive_directory_iterator(a)) {
        if (!entry.is_regular_file()) continue;
        ++n_files;
        const fsys::path rel = fsys::relative(entry.path(), a);
        const fsys::path other = b / rel;
        require(fsys::exists(other), "second run lacks " + rel.string());
        std::ifstream fa(entry.path(), std::ios::binary), fb(other, std::ios::binary);
        const std::string ca((std::istreambuf_iterator<char>(fa)),
                             std::istreambuf_iterator<char>());
        const std::string cb((std::istreambuf_iterator<char>(fb)),
                             std::istreambuf_iterator<char>());
        require(ca == cb, "byte difference in " + rel.string());
    }
    require(n_files > 0, "no files to compare");
}

void end_to_end() {
    const fsys::path work = fsys::temp_directory_path() / "sdcnn_acceptance";
    fsys::remove_all(work);
    fsys::create_directories(work);

    const auto t0 = Clock::now();
    run_pipeline(work / "run1");
    const double first_run = elapsed_since(t0);
    require(first_run < 300.0,
            "pipeline took " + std::to_string(first_run) + " s (>= 5 min)");

    const double auc_ffdm = pooled_auc_of(work / "run1/eval_ffdm/report.json");
    const double auc_both = pooled_auc_of(work / "run1/eval_both/report.json");
    std::printf("       criterion 10 detail: AUC FFDM %.4f vs FFDM+VIRTUAL %.4f, first run %.0f s\n",
                auc_ffdm, auc_both, first_run);
    require(auc_both >= auc_ffdm, "virtual features did not help: " + std::to_string(auc_both) +
                                      " < " + std::to_string(auc_ffdm));

    run_pipeline(work / "run2");
    compare_trees(work / "run1", work / "run2");
    fsys::remove_all(work);
}

} // namespace

int main() {
    Harness harness;
    harness.criterion(1, "shallow CNN gradients match central finite differences",
                      gradient_correctness);
    harness.criterion(2, "parameter budget is exactly 5421", [] {
        require(parameter_count(init_model(0)) == 5421u, "parameter count != 5421");
    });
    harness.criterion(3, "identity task reaches val MSE < 1e-3 within 2000 mini-batches",
                      identity_task_learning);
    harness.criterion(4, "sliding-window synthesis assembly and overlap averaging",
                      synthesis_assembly);
    harness.criterion(5, "deep feature geometry and pooling oracle", feature_geometry);
    harness.criterion(6, "Gini impurity equation and uniform maximality", gini_equation);
    harness.criterion(7, "GBT accuracy, importance normalization and noise rejection",
                      gbt_behavior);
    harness.criterion(8, "trapezoid AUC equals the pairwise oracle", auc_oracle);
    harness.criterion(9, "LOOCV and stratified fold discipline", cv_discipline);
    harness.criterion(10, "end-to-end synthetic pipeline: virtual features help, deterministic",
                      end_to_end);

    if (harness.failures() > 0) {
        std::printf("%d criterion(s) FAILED\n", harness.failures());
        return 1;
    }
    std::printf("all 10 criteria passed\n");
    return 0;
}
