// Command-line front end for the SD-CNN lesion classification pipeline.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sdcnn/evaluation.hpp"
#include "sdcnn/manifest.hpp"
#include "sdcnn/pipeline.hpp"
#include "sdcnn/synthetic.hpp"

namespace {

std::set<sdcnn::SourceTag> parse_sources(const std::string& list) {
    std::set<sdcnn::SourceTag> sources;
    std::string item;
    std::istringstream in(list);
    while (std::getline(in, item, ',')) {
        if (!item.empty()) sources.insert(sdcnn::source_from_string(item));
    }
    return sources;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"SD-CNN breast-lesion classification pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config", config_path, "pipeline configuration JSON");

    sdcnn::PipelineConfig cfg; // defaults; optionally overridden by --config

    // preprocess
    auto* preprocess = app.add_subcommand("preprocess", "crop/normalize/resize lesion patches");
    std::string pp_manifest, pp_out;
    preprocess->add_option("--manifest", pp_manifest, "dataset manifest")->required();
    preprocess->add_option("--out", pp_out, "output directory")->required();

    // train-shallow
    auto* train = app.add_subcommand("train-shallow",
                                     "train the LE->recombined patch regression CNN");
    std::string ts_manifest, ts_out;
    std::optional<double> ts_lr;
    std::optional<int> ts_batch, ts_epochs, ts_patience, ts_pairs, ts_val_cases;
    std::optional<std::uint64_t> ts_seed;
    train->add_option("--manifest", ts_manifest, "dataset manifest with LE+RECOMBINED pairs")
        ->required();
    train->add_option("--out", ts_out, "output directory")->required();
    train->add_option("--lr", ts_lr, "learning rate (default 0.01)");
    train->add_option("--batch-size", ts_batch, "mini-batch size (default 128)");
    train->add_option("--epochs", ts_epochs, "max epochs (default 50)");
    train->add_option("--patience", ts_patience, "early-stop patience in epochs, 0 disables");
    train->add_option("--pairs-per-image", ts_pairs, "patch pairs sampled per image (default 2500)");
    train->add_option("--validation-cases", ts_val_cases, "cases held out for validation (default 5)");
    train->add_option("--seed", ts_seed, "training RNG seed");

    // synthesize
    auto* synth = app.add_subcommand("synthesize", "render virtual recombined images");
    std::string sy_manifest, sy_model, sy_out, sy_from = "FFDM", sy_region = "crop";
    int sy_step = 1;
    synth->add_option("--manifest", sy_manifest, "dataset manifest")->required();
    synth->add_option("--model", sy_model, "trained shallow model JSON")->required();
    synth->add_option("--out", sy_out, "output directory")->required();
    synth->add_option("--from", sy_from, "source images to synthesize from (FFDM or LE)");
    synth->add_option("--window-step", sy_step, "sliding-window step (default 1)");
    synth->add_option("--region", sy_region, "render region: crop (224x224 lesion patch) or full");

    // extract
    auto* extract = app.add_subcommand("extract", "deep feature extraction to CSV");
    std::string ex_index, ex_weights, ex_out;
    extract->add_option("--index", ex_index, "patch index JSON from preprocess")->required();
    extract->add_option("--weights", ex_weights, "resnet-50 weight manifest")->required();
    extract->add_option("--out", ex_out, "output feature CSV")->required();

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "cross-validated GBT classification");
    std::string ev_csv, ev_out, ev_sources, ev_folds, ev_class_weights;
    std::optional<double> ev_threshold, ev_lr;
    std::optional<int> ev_trees, ev_depth, ev_min_leaf, ev_max_features;
    std::optional<std::uint64_t> ev_seed;
    evaluate->add_option("--features", ev_csv, "feature CSV from extract")->required();
    evaluate->add_option("--out", ev_out, "output directory")->required();
    evaluate->add_option("--sources", ev_sources, "comma list of source tags to use (default all)");
    evaluate->add_option("--folds", ev_folds, "loocv or stratified:<k> (default loocv)");
    evaluate->add_option("--threshold", ev_threshold, "decision threshold (default 0.5)");
    evaluate->add_option("--trees", ev_trees, "number of boosting stages (default 21)");
    evaluate->add_option("--depth", ev_depth, "max tree depth (default 3)");
    evaluate->add_option("--min-leaf", ev_min_leaf, "min samples per leaf (default 2)");
    evaluate->add_option("--max-features", ev_max_features,
                         "candidate features per split, 0 = floor(sqrt(N))");
    evaluate->add_option("--lr", ev_lr, "boosting learning rate (default 0.1)");
    evaluate->add_option("--class-weights", ev_class_weights,
                         "benign,cancer training weights (default 1,1)");
    evaluate->add_option("--seed", ev_seed, "GBT/fold RNG seed");

    // gen-random-weights
    auto* genw = app.add_subcommand("gen-random-weights",
                                    "write a seeded random resnet-50 weight container");
    std::string gw_out;
    std::uint64_t gw_seed = 0;
    genw->add_option("--seed", gw_seed, "RNG seed")->required();
    genw->add_option("--out", gw_out, "output weight manifest path")->required();

    // make-synthetic-dataset
    auto* make = app.add_subcommand("make-synthetic-dataset",
                                    "generate a synthetic fixture dataset");
    std::string mk_out;
    sdcnn::SyntheticDatasetOptions mk_options;
    make->add_option("--out", mk_out, "output directory")->required();
    make->add_option("--cedm-cases", mk_options.n_cedm_cases, "cases with LE+RECOMBINED pairs");
    make->add_option("--ffdm-cases", mk_options.n_ffdm_cases, "cases with FFDM only");
    make->add_option("--views", mk_options.views_per_case, "views per case (1 or 2)");
    make->add_option("--size", mk_options.image_size, "image side length in pixels");
    make->add_option("--seed", mk_options.seed, "RNG seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (!config_path.empty()) cfg = sdcnn::load_pipeline_config(config_path);

        if (preprocess->parsed()) {
            const auto outcome = sdcnn::cmd_preprocess(pp_manifest, pp_out);
            std::cout << "wrote " << outcome.n_patches << " patches, index "
                      << outcome.index_path.string() << "\n";
            for (const std::string& f : outcome.failures) std::cerr << "failed: " << f << "\n";
            return outcome.failures.empty() ? 0 : 1;
        }
        if (train->parsed()) {
            sdcnn::TrainShallowOptions options;
            options.config = cfg.shallow_train;
            options.config.rng_seed = cfg.seeds.shallow;
            options.pairs_per_image = cfg.pairs_per_image;
            options.validation_cases = cfg.validation_cases;
            if (ts_lr) options.config.learning_rate = *ts_lr;
            if (ts_batch) options.config.batch_size = *ts_batch;
            if (ts_epochs) options.config.epochs = *ts_epochs;
            if (ts_patience) options.config.early_stop_patience = *ts_patience;
            if (ts_pairs) options.pairs_per_image = *ts_pairs;
            if (ts_val_cases) options.validation_cases = *ts_val_cases;
            if (ts_seed) options.config.rng_seed = *ts_seed;
            const auto outcome = sdcnn::cmd_train_shallow(ts_manifest, ts_out, options);
            std::cout << "trained on " << outcome.n_train_pairs << " pairs from "
                      << outcome.n_train_images << " images; model "
                      << outcome.model_path.string() << "\n";
            if (outcome.n_validation_images > 0 && !outcome.history.val_mse.empty())
                std::cout << "final validation MSE " << outcome.history.val_mse.back()
                          << ", rendered-image MSE " << outcome.validation_render_mse_mean
                          << " (sd " << outcome.validation_render_mse_sd << ")\n";
            return 0;
        }
        if (synth->parsed()) {
            sdcnn::SynthesizeOptions options;
            options.from_source = sdcnn::source_from_string(sy_from);
            options.window_step = sy_step;
            if (sy_region == "crop") {
                options.region = sdcnn::RenderRegion::Crop;
            } else if (sy_region == "full") {
                options.region = sdcnn::RenderRegion::Full;
            } else {
                throw sdcnn::ConfigError("--region must be crop or full");
            }
            const auto outcome = sdcnn::cmd_synthesize(sy_manifest, sy_model, sy_out, options);
            std::cout << "rendered " << outcome.n_images << " virtual images; manifest "
                      << outcome.manifest_path.string() << "\n";
            for (const std::string& f : outcome.failures) std::cerr << "failed: " << f << "\n";
            return outcome.failures.empty() ? 0 : 1;
        }
        if (extract->parsed()) {
            const auto table = sdcnn::cmd_extract(ex_index, ex_weights, ex_out);
            std::cout << "wrote " << table.matrix.rows << " cases x " << table.matrix.cols
                      << " features to " << ex_out << "\n";
            return 0;
        }
        if (evaluate->parsed()) {
            sdcnn::EvaluateOptions options;
            options.experiment.gbt = cfg.gbt;
            options.experiment.gbt.rng_seed = cfg.seeds.gbt;
            options.experiment.scheme = cfg.fold_scheme;
            options.experiment.k = cfg.fold_k;
            options.experiment.threshold = cfg.threshold;
            options.experiment.fold_seed = cfg.seeds.master;
            if (!ev_sources.empty()) options.sources = parse_sources(ev_sources);
            if (!ev_folds.empty())
                options.experiment.scheme =
                    sdcnn::fold_scheme_from_string(ev_folds, &options.experiment.k);
            if (ev_threshold) options.experiment.threshold = *ev_threshold;
            if (ev_trees) options.experiment.gbt.n_trees = *ev_trees;
            if (ev_depth) options.experiment.gbt.max_depth = *ev_depth;
            if (ev_min_leaf) options.experiment.gbt.min_samples_leaf = *ev_min_leaf;
            if (ev_max_features) options.experiment.gbt.max_features = *ev_max_features;
            if (ev_lr) options.experiment.gbt.learning_rate = *ev_lr;
            if (!ev_class_weights.empty()) {
                const auto comma = ev_class_weights.find(',');
                if (comma == std::string::npos)
                    throw sdcnn::ConfigError("--class-weights expects benign,cancer");
                options.experiment.gbt.weight_benign = std::stod(ev_class_weights.substr(0, comma));
                options.experiment.gbt.weight_cancer = std::stod(ev_class_weights.substr(comma + 1));
            }
            if (ev_seed) {
                options.experiment.gbt.rng_seed = *ev_seed;
                options.experiment.fold_seed = *ev_seed;
            }
            const auto report = sdcnn::cmd_evaluate(ev_csv, ev_out, options);
            std::cout << "pooled accuracy " << report.pooled.accuracy << ", AUC "
                      << report.pooled_roc.auc << " over " << report.n_folds << " folds\n";
            return 0;
        }
        if (genw->parsed()) {
            const auto path = sdcnn::cmd_gen_random_weights(gw_seed, gw_out);
            std::cout << "wrote " << path.string() << "\n";
            return 0;
        }
        if (make->parsed()) {
            const auto manifest = sdcnn::make_synthetic_dataset(mk_out, mk_options);
            std::cout << "wrote " << manifest.string() << "\n";
            return 0;
        }
    } catch (const sdcnn::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
