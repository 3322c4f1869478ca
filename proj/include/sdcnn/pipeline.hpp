#pragma once

#include <algorithm>
#include <cstdint>
#include <fcntl.h>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unistd.h>
#include <vector>

#include <json.hpp>

#include "sdcnn/errors.hpp"
#include "sdcnn/evaluation.hpp"
#include "sdcnn/feature_csv.hpp"
#include "sdcnn/gbt.hpp"
#include "sdcnn/image.hpp"
#include "sdcnn/image_io.hpp"
#include "sdcnn/manifest.hpp"
#include "sdcnn/resnet.hpp"
#include "sdcnn/rng.hpp"
#include "sdcnn/shallow_cnn.hpp"
#include "sdcnn/synthesis.hpp"

namespace sdcnn {

// Advisory lock guarding an output directory against concurrent runs.
class DirLock {
public:
    explicit DirLock(const fs::path& dir) : path_(dir / ".sdcnn.lock") {
        fs::create_directories(dir);
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0)
            throw ConfigError("output directory '" + dir.string() +
                              "' is locked by another run (remove " + path_.string() +
                              " if stale)");
    }
    ~DirLock() {
        if (fd_ >= 0) {
            ::close(fd_);
            ::unlink(path_.c_str());
        }
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    fs::path path_;
    int fd_ = -1;
};

// ---------------------------------------------------------------------------
// View loading shared by preprocess / train-shallow / synthesize
// ---------------------------------------------------------------------------

struct PreparedView {
    ImageGrid image;     // raw source image
    BoundingBox crop_box;
    ImageGrid patch;     // preprocessed 224x224, values in [0,1]
    TumorMask patch_mask; // lesion mask in patch coordinates (filled on request)
};

inline PreparedView prepare_view(const fs::path& manifest_dir, const ManifestView& view,
                                 bool need_mask) {
    PreparedView out;
    out.image = load_image(manifest_dir / view.image_path);
    if (view.contour) {
        validate_contour(*view.contour, out.image.width, out.image.height);
        out.crop_box = lesion_crop_box(*view.contour, out.image.width, out.image.height);
        if (need_mask) {
            const Contour patch_contour = contour_to_patch_frame(*view.contour, out.crop_box);
            out.patch_mask = mask_from_contour(patch_contour, kPatchSize, kPatchSize);
        }
    } else if (view.mask_path) {
        const ImageGrid mask_img = load_image(manifest_dir / *view.mask_path);
        if (mask_img.width != out.image.width || mask_img.height != out.image.height)
            throw AnnotationError("mask dimensions differ from image for '" + view.image_path +
                                  "'");
        TumorMask full(mask_img.width, mask_img.height);
        BoundingBox tight{out.image.width, out.image.height, -1, -1};
        for (int y = 0; y < mask_img.height; ++y)
            for (int x = 0; x < mask_img.width; ++x)
                if (mask_img.at(x, y) > 0.5) {
                    full.at(x, y) = 1;
                    tight.x_min = std::min(tight.x_min, x);
                    tight.y_min = std::min(tight.y_min, y);
                    tight.x_max = std::max(tight.x_max, x);
                    tight.y_max = std::max(tight.y_max, y);
                }
        if (tight.x_max < tight.x_min) throw AnnotationError("lesion mask is empty");
        out.crop_box = enlarge_box(tight, kBoxEnlargeFactor, kBoxEnlargeFactor, out.image.width,
                                   out.image.height);
        if (need_mask) out.patch_mask = mask_to_patch_frame(full, out.crop_box);
    } else {
        throw AnnotationError("view has neither contour nor mask");
    }
    out.patch = resize_bilinear(minmax_normalize(crop(out.image, out.crop_box)), kPatchSize,
                                kPatchSize);
    return out;
}

inline std::string patch_file_name(const std::string& case_id, ViewName view, SourceTag source) {
    return case_id + "_" + to_string(view) + "_" + to_string(source) + ".f32";
}

// ---------------------------------------------------------------------------
// preprocess
// ---------------------------------------------------------------------------

struct PreprocessOutcome {
    fs::path index_path;
    int n_patches = 0;
    std::vector<std::string> failures; // "case/view/source: message"
};

inline PreprocessOutcome cmd_preprocess(const fs::path& manifest_path, const fs::path& out_dir) {
    const DatasetManifest manifest = load_manifest(manifest_path);
    if (manifest.cases.empty()) throw ConfigError("no cases in manifest");
    DirLock lock(out_dir);
    const fs::path manifest_dir = manifest_path.parent_path();

    PreprocessOutcome outcome;
    nlohmann::json patches = nlohmann::json::array();
    nlohmann::json failures = nlohmann::json::array();
    for (const ManifestCase& c : manifest.cases) {
        for (const ManifestView& v : c.views) {
            const std::string ident = c.case_id + "/" + to_string(v.view) + "/" +
                                      to_string(v.source);
            try {
                const PreparedView prepared = prepare_view(manifest_dir, v, false);
                const std::string file = patch_file_name(c.case_id, v.view, v.source);
                write_f32(out_dir / file, prepared.patch);
                patches.push_back({{"case_id", c.case_id},
                                   {"label", to_string(c.label)},
                                   {"view", to_string(v.view)},
                                   {"source", to_string(v.source)},
                                   {"file", file}});
                outcome.n_patches += 1;
            } catch (const Error& e) {
                outcome.failures.push_back(ident + ": " + e.what());
                failures.push_back({{"case", ident}, {"error", e.what()}});
            }
        }
    }
    nlohmann::json doc;
    doc["format"] = "sdcnn-patch-index";
    doc["version"] = 1;
    doc["patches"] = std::move(patches);
    doc["failures"] = std::move(failures);
    outcome.index_path = out_dir / "index.json";
    atomic_write_text(outcome.index_path, doc.dump(2) + "\n");
    return outcome;
}

// ---------------------------------------------------------------------------
// train-shallow
// ---------------------------------------------------------------------------

struct TrainShallowOptions {
    TrainConfig config;
    int pairs_per_image = 2500;
    int validation_cases = 5;
};

struct TrainShallowOutcome {
    fs::path model_path;
    fs::path history_path;
    int n_train_images = 0;
    int n_validation_images = 0;
    std::size_t n_train_pairs = 0;
    TrainHistory history;
    double validation_render_mse_mean = 0.0; // rendered-vs-true MSE over covered pixels
    double validation_render_mse_sd = 0.0;
};

namespace detail {

struct LeRecImage {
    std::string case_id;
    ViewName view = ViewName::CC;
    ImageGrid le_patch;
    ImageGrid rec_patch;
    TumorMask mask;
};

// Collects (LE, RECOMBINED) patch pairs per view for every case that carries
// them; a case with one of the two sources but not the other is an error.
inline std::vector<std::vector<LeRecImage>> collect_paired_cases(const DatasetManifest& manifest,
                                                                 const fs::path& manifest_dir) {
    std::vector<std::vector<LeRecImage>> cases;
    for (const ManifestCase& c : manifest.cases) {
        std::map<ViewName, const ManifestView*> le, rec;
        for (const ManifestView& v : c.views) {
            if (v.source == SourceTag::LE) le[v.view] = &v;
            if (v.source == SourceTag::RECOMBINED) rec[v.view] = &v;
        }
        if (le.empty() && rec.empty()) continue; // not CEDM material
        std::vector<LeRecImage> images;
        for (const auto& [view, le_view] : le) {
            auto it = rec.find(view);
            if (it == rec.end())
                throw DataError("case '" + c.case_id + "' has LE without RECOMBINED for view " +
                                to_string(view));
            const PreparedView le_prepared = prepare_view(manifest_dir, *le_view, true);
            const PreparedView rec_prepared = prepare_view(manifest_dir, *it->second, false);
            LeRecImage img;
            img.case_id = c.case_id;
            img.view = view;
            img.le_patch = le_prepared.patch;
            img.rec_patch = rec_prepared.patch;
            img.mask = le_prepared.patch_mask;
            images.push_back(std::move(img));
        }
        for (const auto& [view, rec_view] : rec)
            if (!le.count(view))
                throw DataError("case '" + c.case_id + "' has RECOMBINED without LE for view " +
                                to_string(view));
        cases.push_back(std::move(images));
    }
    return cases;
}

} // namespace detail

inline TrainShallowOutcome cmd_train_shallow(const fs::path& manifest_path, const fs::path& out_dir,
                                             const TrainShallowOptions& options) {
    const DatasetManifest manifest = load_manifest(manifest_path);
    const fs::path manifest_dir = manifest_path.parent_path();
    DirLock lock(out_dir);

    const auto cases = detail::collect_paired_cases(manifest, manifest_dir);
    if (cases.empty()) throw DataError("manifest has no cases with LE+RECOMBINED pairs");
    if (options.validation_cases < 0 ||
        options.validation_cases >= static_cast<int>(cases.size()))
        throw ConfigError("validation_cases must be < number of paired cases");
    if (options.pairs_per_image < 1) throw ConfigError("pairs_per_image must be >= 1");

    // case-level split so both views of a subject land on the same side
    std::vector<std::size_t> case_order(cases.size());
    for (std::size_t i = 0; i < case_order.size(); ++i) case_order[i] = i;
    Rng split_rng(derive_seed(options.config.rng_seed, 0x5eed));
    split_rng.shuffle(case_order);

    TrainShallowOutcome outcome;
    std::vector<PatchPair> train_pairs, val_pairs;
    std::vector<const detail::LeRecImage*> val_images;
    std::uint64_t image_counter = 0;
    for (std::size_t pos = 0; pos < case_order.size(); ++pos) {
        const bool is_val = pos < static_cast<std::size_t>(options.validation_cases);
        for (const detail::LeRecImage& img : cases[case_order[pos]]) {
            const std::uint64_t pair_seed = derive_seed(options.config.rng_seed, 0x1000 + image_counter);
            ++image_counter;
            auto pairs = sample_training_pairs(img.le_patch, img.rec_patch, img.mask,
                                               options.pairs_per_image, pair_seed);
            auto& dst = is_val ? val_pairs : train_pairs;
            dst.insert(dst.end(), std::make_move_iterator(pairs.begin()),
                       std::make_move_iterator(pairs.end()));
            if (is_val) {
                val_images.push_back(&img);
                outcome.n_validation_images += 1;
            } else {
                outcome.n_train_images += 1;
            }
        }
    }
    if (train_pairs.empty()) throw ConfigError("no training images left after validation split");
    outcome.n_train_pairs = train_pairs.size();

    const ShallowCnnModel initial = init_model(derive_seed(options.config.rng_seed, 0x1417));
    TrainResult result = train(initial, train_pairs, options.config, val_pairs);
    outcome.history = result.history;

    // paper-style validation: render each held-out LE patch and compare to the
    // true recombined patch over the covered region
    std::vector<double> render_mses;
    for (const detail::LeRecImage* img : val_images) {
        const SynthesisResult synth = render_virtual_image(result.model, img->le_patch);
        TumorMask covered(synth.width, synth.height);
        for (std::size_t i = 0; i < synth.coverage.size(); ++i)
            covered.data[i] = synth.coverage[i] > 0 ? 1 : 0;
        render_mses.push_back(image_mse(synth.virtual_image, img->rec_patch, covered));
    }
    if (!render_mses.empty()) {
        double mean = 0.0;
        for (double v : render_mses) mean += v;
        mean /= static_cast<double>(render_mses.size());
        outcome.validation_render_mse_mean = mean;
        if (render_mses.size() > 1) {
            double ss = 0.0;
            for (double v : render_mses) ss += (v - mean) * (v - mean);
            outcome.validation_render_mse_sd =
                std::sqrt(ss / static_cast<double>(render_mses.size() - 1));
        }
    }

    outcome.model_path = out_dir / "shallow_model.json";
    save_shallow_model(outcome.model_path, result.model, options.config);

    std::string csv = "epoch,train_loss,val_mse\n";
    for (std::size_t e = 0; e < result.history.train_loss.size(); ++e) {
        csv += std::to_string(e) + "," + detail::format_double(result.history.train_loss[e]) + ",";
        if (!std::isnan(result.history.val_mse[e]))
            csv += detail::format_double(result.history.val_mse[e]);
        csv += "\n";
    }
    outcome.history_path = out_dir / "history.csv";
    atomic_write_text(outcome.history_path, csv);

    nlohmann::json summary;
    summary["n_train_images"] = outcome.n_train_images;
    summary["n_validation_images"] = outcome.n_validation_images;
    summary["n_train_pairs"] = outcome.n_train_pairs;
    summary["epochs_run"] = result.history.train_loss.size();
    summary["final_train_loss"] =
        result.history.train_loss.empty() ? 0.0 : result.history.train_loss.back();
    if (!result.history.val_mse.empty() && !std::isnan(result.history.val_mse.back()))
        summary["final_val_mse"] = result.history.val_mse.back();
    if (!render_mses.empty()) {
        summary["validation_render_mse_mean"] = outcome.validation_render_mse_mean;
        summary["validation_render_mse_sd"] = outcome.validation_render_mse_sd;
    }
    atomic_write_text(out_dir / "train_summary.json", summary.dump(2) + "\n");
    return outcome;
}

// ---------------------------------------------------------------------------
// synthesize
// ---------------------------------------------------------------------------

enum class RenderRegion { Crop, Full };

struct SynthesizeOptions {
    SourceTag from_source = SourceTag::FFDM;
    int window_step = 1;
    RenderRegion region = RenderRegion::Crop;
};

struct SynthesizeOutcome {
    fs::path manifest_path; // augmented manifest
    int n_images = 0;
    std::vector<std::string> failures;
};

inline SynthesizeOutcome cmd_synthesize(const fs::path& manifest_path, const fs::path& model_path,
                                        const fs::path& out_dir, const SynthesizeOptions& options) {
    const DatasetManifest manifest = load_manifest(manifest_path);
    const ShallowCnnModel model = load_shallow_model(model_path);
    DirLock lock(out_dir);
    const fs::path manifest_dir = fs::absolute(manifest_path).parent_path();
    const fs::path out_abs = fs::absolute(out_dir);

    DatasetManifest augmented;
    augmented.dataset = manifest.dataset.empty() ? "virtual" : manifest.dataset + "+virtual";
    SynthesizeOutcome outcome;

    for (const ManifestCase& c : manifest.cases) {
        ManifestCase out_case;
        out_case.case_id = c.case_id;
        out_case.label = c.label;
        for (const ManifestView& v : c.views) {
            ManifestView rel = v;
            rel.image_path = fs::relative(manifest_dir / v.image_path, out_abs).generic_string();
            if (rel.mask_path)
                rel.mask_path = fs::relative(manifest_dir / *v.mask_path, out_abs).generic_string();
            out_case.views.push_back(std::move(rel));
        }
        for (const ManifestView& v : c.views) {
            if (v.source != options.from_source) continue;
            const std::string ident = c.case_id + "/" + to_string(v.view);
            try {
                ImageGrid input;
                Contour virtual_contour;
                if (options.region == RenderRegion::Crop) {
                    input = prepare_view(manifest_dir, v, false).patch;
                    const double hi = kPatchSize - 1;
                    virtual_contour.points = {Point{0.0, 0.0}, Point{hi, 0.0}, Point{hi, hi},
                                              Point{0.0, hi}};
                } else {
                    input = minmax_normalize(load_image(manifest_dir / v.image_path));
                    if (v.contour) {
                        validate_contour(*v.contour, input.width, input.height);
                        virtual_contour = *v.contour;
                    } else {
                        throw AnnotationError(
                            "full-image rendering requires a contour annotation");
                    }
                }
                const SynthesisResult synth =
                    render_virtual_image(model, input, options.window_step);

                const std::string stem = c.case_id + "_" + to_string(v.view) + "_VIRTUAL";
                write_f32(out_dir / (stem + ".f32"), synth.virtual_image);
                ImageGrid coverage(synth.width, synth.height);
                for (std::size_t i = 0; i < synth.coverage.size(); ++i)
                    coverage.data[i] = static_cast<double>(synth.coverage[i]);
                write_f32(out_dir / (stem + ".coverage.f32"), coverage);

                ManifestView virtual_view;
                virtual_view.view = v.view;
                virtual_view.source = SourceTag::VIRTUAL;
                virtual_view.image_path = stem + ".f32";
                virtual_view.contour = virtual_contour;
                out_case.views.push_back(std::move(virtual_view));
                outcome.n_images += 1;
            } catch (const Error& e) {
                outcome.failures.push_back(ident + ": " + e.what());
            }
        }
        augmented.cases.push_back(std::move(out_case));
    }
    if (outcome.n_images == 0 && outcome.failures.empty())
        throw DataError("no views with source " + std::string(to_string(options.from_source)) +
                        " found in manifest");

    outcome.manifest_path = out_dir / "manifest.json";
    save_manifest(outcome.manifest_path, augmented);
    return outcome;
}

// ---------------------------------------------------------------------------
// extract
// ---------------------------------------------------------------------------

struct PatchIndexEntry {
    std::string case_id;
    CaseLabel label = CaseLabel::Benign;
    ViewName view = ViewName::CC;
    SourceTag source = SourceTag::FFDM;
    std::string file;
};

inline std::vector<PatchIndexEntry> load_patch_index(const fs::path& index_path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_text_file(index_path));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad patch index '" + index_path.string() + "': " + e.what());
    }
    if (doc.value("format", "") != "sdcnn-patch-index")
        throw IoError("'" + index_path.string() + "' is not a patch index");
    std::vector<PatchIndexEntry> entries;
    for (const auto& p : doc.at("patches")) {
        PatchIndexEntry e;
        e.case_id = p.at("case_id").get<std::string>();
        e.label = label_from_string(p.at("label").get<std::string>());
        e.view = view_from_string(p.at("view").get<std::string>());
        e.source = source_from_string(p.at("source").get<std::string>());
        e.file = p.at("file").get<std::string>();
        entries.push_back(std::move(e));
    }
    return entries;
}

inline FeatureTable cmd_extract(const fs::path& index_path, const fs::path& weights_path,
                                const fs::path& out_csv) {
    const std::vector<PatchIndexEntry> entries = load_patch_index(index_path);
    if (entries.empty()) throw DataError("patch index is empty");
    const ResNetWeights weights = load_resnet_weights(weights_path);
    const fs::path index_dir = index_path.parent_path();

    // preserve first-appearance case order; demand a uniform (view, source)
    // set across cases
    std::vector<std::string> case_order;
    std::map<std::string, std::vector<const PatchIndexEntry*>> by_case;
    std::set<std::pair<ViewName, SourceTag>> all_pairs;
    for (const PatchIndexEntry& e : entries) {
        if (!by_case.count(e.case_id)) case_order.push_back(e.case_id);
        by_case[e.case_id].push_back(&e);
        all_pairs.insert({e.view, e.source});
    }
    std::vector<std::string> incomplete;
    for (const std::string& id : case_order) {
        std::set<std::pair<ViewName, SourceTag>> have;
        for (const PatchIndexEntry* e : by_case[id]) have.insert({e->view, e->source});
        if (have != all_pairs) incomplete.push_back(id);
    }
    if (!incomplete.empty()) {
        std::string msg = "cases missing declared (view, source) patches:";
        for (const std::string& id : incomplete) msg += " " + id;
        throw DataError(msg);
    }

    FeatureTable table;
    for (const std::string& id : case_order) {
        std::vector<FeatureVector> view_vectors;
        CaseLabel label = CaseLabel::Benign;
        for (const PatchIndexEntry* e : by_case[id]) {
            label = e->label;
            const ImageGrid patch = read_f32(index_dir / e->file);
            FeatureVector fv = extract_features(weights, patch);
            fv.source = e->source;
            fv.view = e->view;
            view_vectors.push_back(std::move(fv));
        }
        CaseFeatures features = case_feature_vector(std::move(view_vectors));
        if (table.tags.empty()) {
            table.tags = features.tags;
            table.matrix = FeatureMatrix(0, features.values.size());
        }
        table.case_ids.push_back(id);
        table.labels.push_back(label == CaseLabel::Cancer ? 1 : 0);
        table.matrix.values.insert(table.matrix.values.end(), features.values.begin(),
                                   features.values.end());
        table.matrix.rows += 1;
    }
    write_feature_csv(out_csv, table);
    return table;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateOptions {
    std::set<SourceTag> sources; // empty = use every column
    ExperimentConfig experiment;
};

inline nlohmann::json report_to_json(const EvalReport& report,
                                     const std::vector<std::string>& case_ids) {
    nlohmann::json doc;
    doc["format"] = "sdcnn-eval-report";
    doc["version"] = 1;
    doc["n_cases"] = report.n_cases;
    doc["scheme"] = report.scheme == FoldScheme::LOOCV
                        ? "loocv"
                        : "stratified:" + std::to_string(report.n_folds);
    doc["n_folds"] = report.n_folds;
    doc["threshold"] = report.threshold;

    auto metrics_json = [](const ConfusionMetrics& m) {
        nlohmann::json j;
        j["tp"] = m.tp;
        j["fp"] = m.fp;
        j["tn"] = m.tn;
        j["fn"] = m.fn;
        j["accuracy"] = m.accuracy;
        if (m.sensitivity) j["sensitivity"] = *m.sensitivity;
        if (m.specificity) j["specificity"] = *m.specificity;
        return j;
    };
    doc["pooled"] = metrics_json(report.pooled);
    doc["pooled"]["auc"] = report.pooled_roc.auc;
    if (report.fold_accuracy) {
        doc["folds_summary"]["accuracy_mean"] = report.fold_accuracy->mean;
        doc["folds_summary"]["accuracy_sd"] = report.fold_accuracy->sd;
    }
    if (report.fold_auc) {
        doc["folds_summary"]["auc_mean"] = report.fold_auc->mean;
        doc["folds_summary"]["auc_sd"] = report.fold_auc->sd;
    }
    nlohmann::json folds = nlohmann::json::array();
    for (const FoldOutcome& f : report.folds) {
        nlohmann::json fj = metrics_json(f.metrics);
        fj["fold"] = f.fold;
        if (f.auc) fj["auc"] = *f.auc;
        folds.push_back(std::move(fj));
    }
    doc["folds"] = std::move(folds);
    nlohmann::json scores = nlohmann::json::array();
    for (std::size_t i = 0; i < report.scores.size(); ++i)
        scores.push_back({{"case_id", case_ids[i]},
                          {"label", report.labels[i] ? "cancer" : "benign"},
                          {"score", report.scores[i]}});
    doc["scores"] = std::move(scores);
    doc["any_split"] = report.any_split;
    nlohmann::json contrib = nlohmann::json::array();
    for (const SourceContribution& c : report.contributions)
        contrib.push_back({{"source", to_string(c.source)},
                           {"n_features_used", c.n_features_used},
                           {"fraction", c.fraction}});
    doc["contributions"] = std::move(contrib);
    return doc;
}

inline EvalReport cmd_evaluate(const fs::path& csv_path, const fs::path& out_dir,
                               const EvaluateOptions& options) {
    FeatureTable table = read_feature_csv(csv_path);
    table = filter_sources(table, options.sources);
    DirLock lock(out_dir);

    const EvalReport report =
        run_experiment(table.matrix, table.labels, table.tags, options.experiment);

    atomic_write_text(out_dir / "report.json",
                      report_to_json(report, table.case_ids).dump(2) + "\n");

    // metrics.csv: pooled row, fold mean/sd rows, then one row per fold
    std::string metrics = "scope,accuracy,sensitivity,specificity,auc\n";
    auto metrics_row = [](const std::string& scope, const ConfusionMetrics& m,
                          std::optional<double> auc) {
        std::string row = scope + "," + detail::format_double(m.accuracy) + ",";
        if (m.sensitivity) row += detail::format_double(*m.sensitivity);
        row += ",";
        if (m.specificity) row += detail::format_double(*m.specificity);
        row += ",";
        if (auc) row += detail::format_double(*auc);
        return row + "\n";
    };
    metrics += metrics_row("pooled", report.pooled, report.pooled_roc.auc);
    if (report.fold_accuracy) {
        metrics += "fold_mean," + detail::format_double(report.fold_accuracy->mean) + ",,,";
        if (report.fold_auc) metrics += detail::format_double(report.fold_auc->mean);
        metrics += "\n";
        metrics += "fold_sd," + detail::format_double(report.fold_accuracy->sd) + ",,,";
        if (report.fold_auc) metrics += detail::format_double(report.fold_auc->sd);
        metrics += "\n";
    }
    for (const FoldOutcome& f : report.folds)
        metrics += metrics_row("fold_" + std::to_string(f.fold), f.metrics, f.auc);
    atomic_write_text(out_dir / "metrics.csv", metrics);

    // roc_points.csv on the fixed FPR grid: the vertically averaged fold
    // curve when folds define curves, otherwise the pooled curve
    std::string roc = "fpr,tpr\n";
    if (report.mean_roc_curve) {
        for (const RocPoint& p : report.mean_roc_curve->points)
            roc += detail::format_double(p.fpr) + "," + detail::format_double(p.tpr) + "\n";
    } else {
        const int n_grid = static_cast<int>(std::lround(1.0 / kMeanRocGridStep)) + 1;
        for (int g = 0; g < n_grid; ++g) {
            const double fpr = std::min(1.0, g * kMeanRocGridStep);
            roc += detail::format_double(fpr) + "," +
                   detail::format_double(detail::roc_tpr_at(report.pooled_roc.points, fpr)) + "\n";
        }
    }
    atomic_write_text(out_dir / "roc_points.csv", roc);

    std::string importance = "feature,importance\n";
    for (std::size_t c = 0; c < report.averaged_importance.size(); ++c)
        importance += tag_to_string(table.tags[c]) + "," +
                      detail::format_double(report.averaged_importance[c]) + "\n";
    atomic_write_text(out_dir / "importance.csv", importance);

    std::string contrib = "source,n_features_used,fraction\n";
    for (const SourceContribution& c : report.contributions)
        contrib += std::string(to_string(c.source)) + "," + std::to_string(c.n_features_used) +
                   "," + detail::format_double(c.fraction) + "\n";
    atomic_write_text(out_dir / "contribution.csv", contrib);
    return report;
}

// ---------------------------------------------------------------------------
// gen-random-weights
// ---------------------------------------------------------------------------

inline fs::path cmd_gen_random_weights(std::uint64_t seed, const fs::path& out_path) {
    if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
    save_resnet_weights(out_path, random_resnet_weights(seed));
    return out_path;
}

} // namespace sdcnn
