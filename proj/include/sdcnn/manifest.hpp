#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdcnn/errors.hpp"
#include "sdcnn/evaluation.hpp"
#include "sdcnn/gbt.hpp"
#include "sdcnn/image.hpp"
#include "sdcnn/image_io.hpp"
#include "sdcnn/shallow_cnn.hpp"

namespace sdcnn {

// One annotated image of a case. Paths are stored relative to the manifest
// file's directory. A view carries either an explicit contour polygon or the
// path of a binary lesion mask.
struct ManifestView {
    ViewName view = ViewName::CC;
    SourceTag source = SourceTag::FFDM;
    std::string image_path;
    std::optional<Contour> contour;
    std::optional<std::string> mask_path;
};

struct ManifestCase {
    std::string case_id;
    CaseLabel label = CaseLabel::Benign;
    std::vector<ManifestView> views;
};

struct DatasetManifest {
    std::string dataset;
    std::vector<ManifestCase> cases;
};

inline nlohmann::json manifest_to_json(const DatasetManifest& manifest) {
    nlohmann::json doc;
    doc["format"] = "sdcnn-dataset-manifest";
    doc["version"] = 1;
    doc["dataset"] = manifest.dataset;
    nlohmann::json cases = nlohmann::json::array();
    for (const ManifestCase& c : manifest.cases) {
        nlohmann::json views = nlohmann::json::array();
        for (const ManifestView& v : c.views) {
            nlohmann::json view;
            view["view"] = to_string(v.view);
            view["source"] = to_string(v.source);
            view["image"] = v.image_path;
            if (v.contour) {
                nlohmann::json pts = nlohmann::json::array();
                for (const Point& p : v.contour->points) pts.push_back({p.x, p.y});
                view["contour"] = std::move(pts);
            }
            if (v.mask_path) view["mask"] = *v.mask_path;
            views.push_back(std::move(view));
        }
        cases.push_back({{"case_id", c.case_id}, {"label", to_string(c.label)},
                         {"views", std::move(views)}});
    }
    doc["cases"] = std::move(cases);
    return doc;
}

inline void save_manifest(const fs::path& path, const DatasetManifest& manifest) {
    atomic_write_text(path, manifest_to_json(manifest).dump(2) + "\n");
}

inline DatasetManifest load_manifest(const fs::path& path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad manifest '" + path.string() + "': " + e.what());
    }
    if (doc.value("format", "") != "sdcnn-dataset-manifest")
        throw IoError("'" + path.string() + "' is not a dataset manifest");
    DatasetManifest manifest;
    manifest.dataset = doc.value("dataset", "");
    std::set<std::string> seen_ids;
    for (const auto& cj : doc.at("cases")) {
        ManifestCase c;
        c.case_id = cj.at("case_id").get<std::string>();
        if (!seen_ids.insert(c.case_id).second)
            throw DataError("duplicate case_id '" + c.case_id + "' in manifest");
        c.label = label_from_string(cj.at("label").get<std::string>());
        for (const auto& vj : cj.at("views")) {
            ManifestView v;
            v.view = view_from_string(vj.at("view").get<std::string>());
            v.source = source_from_string(vj.at("source").get<std::string>());
            v.image_path = vj.at("image").get<std::string>();
            if (vj.contains("contour")) {
                Contour contour;
                for (const auto& pj : vj["contour"])
                    contour.points.push_back(Point{pj.at(0).get<double>(), pj.at(1).get<double>()});
                v.contour = std::move(contour);
            }
            if (vj.contains("mask")) v.mask_path = vj["mask"].get<std::string>();
            if (!v.contour && !v.mask_path)
                throw DataError("case '" + c.case_id + "' has a view without contour or mask");
            c.views.push_back(std::move(v));
        }
        if (c.views.empty()) throw DataError("case '" + c.case_id + "' has no views");
        manifest.cases.push_back(std::move(c));
    }
    return manifest;
}

// All randomness in a pipeline run flows from these explicit seeds.
struct PipelineSeeds {
    std::uint64_t master = 1;
    std::uint64_t shallow = 2;
    std::uint64_t gbt = 3;
};

struct PipelineConfig {
    PipelineSeeds seeds;
    TrainConfig shallow_train;
    int pairs_per_image = 2500;
    int validation_cases = 5;
    GbtConfig gbt;
    FoldScheme fold_scheme = FoldScheme::LOOCV;
    int fold_k = 10;
    double threshold = 0.5;
    std::string weights_path;
    std::string out_dir;
};

inline FoldScheme fold_scheme_from_string(const std::string& s, int* k_out) {
    if (s == "loocv") return FoldScheme::LOOCV;
    const std::string prefix = "stratified:";
    if (s.rfind(prefix, 0) == 0) {
        try {
            *k_out = std::stoi(s.substr(prefix.size()));
        } catch (const std::logic_error&) {
            throw ConfigError("bad fold scheme '" + s + "'");
        }
        return FoldScheme::StratifiedKFold;
    }
    throw ConfigError("unknown fold scheme '" + s + "' (expected loocv or stratified:<k>)");
}

inline PipelineConfig load_pipeline_config(const fs::path& path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad config '" + path.string() + "': " + e.what());
    }
    PipelineConfig cfg;
    if (doc.contains("seeds")) {
        const auto& s = doc["seeds"];
        cfg.seeds.master = s.value("master", cfg.seeds.master);
        cfg.seeds.shallow = s.value("shallow", cfg.seeds.shallow);
        cfg.seeds.gbt = s.value("gbt", cfg.seeds.gbt);
    }
    if (doc.contains("shallow_train")) {
        const auto& t = doc["shallow_train"];
        cfg.shallow_train.learning_rate = t.value("learning_rate", cfg.shallow_train.learning_rate);
        cfg.shallow_train.batch_size = t.value("batch_size", cfg.shallow_train.batch_size);
        cfg.shallow_train.epochs = t.value("epochs", cfg.shallow_train.epochs);
        cfg.shallow_train.early_stop_patience =
            t.value("early_stop_patience", cfg.shallow_train.early_stop_patience);
        cfg.pairs_per_image = t.value("pairs_per_image", cfg.pairs_per_image);
        cfg.validation_cases = t.value("validation_cases", cfg.validation_cases);
    }
    if (doc.contains("gbt")) {
        const auto& g = doc["gbt"];
        cfg.gbt.n_trees = g.value("n_trees", cfg.gbt.n_trees);
        cfg.gbt.max_depth = g.value("max_depth", cfg.gbt.max_depth);
        cfg.gbt.min_samples_leaf = g.value("min_samples_leaf", cfg.gbt.min_samples_leaf);
        cfg.gbt.max_features = g.value("max_features", cfg.gbt.max_features);
        cfg.gbt.learning_rate = g.value("learning_rate", cfg.gbt.learning_rate);
        cfg.gbt.weight_benign = g.value("weight_benign", cfg.gbt.weight_benign);
        cfg.gbt.weight_cancer = g.value("weight_cancer", cfg.gbt.weight_cancer);
    }
    if (doc.contains("folds"))
        cfg.fold_scheme = fold_scheme_from_string(doc["folds"].get<std::string>(), &cfg.fold_k);
    cfg.threshold = doc.value("threshold", cfg.threshold);
    cfg.weights_path = doc.value("weights", cfg.weights_path);
    cfg.out_dir = doc.value("out", cfg.out_dir);
    cfg.shallow_train.rng_seed = cfg.seeds.shallow;
    cfg.gbt.rng_seed = cfg.seeds.gbt;
    return cfg;
}

} // namespace sdcnn
