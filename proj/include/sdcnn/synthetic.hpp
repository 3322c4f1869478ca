#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sdcnn/image.hpp"
#include "sdcnn/image_io.hpp"
#include "sdcnn/manifest.hpp"
#include "sdcnn/rng.hpp"

namespace sdcnn {

// Synthetic mammogram-like fixture. CEDM-style cases carry LE + RECOMBINED
// pairs (shallow-CNN training material); FFDM-style cases carry FFDM only
// (classification material). The recombined channel is a pointwise contrast
// enhancement of LE that suppresses background tissue and keeps only the
// brightest lesion cores, so part of the label signal lives in the
// recombined/virtual channel: cancer cores clear the enhancement threshold,
// benign cores barely do.
struct SyntheticDatasetOptions {
    int n_cedm_cases = 10;
    int n_ffdm_cases = 40;
    int views_per_case = 2; // 1 = CC only, 2 = CC and MLO
    int image_size = 96;
    std::uint64_t seed = 1;
};

namespace detail {

struct LesionSpec {
    double cx, cy;
    double rx, ry;
    double core_amp;
    double noise_sigma;
};

inline double synthetic_enhancement(double v) {
    const double e = (v - 0.55) * 2.0;
    return e > 0.0 ? std::min(e, 1.0) : 0.0;
}

inline ImageGrid synthetic_background(int size, Rng& rng) {
    ImageGrid img(size, size, 0.18);
    // low-frequency illumination field
    const double px = rng.uniform(0.0, 6.283), py = rng.uniform(0.0, 6.283);
    const double fx = rng.uniform(0.02, 0.05), fy = rng.uniform(0.02, 0.05);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            img.at(x, y) += 0.05 * (1.0 + std::sin(fx * x + px) * std::sin(fy * y + py));
    // dense-tissue clutter blobs; bright enough to confuse raw intensities
    // but below the enhancement threshold
    const int n_blobs = 3 + static_cast<int>(rng.uniform_index(3));
    for (int b = 0; b < n_blobs; ++b) {
        const double bx = rng.uniform(0.1, 0.9) * size;
        const double by = rng.uniform(0.1, 0.9) * size;
        const double sigma = rng.uniform(6.0, 14.0);
        const double amp = rng.uniform(0.08, 0.20);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const double d2 = (x - bx) * (x - bx) + (y - by) * (y - by);
                img.at(x, y) += amp * std::exp(-d2 / (2.0 * sigma * sigma));
            }
    }
    return img;
}

inline void add_lesion(ImageGrid& img, const LesionSpec& lesion, Rng& rng) {
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            const double dx = (x - lesion.cx) / lesion.rx;
            const double dy = (y - lesion.cy) / lesion.ry;
            const double r = std::sqrt(dx * dx + dy * dy);
            if (r < 1.0) {
                // soft-edged plateau
                const double profile = 0.5 * (1.0 + std::cos(3.14159265358979 * std::min(r, 1.0)));
                img.at(x, y) += lesion.core_amp * profile;
            }
        }
    for (double& v : img.data) {
        v += rng.normal(0.0, lesion.noise_sigma);
        v = std::clamp(v, 0.0, 1.0);
    }
}

inline Contour ellipse_contour(const LesionSpec& lesion, int image_size) {
    Contour contour;
    const int n = 24;
    for (int i = 0; i < n; ++i) {
        const double theta = 6.283185307179586 * i / n;
        double x = lesion.cx + 1.2 * lesion.rx * std::cos(theta);
        double y = lesion.cy + 1.2 * lesion.ry * std::sin(theta);
        x = std::clamp(x, 0.0, static_cast<double>(image_size - 1));
        y = std::clamp(y, 0.0, static_cast<double>(image_size - 1));
        contour.points.push_back(Point{x, y});
    }
    return contour;
}

} // namespace detail

// Writes images/ (16-bit PGM, 14-bit range) plus manifest.json; returns the
// manifest path. Fully deterministic given the seed.
inline fs::path make_synthetic_dataset(const fs::path& out_dir,
                                       const SyntheticDatasetOptions& options) {
    if (options.n_cedm_cases < 0 || options.n_ffdm_cases < 0 ||
        options.n_cedm_cases + options.n_ffdm_cases < 1)
        throw ConfigError("synthetic dataset needs at least one case");
    if (options.views_per_case < 1 || options.views_per_case > 2)
        throw ConfigError("views_per_case must be 1 or 2");
    if (options.image_size < 48) throw ConfigError("image_size must be >= 48");

    fs::create_directories(out_dir / "images");
    Rng rng(options.seed);
    DatasetManifest manifest;
    manifest.dataset = "synthetic";

    const int size = options.image_size;
    const int total = options.n_cedm_cases + options.n_ffdm_cases;
    for (int i = 0; i < total; ++i) {
        const bool cedm = i < options.n_cedm_cases;
        ManifestCase c;
        c.case_id = (cedm ? "cedm" : "ffdm") + std::string("-") +
                    std::to_string(cedm ? i : i - options.n_cedm_cases);
        c.label = (i % 2 == 0) ? CaseLabel::Benign : CaseLabel::Cancer;

        for (int v = 0; v < options.views_per_case; ++v) {
            const ViewName view = v == 0 ? ViewName::CC : ViewName::MLO;
            detail::LesionSpec lesion;
            lesion.cx = size * rng.uniform(0.35, 0.65);
            lesion.cy = size * rng.uniform(0.35, 0.65);
            lesion.rx = rng.uniform(0.13, 0.19) * size;
            lesion.ry = rng.uniform(0.13, 0.19) * size;
            lesion.noise_sigma = 0.01;
            // benign cores sit near the enhancement threshold, cancer cores
            // well above it; raw intensities overlap with clutter blobs
            lesion.core_amp = c.label == CaseLabel::Cancer ? rng.uniform(0.38, 0.46)
                                                           : rng.uniform(0.24, 0.32);

            ImageGrid le = detail::synthetic_background(size, rng);
            detail::add_lesion(le, lesion, rng);
            const Contour contour = detail::ellipse_contour(lesion, size);

            auto write_view = [&](SourceTag source, const ImageGrid& img) {
                const std::string name = c.case_id + "_" + to_string(view) + "_" +
                                         to_string(source) + ".pgm";
                write_pgm16(out_dir / "images" / name, [&img] {
                    ImageGrid scaled = img;
                    for (double& p : scaled.data) p *= 16383.0;
                    return scaled;
                }());
                ManifestView mv;
                mv.view = view;
                mv.source = source;
                mv.image_path = "images/" + name;
                mv.contour = contour;
                c.views.push_back(std::move(mv));
            };

            if (cedm) {
                ImageGrid rec(size, size);
                for (std::size_t p = 0; p < le.size(); ++p)
                    rec.data[p] = detail::synthetic_enhancement(le.data[p]);
                write_view(SourceTag::LE, le);
                write_view(SourceTag::RECOMBINED, rec);
            } else {
                write_view(SourceTag::FFDM, le);
            }
        }
        manifest.cases.push_back(std::move(c));
    }

    const fs::path manifest_path = out_dir / "manifest.json";
    save_manifest(manifest_path, manifest);

    // per-modality manifests, mirroring the two-dataset workflow (CEDM
    // training material vs FFDM classification material)
    DatasetManifest cedm, ffdm;
    cedm.dataset = manifest.dataset + "-cedm";
    ffdm.dataset = manifest.dataset + "-ffdm";
    for (const ManifestCase& c : manifest.cases)
        (c.case_id.rfind("cedm", 0) == 0 ? cedm : ffdm).cases.push_back(c);
    if (!cedm.cases.empty()) save_manifest(out_dir / "cedm_manifest.json", cedm);
    if (!ffdm.cases.empty()) save_manifest(out_dir / "ffdm_manifest.json", ffdm);
    return manifest_path;
}

} // namespace sdcnn
