#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "sdcnn/errors.hpp"

namespace sdcnn {

// Row-major grid of real intensities. Raw loads carry whatever scale the
// source used; after minmax_normalize values live in [0, 1].
struct ImageGrid {
    int width = 0;
    int height = 0;
    std::vector<double> data;

    ImageGrid() = default;
    ImageGrid(int w, int h, double fill = 0.0)
        : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {
        if (w < 1 || h < 1) throw ShapeError("ImageGrid dimensions must be >= 1");
    }

    double& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    double at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }

    std::size_t size() const { return data.size(); }
    bool same_shape(const ImageGrid& other) const {
        return width == other.width && height == other.height;
    }
};

struct Point {
    double x = 0.0;
    double y = 0.0;
};

struct Contour {
    std::vector<Point> points;
};

// Inclusive integer pixel box.
struct BoundingBox {
    int x_min = 0;
    int y_min = 0;
    int x_max = 0;
    int y_max = 0;

    int width() const { return x_max - x_min + 1; }
    int height() const { return y_max - y_min + 1; }

    bool operator==(const BoundingBox&) const = default;
};

enum class SourceTag { LE, FFDM, RECOMBINED, VIRTUAL };
enum class ViewName { CC, MLO };
enum class CaseLabel { Benign, Cancer };

inline const char* to_string(SourceTag s) {
    switch (s) {
        case SourceTag::LE: return "LE";
        case SourceTag::FFDM: return "FFDM";
        case SourceTag::RECOMBINED: return "RECOMBINED";
        case SourceTag::VIRTUAL: return "VIRTUAL";
    }
    return "?";
}

inline const char* to_string(ViewName v) { return v == ViewName::CC ? "CC" : "MLO"; }

inline const char* to_string(CaseLabel l) { return l == CaseLabel::Benign ? "benign" : "cancer"; }

inline SourceTag source_from_string(const std::string& s) {
    if (s == "LE") return SourceTag::LE;
    if (s == "FFDM") return SourceTag::FFDM;
    if (s == "RECOMBINED") return SourceTag::RECOMBINED;
    if (s == "VIRTUAL") return SourceTag::VIRTUAL;
    throw DataError("unknown source tag '" + s + "'");
}

inline ViewName view_from_string(const std::string& s) {
    if (s == "CC") return ViewName::CC;
    if (s == "MLO") return ViewName::MLO;
    throw DataError("unknown view name '" + s + "'");
}

inline CaseLabel label_from_string(const std::string& s) {
    if (s == "benign") return CaseLabel::Benign;
    if (s == "cancer") return CaseLabel::Cancer;
    throw DataError("unknown label '" + s + "' (expected benign|cancer)");
}

struct CaseView {
    ViewName view = ViewName::CC;
    SourceTag source = SourceTag::FFDM;
    ImageGrid image;
    Contour contour;
};

struct CaseRecord {
    std::string case_id;
    CaseLabel label = CaseLabel::Benign;
    std::vector<CaseView> views;
};

// Side of the square patch every lesion is resized to before feature
// extraction, and the width/height enlargement applied to the tight box.
inline constexpr int kPatchSize = 224;
inline constexpr double kBoxEnlargeFactor = 1.2;

// --------------------------------------------------------------------------
// Preprocessing chain
// --------------------------------------------------------------------------

// Tight axis-aligned integer box over all contour points. Fractional
// coordinates are snapped outward so every point stays inside the box.
inline BoundingBox bounding_box_from_contour(const Contour& contour) {
    if (contour.points.empty())
        throw AnnotationError("cannot compute bounding box of an empty contour");
    double xmin = std::numeric_limits<double>::infinity();
    double ymin = std::numeric_limits<double>::infinity();
    double xmax = -std::numeric_limits<double>::infinity();
    double ymax = -std::numeric_limits<double>::infinity();
    for (const Point& p : contour.points) {
        xmin = std::min(xmin, p.x);
        ymin = std::min(ymin, p.y);
        xmax = std::max(xmax, p.x);
        ymax = std::max(ymax, p.y);
    }
    BoundingBox box;
    box.x_min = static_cast<int>(std::floor(xmin));
    box.y_min = static_cast<int>(std::floor(ymin));
    box.x_max = static_cast<int>(std::ceil(xmax));
    box.y_max = static_cast<int>(std::ceil(ymax));
    return box;
}

// Real-valued center expansion, before rounding/clamping. Exposed separately
// so the exact area-ratio contract can be checked on reals.
struct RealBox {
    double x_min, y_min, x_max, y_max;
    double width() const { return x_max - x_min + 1.0; }
    double height() const { return y_max - y_min + 1.0; }
};

inline RealBox enlarge_box_real(const BoundingBox& box, double factor_w, double factor_h) {
    if (factor_w < 1.0 || factor_h < 1.0)
        throw ConfigError("enlargement factors must be >= 1");
    const double cx = 0.5 * (box.x_min + box.x_max);
    const double cy = 0.5 * (box.y_min + box.y_max);
    const double half_w = 0.5 * (factor_w * box.width() - 1.0);
    const double half_h = 0.5 * (factor_h * box.height() - 1.0);
    return RealBox{cx - half_w, cy - half_h, cx + half_w, cy + half_h};
}

// Scales the box about its center, rounds outward, clamps to image bounds.
inline BoundingBox enlarge_box(const BoundingBox& box, double factor_w, double factor_h,
                               int image_width, int image_height) {
    const RealBox r = enlarge_box_real(box, factor_w, factor_h);
    BoundingBox out;
    out.x_min = std::max(0, static_cast<int>(std::floor(r.x_min)));
    out.y_min = std::max(0, static_cast<int>(std::floor(r.y_min)));
    out.x_max = std::min(image_width - 1, static_cast<int>(std::ceil(r.x_max)));
    out.y_max = std::min(image_height - 1, static_cast<int>(std::ceil(r.y_max)));
    return out;
}

inline ImageGrid crop(const ImageGrid& image, const BoundingBox& box) {
    if (box.x_min < 0 || box.y_min < 0 || box.x_max >= image.width || box.y_max >= image.height ||
        box.x_min > box.x_max || box.y_min > box.y_max)
        throw BoundsError("crop box outside image bounds");
    ImageGrid out(box.width(), box.height());
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            out.at(x, y) = image.at(box.x_min + x, box.y_min + y);
    return out;
}

// (v - min) / (max - min); a constant image maps to all zeros.
inline ImageGrid minmax_normalize(const ImageGrid& image) {
    const auto [mn_it, mx_it] = std::minmax_element(image.data.begin(), image.data.end());
    const double mn = *mn_it, mx = *mx_it;
    ImageGrid out(image.width, image.height);
    if (mx == mn) return out;
    const double inv = 1.0 / (mx - mn);
    for (std::size_t i = 0; i < image.size(); ++i) out.data[i] = (image.data[i] - mn) * inv;
    return out;
}

// Bilinear resize with corner-aligned sampling: output pixel i maps to source
// coordinate i * (in - 1) / (out - 1). A 1-pixel output samples the center.
inline ImageGrid resize_bilinear(const ImageGrid& image, int out_w, int out_h) {
    if (out_w < 1 || out_h < 1) throw ShapeError("resize target must be >= 1x1");
    ImageGrid out(out_w, out_h);
    const double sx = out_w > 1 ? static_cast<double>(image.width - 1) / (out_w - 1) : 0.0;
    const double sy = out_h > 1 ? static_cast<double>(image.height - 1) / (out_h - 1) : 0.0;
    for (int y = 0; y < out_h; ++y) {
        const double fy = out_h > 1 ? y * sy : 0.5 * (image.height - 1);
        int y0 = static_cast<int>(std::floor(fy));
        y0 = std::clamp(y0, 0, image.height - 1);
        const int y1 = std::min(y0 + 1, image.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double fx = out_w > 1 ? x * sx : 0.5 * (image.width - 1);
            int x0 = static_cast<int>(std::floor(fx));
            x0 = std::clamp(x0, 0, image.width - 1);
            const int x1 = std::min(x0 + 1, image.width - 1);
            const double wx = fx - x0;
            const double top = image.at(x0, y0) * (1.0 - wx) + image.at(x1, y0) * wx;
            const double bot = image.at(x0, y1) * (1.0 - wx) + image.at(x1, y1) * wx;
            out.at(x, y) = top * (1.0 - wy) + bot * wy;
        }
    }
    return out;
}

// Box actually used to cut the lesion region out of a view.
inline BoundingBox lesion_crop_box(const Contour& contour, int image_width, int image_height) {
    const BoundingBox tight = bounding_box_from_contour(contour);
    return enlarge_box(tight, kBoxEnlargeFactor, kBoxEnlargeFactor, image_width, image_height);
}

// Full chain: tight box -> 1.2x/1.2x enlargement -> crop -> minmax -> 224x224.
inline ImageGrid preprocess_view(const ImageGrid& image, const Contour& contour) {
    const BoundingBox box = lesion_crop_box(contour, image.width, image.height);
    return resize_bilinear(minmax_normalize(crop(image, box)), kPatchSize, kPatchSize);
}

// Maps a contour given in source-image coordinates into the coordinate frame
// of the patch produced by preprocess_view (crop shift + corner-aligned
// resize scaling).
inline Contour contour_to_patch_frame(const Contour& contour, const BoundingBox& crop_box,
                                      int patch_w = kPatchSize, int patch_h = kPatchSize) {
    const double sx =
        crop_box.width() > 1 ? static_cast<double>(patch_w - 1) / (crop_box.width() - 1) : 0.0;
    const double sy =
        crop_box.height() > 1 ? static_cast<double>(patch_h - 1) / (crop_box.height() - 1) : 0.0;
    Contour out;
    out.points.reserve(contour.points.size());
    for (const Point& p : contour.points)
        out.points.push_back(Point{(p.x - crop_box.x_min) * sx, (p.y - crop_box.y_min) * sy});
    return out;
}

inline bool contour_inside_image(const Contour& contour, int image_width, int image_height) {
    for (const Point& p : contour.points)
        if (p.x < 0.0 || p.y < 0.0 || p.x > image_width - 1 || p.y > image_height - 1)
            return false;
    return true;
}

// Manifest-level validity: >= 3 points, all inside the parent image.
inline void validate_contour(const Contour& contour, int image_width, int image_height) {
    if (contour.points.size() < 3)
        throw AnnotationError("contour needs at least 3 points");
    if (!contour_inside_image(contour, image_width, image_height))
        throw AnnotationError("contour point outside image bounds");
}

} // namespace sdcnn
