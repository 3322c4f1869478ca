#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "sdcnn/errors.hpp"
#include "sdcnn/image.hpp"
#include "sdcnn/rng.hpp"
#include "sdcnn/shallow_cnn.hpp"

namespace sdcnn {

// Binary grid congruent with its parent image; 1 = inside the lesion contour.
struct TumorMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;

    TumorMask() = default;
    TumorMask(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h, 0) {}

    std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }

    std::size_t positive_count() const {
        std::size_t n = 0;
        for (std::uint8_t v : data) n += v ? 1 : 0;
        return n;
    }
};

// Even-odd scanline fill of the contour polygon, sampled at integer pixel
// coordinates.
inline TumorMask mask_from_contour(const Contour& contour, int width, int height) {
    if (contour.points.size() < 3) throw AnnotationError("mask rasterization needs >= 3 points");
    TumorMask mask(width, height);
    const std::size_t n = contour.points.size();
    std::vector<double> xs;
    for (int y = 0; y < height; ++y) {
        xs.clear();
        const double py = static_cast<double>(y);
        for (std::size_t i = 0; i < n; ++i) {
            const Point& a = contour.points[i];
            const Point& b = contour.points[(i + 1) % n];
            if ((a.y <= py && b.y > py) || (b.y <= py && a.y > py)) {
                const double t = (py - a.y) / (b.y - a.y);
                xs.push_back(a.x + t * (b.x - a.x));
            }
        }
        std::sort(xs.begin(), xs.end());
        for (std::size_t i = 0; i + 1 < xs.size(); i += 2) {
            int x0 = static_cast<int>(std::ceil(xs[i]));
            int x1 = static_cast<int>(std::floor(xs[i + 1]));
            x0 = std::max(x0, 0);
            x1 = std::min(x1, width - 1);
            for (int x = x0; x <= x1; ++x) mask.at(x, y) = 1;
        }
    }
    return mask;
}

// Nearest-neighbor crop+resize of a mask through the same geometry as
// preprocess_view, for mask-annotated (rather than contour-annotated) views.
inline TumorMask mask_to_patch_frame(const TumorMask& mask, const BoundingBox& crop_box,
                                     int patch_w = kPatchSize, int patch_h = kPatchSize) {
    TumorMask out(patch_w, patch_h);
    const double sx = patch_w > 1 ? static_cast<double>(crop_box.width() - 1) / (patch_w - 1) : 0.0;
    const double sy = patch_h > 1 ? static_cast<double>(crop_box.height() - 1) / (patch_h - 1) : 0.0;
    for (int y = 0; y < patch_h; ++y) {
        const int my = crop_box.y_min + static_cast<int>(std::lround(y * sy));
        for (int x = 0; x < patch_w; ++x) {
            const int mx = crop_box.x_min + static_cast<int>(std::lround(x * sx));
            if (mx >= 0 && mx < mask.width && my >= 0 && my < mask.height)
                out.at(x, y) = mask.at(mx, my);
        }
    }
    return out;
}

// Draws n window centers uniformly with replacement from mask-positive pixels
// whose 15x15 input window fits in the image; the 3x3 target patch shares the
// same center. Deterministic given the seed.
inline std::vector<PatchPair> sample_training_pairs(const ImageGrid& input_img,
                                                    const ImageGrid& target_img,
                                                    const TumorMask& mask, int n,
                                                    std::uint64_t rng_seed) {
    if (!input_img.same_shape(target_img) || input_img.width != mask.width ||
        input_img.height != mask.height)
        throw ShapeError("sample_training_pairs requires congruent input/target/mask");
    if (n < 1) throw ConfigError("sample count must be >= 1");

    constexpr int half_in = kCnnInputSize / 2;   // 7
    constexpr int half_out = kCnnOutputSize / 2; // 1

    std::vector<std::pair<int, int>> centers;
    for (int y = half_in; y < mask.height - half_in; ++y)
        for (int x = half_in; x < mask.width - half_in; ++x)
            if (mask.at(x, y)) centers.emplace_back(x, y);
    if (centers.empty())
        throw AnnotationError("tumor mask has no admissible 15x15 window center");

    Rng rng(rng_seed);
    std::vector<PatchPair> pairs;
    pairs.reserve(n);
    for (int i = 0; i < n; ++i) {
        const auto [cx, cy] = centers[rng.uniform_index(centers.size())];
        PatchPair p;
        p.input = ImageGrid(kCnnInputSize, kCnnInputSize);
        for (int y = 0; y < kCnnInputSize; ++y)
            for (int x = 0; x < kCnnInputSize; ++x)
                p.input.at(x, y) = input_img.at(cx - half_in + x, cy - half_in + y);
        p.target = ImageGrid(kCnnOutputSize, kCnnOutputSize);
        for (int y = 0; y < kCnnOutputSize; ++y)
            for (int x = 0; x < kCnnOutputSize; ++x)
                p.target.at(x, y) = target_img.at(cx - half_out + x, cy - half_out + y);
        pairs.push_back(std::move(p));
    }
    return pairs;
}

struct SynthesisResult {
    ImageGrid virtual_image;   // averaged predictions; 0 where coverage is 0
    std::vector<int> coverage; // per-pixel count of contributing predictions
    int width = 0;
    int height = 0;

    int coverage_at(int x, int y) const { return coverage[static_cast<std::size_t>(y) * width + x]; }
};

namespace detail {

// Valid convolution chain of the shallow CNN over a whole image. By
// translation equivariance this produces, at chain position (qx, qy), exactly
// the value the per-window forward pass computes for output cell
// (qx - wx, qy - wy) of any window at (wx, wy) containing it; summation order
// matches forward_trace, so the values are bit-identical.
inline ImageGrid shallow_cnn_full_chain(const ShallowCnnModel& m, const ImageGrid& img) {
    constexpr int K = kCnnKernelSize, C = kCnnChannels;
    const int w1 = img.width - K + 1, h1 = img.height - K + 1;
    const int w2 = w1 - K + 1, h2 = h1 - K + 1;

    std::vector<double> a1(static_cast<std::size_t>(C) * h1 * w1);
    for (int o = 0; o < C; ++o) {
        const double* ker = &m.layer1.kernels[static_cast<std::size_t>(o) * K * K];
        const double b = m.layer1.biases[o];
        double* plane = &a1[static_cast<std::size_t>(o) * h1 * w1];
        for (int y = 0; y < h1; ++y)
            for (int x = 0; x < w1; ++x) {
                double acc = b;
                for (int u = 0; u < K; ++u) {
                    const double* row = &img.data[static_cast<std::size_t>(y + u) * img.width + x];
                    const double* kr = &ker[u * K];
                    for (int v = 0; v < K; ++v) acc += kr[v] * row[v];
                }
                plane[static_cast<std::size_t>(y) * w1 + x] = acc > 0.0 ? acc : 0.0;
            }
    }

    std::vector<double> a2(static_cast<std::size_t>(C) * h2 * w2);
    for (int o = 0; o < C; ++o) {
        const double b = m.layer2.biases[o];
        double* plane = &a2[static_cast<std::size_t>(o) * h2 * w2];
        for (int y = 0; y < h2; ++y)
            for (int x = 0; x < w2; ++x) {
                double acc = b;
                for (int i = 0; i < C; ++i) {
                    const double* in_plane = &a1[static_cast<std::size_t>(i) * h1 * w1];
                    const double* ker =
                        &m.layer2.kernels[(static_cast<std::size_t>(o) * C + i) * K * K];
                    for (int u = 0; u < K; ++u) {
                        const double* row = &in_plane[static_cast<std::size_t>(y + u) * w1 + x];
                        const double* kr = &ker[u * K];
                        for (int v = 0; v < K; ++v) acc += kr[v] * row[v];
                    }
                }
                plane[static_cast<std::size_t>(y) * w2 + x] = acc > 0.0 ? acc : 0.0;
            }
    }

    ImageGrid out(w2, h2);
    for (int y = 0; y < h2; ++y)
        for (int x = 0; x < w2; ++x) {
            double acc = m.output_layer.biases[0];
            for (int i = 0; i < C; ++i)
                acc += m.output_layer.kernels[i] *
                       a2[(static_cast<std::size_t>(i) * h2 + y) * w2 + x];
            out.at(x, y) = acc;
        }
    return out;
}

} // namespace detail

// Slides the 15x15 window over the image (top-left positions on a `step`
// lattice starting at 0), places each predicted 3x3 patch centered at the
// window center, and averages overlapping predictions per pixel. Pixels no
// window reaches stay 0 with coverage 0.
inline SynthesisResult render_virtual_image(const ShallowCnnModel& model, const ImageGrid& input,
                                            int step = 1) {
    if (input.width < kCnnInputSize || input.height < kCnnInputSize)
        throw ShapeError("render_virtual_image input smaller than the 15x15 window");
    if (step < 1) throw ConfigError("window step must be >= 1");

    const ImageGrid chain = detail::shallow_cnn_full_chain(model, input);

    SynthesisResult result;
    result.width = input.width;
    result.height = input.height;
    result.coverage.assign(input.size(), 0);
    std::vector<double> sum(input.size(), 0.0);

    constexpr int center_off = kCnnInputSize / 2 - kCnnOutputSize / 2; // 6
    const int last_wx = input.width - kCnnInputSize;
    const int last_wy = input.height - kCnnInputSize;
    for (int wy = 0; wy <= last_wy; wy += step)
        for (int wx = 0; wx <= last_wx; wx += step)
            for (int j = 0; j < kCnnOutputSize; ++j)
                for (int i = 0; i < kCnnOutputSize; ++i) {
                    const int px = wx + center_off + i;
                    const int py = wy + center_off + j;
                    const std::size_t idx = static_cast<std::size_t>(py) * input.width + px;
                    sum[idx] += chain.at(wx + i, wy + j);
                    result.coverage[idx] += 1;
                }

    result.virtual_image = ImageGrid(input.width, input.height);
    for (std::size_t i = 0; i < sum.size(); ++i)
        if (result.coverage[i] > 0)
            result.virtual_image.data[i] = sum[i] / static_cast<double>(result.coverage[i]);
    return result;
}

// Mean squared intensity difference over the whole image.
inline double image_mse(const ImageGrid& a, const ImageGrid& b) {
    if (!a.same_shape(b)) throw ShapeError("image_mse shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.size());
}

// Mean squared intensity difference over mask-positive pixels.
inline double image_mse(const ImageGrid& a, const ImageGrid& b, const TumorMask& region) {
    if (!a.same_shape(b) || a.width != region.width || a.height != region.height)
        throw ShapeError("image_mse shape mismatch");
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!region.data[i]) continue;
        const double d = a.data[i] - b.data[i];
        acc += d * d;
        ++n;
    }
    if (n == 0) throw DomainError("image_mse region is empty");
    return acc / static_cast<double>(n);
}

} // namespace sdcnn
