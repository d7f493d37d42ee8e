#pragma once

#include <optional>
#include <vector>

#include "mildnet/dataset.hpp"
#include "mildnet/image.hpp"
#include "mildnet/model.hpp"
#include "mildnet/morphology.hpp"

// Inference over plain images. Images matching the configured input size run
// through a single forward pass; larger images run as overlapping tiles of
// the input size (stride = half a tile) with each pixel taken from the tile
// whose center is nearest, so stitching is deterministic.

namespace mild {

// Both softmax channels are kept so downstream aggregation can verify
// normalization; channel fg is the foreground.
struct Prob2 {
    Grid fg, bg;
};

struct BranchProbs {
    Prob2 gland, contour;
    std::optional<Prob2> lumen, lumen_contour;
};

namespace detail {

inline Prob2 prob2_from(const Tensor& t, int n = 0) {
    return Prob2{tensor_channel_to_grid(t, n, 1), tensor_channel_to_grid(t, n, 0)};
}

inline Prob2 make_prob2(int h, int w) { return Prob2{make_grid(h, w), make_grid(h, w)}; }

}  // namespace detail

inline BranchProbs infer_single(const Model& model, const ImageRGB& image) {
    SegmentationOutput out = model.forward(image_to_tensor(image));
    BranchProbs p;
    p.gland = detail::prob2_from(*out.gland_prob);
    p.contour = detail::prob2_from(*out.contour_prob);
    if (model.config().variant == Variant::plus) {
        p.lumen = detail::prob2_from(*out.lumen_prob);
        p.lumen_contour = detail::prob2_from(*out.lumen_contour_prob);
    }
    return p;
}

namespace detail {

// nearest tile center assignment per axis
inline std::vector<int> tile_assignment(const std::vector<int>& origins, int extent, int tile) {
    std::vector<int> assign(static_cast<size_t>(extent));
    for (int p = 0; p < extent; ++p) {
        int best = 0;
        double best_d = 1e30;
        for (size_t i = 0; i < origins.size(); ++i) {
            double center = origins[i] + (tile - 1) * 0.5;
            double d = std::abs(p - center);
            if (d < best_d - 1e-9) {
                best_d = d;
                best = static_cast<int>(i);
            }
        }
        assign[static_cast<size_t>(p)] = best;
    }
    return assign;
}

}  // namespace detail

inline BranchProbs infer_probs(const Model& model, const ImageRGB& image) {
    const int S = model.config().input_size;
    if (image.h == S && image.w == S) return infer_single(model, image);

    // mirror-pad up to at least one tile
    ImageRGB padded = image;
    if (image.h < S || image.w < S)
        padded = detail::mirror_pad_image(image, std::max(image.h, S), std::max(image.w, S));

    const auto ys = detail::grid_positions(padded.h, S, S / 2);
    const auto xs = detail::grid_positions(padded.w, S, S / 2);
    const auto ay = detail::tile_assignment(ys, padded.h, S);
    const auto ax = detail::tile_assignment(xs, padded.w, S);

    BranchProbs full;
    full.gland = detail::make_prob2(padded.h, padded.w);
    full.contour = detail::make_prob2(padded.h, padded.w);
    if (model.config().variant == Variant::plus) {
        full.lumen = detail::make_prob2(padded.h, padded.w);
        full.lumen_contour = detail::make_prob2(padded.h, padded.w);
    }

    ImageRGB tile_img = make_image(S, S);
    for (size_t ti = 0; ti < ys.size(); ++ti)
        for (size_t tj = 0; tj < xs.size(); ++tj) {
            for (int y = 0; y < S; ++y)
                for (int x = 0; x < S; ++x)
                    for (int c = 0; c < 3; ++c) tile_img.at(y, x, c) = padded.at(ys[ti] + y, xs[tj] + x, c);
            BranchProbs tp = infer_single(model, tile_img);
            auto blit = [&](Prob2& dst, const Prob2& src) {
                for (int y = 0; y < padded.h; ++y) {
                    if (ay[static_cast<size_t>(y)] != static_cast<int>(ti)) continue;
                    for (int x = 0; x < padded.w; ++x) {
                        if (ax[static_cast<size_t>(x)] != static_cast<int>(tj)) continue;
                        dst.fg.at(y, x) = src.fg.at(y - ys[ti], x - xs[tj]);
                        dst.bg.at(y, x) = src.bg.at(y - ys[ti], x - xs[tj]);
                    }
                }
            };
            blit(full.gland, tp.gland);
            blit(full.contour, tp.contour);
            if (full.lumen) blit(*full.lumen, *tp.lumen);
            if (full.lumen_contour) blit(*full.lumen_contour, *tp.lumen_contour);
        }

    if (padded.h == image.h && padded.w == image.w) return full;
    auto crop2 = [&](const Prob2& src) {
        Prob2 dst = detail::make_prob2(image.h, image.w);
        for (int y = 0; y < image.h; ++y)
            for (int x = 0; x < image.w; ++x) {
                dst.fg.at(y, x) = src.fg.at(y, x);
                dst.bg.at(y, x) = src.bg.at(y, x);
            }
        return dst;
    };
    BranchProbs out;
    out.gland = crop2(full.gland);
    out.contour = crop2(full.contour);
    if (full.lumen) out.lumen = crop2(*full.lumen);
    if (full.lumen_contour) out.lumen_contour = crop2(*full.lumen_contour);
    return out;
}

// instance boundaries drawn over the input, one palette colour per id
inline ImageRGB overlay_instances(const ImageRGB& image, const InstanceMap& instances) {
    static const float palette[][3] = {{1.0f, 0.9f, 0.1f}, {0.1f, 0.9f, 0.3f}, {0.2f, 0.5f, 1.0f},
                                       {1.0f, 0.3f, 0.2f}, {0.9f, 0.2f, 0.9f}, {0.1f, 0.9f, 0.9f}};
    ImageRGB out = image;
    Mask b = instance_boundaries(instances);
    for (int y = 0; y < image.h; ++y)
        for (int x = 0; x < image.w; ++x) {
            if (!b.at(y, x)) continue;
            const float* col = palette[instances.at(y, x) % 6];
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = col[c];
        }
    return out;
}

}  // namespace mild
