#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mildnet/augment.hpp"
#include "mildnet/infer.hpp"
#include "mildnet/metrics.hpp"
#include "mildnet/rng.hpp"

// Random transformation sampling at test time. Each sample transforms the
// input, runs the network, and maps the probability maps back through the
// exact geometric inverse before aggregation, so the per-pixel mean mu and
// population variance sigma are pixel-aligned. Rotations are restricted to
// right angles for exactly this reason; photometric transforms (blur, median,
// noise) act on the input only and invert as the identity on the output.

namespace mild {

struct TransformSpec {
    enum class Kind { identity, flip_h, flip_v, rot90, rot180, rot270, gaussian_blur, median_blur, gaussian_noise };
    Kind kind = Kind::identity;
    double sigma = 1.0;      // gaussian blur / noise strength
    int kernel = 3;          // median blur
    uint64_t noise_seed = 0; // gaussian noise draw
};

inline bool is_geometric(TransformSpec::Kind k) {
    using K = TransformSpec::Kind;
    return k == K::flip_h || k == K::flip_v || k == K::rot90 || k == K::rot180 || k == K::rot270 || k == K::identity;
}

inline TransformSpec::Kind transform_kind_from_name(const std::string& s) {
    using K = TransformSpec::Kind;
    if (s == "identity") return K::identity;
    if (s == "flip-h") return K::flip_h;
    if (s == "flip-v") return K::flip_v;
    if (s == "rot90") return K::rot90;
    if (s == "rot180") return K::rot180;
    if (s == "rot270") return K::rot270;
    if (s == "gaussian-blur") return K::gaussian_blur;
    if (s == "median-blur") return K::median_blur;
    if (s == "gaussian-noise") return K::gaussian_noise;
    throw ConfigError("unknown transform kind '" + s + "'");
}

inline const char* transform_kind_name(TransformSpec::Kind k) {
    using K = TransformSpec::Kind;
    switch (k) {
        case K::identity: return "identity";
        case K::flip_h: return "flip-h";
        case K::flip_v: return "flip-v";
        case K::rot90: return "rot90";
        case K::rot180: return "rot180";
        case K::rot270: return "rot270";
        case K::gaussian_blur: return "gaussian-blur";
        case K::median_blur: return "median-blur";
        case K::gaussian_noise: return "gaussian-noise";
    }
    return "?";
}

namespace detail {

template <typename T, typename Get, typename Set>
inline void geo_map(int h, int w, TransformSpec::Kind k, int& oh, int& ow, Get&& get, Set&& set) {
    using K = TransformSpec::Kind;
    oh = (k == K::rot90 || k == K::rot270) ? w : h;
    ow = (k == K::rot90 || k == K::rot270) ? h : w;
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            int sy = y, sx = x;
            switch (k) {
                case K::identity: break;
                case K::flip_h: sx = w - 1 - x; break;
                case K::flip_v: sy = h - 1 - y; break;
                case K::rot90:  // 90 degrees counter-clockwise
                    sy = x;
                    sx = w - 1 - y;
                    break;
                case K::rot180:
                    sy = h - 1 - y;
                    sx = w - 1 - x;
                    break;
                case K::rot270:
                    sy = h - 1 - x;
                    sx = y;
                    break;
                default: break;
            }
            set(y, x, get(sy, sx));
        }
}

inline TransformSpec::Kind inverse_kind(TransformSpec::Kind k) {
    using K = TransformSpec::Kind;
    if (k == K::rot90) return K::rot270;
    if (k == K::rot270) return K::rot90;
    return is_geometric(k) ? k : K::identity;
}

}  // namespace detail

inline ImageRGB apply_transform(const ImageRGB& im, const TransformSpec& t) {
    using K = TransformSpec::Kind;
    if (is_geometric(t.kind)) {
        int oh = 0, ow = 0;
        ImageRGB out;
        out.h = (t.kind == K::rot90 || t.kind == K::rot270) ? im.w : im.h;
        out.w = (t.kind == K::rot90 || t.kind == K::rot270) ? im.h : im.w;
        out.v.resize(static_cast<size_t>(out.h) * out.w * 3);
        for (int c = 0; c < 3; ++c)
            detail::geo_map<float>(
                im.h, im.w, t.kind, oh, ow, [&](int y, int x) { return im.at(y, x, c); },
                [&](int y, int x, float v) { out.at(y, x, c) = v; });
        return out;
    }
    if (t.kind == K::gaussian_blur) return gaussian_blur_image(im, t.sigma);
    if (t.kind == K::median_blur) return median_blur_image(im, t.kernel);
    // gaussian noise
    ImageRGB out = im;
    Rng rng(t.noise_seed);
    for (auto& v : out.v) v = std::clamp(static_cast<float>(v + rng.gaussian(0.0, t.sigma)), 0.0f, 1.0f);
    return out;
}

// Maps a network output grid back to input-image coordinates.
inline Grid inverse_map_grid(const Grid& g, const TransformSpec& t) {
    if (!is_geometric(t.kind)) return g;
    TransformSpec::Kind inv = detail::inverse_kind(t.kind);
    int oh = 0, ow = 0;
    Grid out = make_grid((inv == TransformSpec::Kind::rot90 || inv == TransformSpec::Kind::rot270) ? g.w : g.h,
                         (inv == TransformSpec::Kind::rot90 || inv == TransformSpec::Kind::rot270) ? g.h : g.w);
    detail::geo_map<float>(
        g.h, g.w, inv, oh, ow, [&](int y, int x) { return g.at(y, x); },
        [&](int y, int x, float v) { out.at(y, x) = v; });
    return out;
}

struct TransformPool {
    std::vector<TransformSpec::Kind> kinds = {
        TransformSpec::Kind::flip_h,       TransformSpec::Kind::flip_v,      TransformSpec::Kind::rot90,
        TransformSpec::Kind::rot180,       TransformSpec::Kind::rot270,      TransformSpec::Kind::gaussian_blur,
        TransformSpec::Kind::median_blur,  TransformSpec::Kind::gaussian_noise};
    double blur_sigma_min = 0.4, blur_sigma_max = 1.2;
    int median_kernel_max = 5;
    double noise_sigma_min = 0.01, noise_sigma_max = 0.05;

    TransformSpec draw(Rng& rng) const {
        if (kinds.empty()) throw ConfigError("transform pool is empty");
        TransformSpec t;
        t.kind = kinds[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(kinds.size()) - 1))];
        t.sigma = t.kind == TransformSpec::Kind::gaussian_noise ? rng.uniform(noise_sigma_min, noise_sigma_max)
                                                                : rng.uniform(blur_sigma_min, blur_sigma_max);
        t.kernel = 3 + 2 * rng.uniform_int(0, std::max(0, (median_kernel_max - 3) / 2));
        t.noise_seed = rng.next_u64();
        return t;
    }
};

struct UncertaintyMap {
    BranchProbs mu;                    // per-branch mean probability maps
    Grid sigma;                        // gland foreground variance
    std::optional<Grid> sigma_lumen;   // plus variant
    Grid sigma_hat;                    // boundary-removed; empty until applied
    std::optional<Grid> sigma_hat_lumen;
    int n = 0;
};

using PredictFn = std::function<BranchProbs(const ImageRGB&)>;

inline UncertaintyMap rts_predict(const PredictFn& predict, const ImageRGB& image,
                                  const std::vector<TransformSpec>& draws) {
    if (draws.empty()) throw ConfigError("rts_predict needs n >= 1 samples");
    const int h = image.h, w = image.w;

    struct Acc {
        std::vector<double> sum, sumsq;
    };
    auto make_acc = [&](bool with_var) {
        Acc a;
        a.sum.assign(static_cast<size_t>(h) * w, 0.0);
        if (with_var) a.sumsq.assign(static_cast<size_t>(h) * w, 0.0);
        return a;
    };
    Acc g_fg = make_acc(true), g_bg = make_acc(false);
    Acc c_fg = make_acc(false), c_bg = make_acc(false);
    std::optional<Acc> l_fg, l_bg, lc_fg, lc_bg;

    for (const auto& t : draws) {
        BranchProbs p = predict(apply_transform(image, t));
        auto pull = [&](const Grid& out_grid, Acc& acc, bool var) {
            Grid gi = inverse_map_grid(out_grid, t);
            if (gi.h != h || gi.w != w)
                throw ConfigError("transform inverse did not restore prediction extents");
            for (size_t i = 0; i < gi.v.size(); ++i) {
                acc.sum[i] += gi.v[i];
                if (var) acc.sumsq[i] += static_cast<double>(gi.v[i]) * gi.v[i];
            }
        };
        pull(p.gland.fg, g_fg, true);
        pull(p.gland.bg, g_bg, false);
        pull(p.contour.fg, c_fg, false);
        pull(p.contour.bg, c_bg, false);
        if (p.lumen) {
            if (!l_fg) {
                l_fg = make_acc(true);
                l_bg = make_acc(false);
                lc_fg = make_acc(false);
                lc_bg = make_acc(false);
            }
            pull(p.lumen->fg, *l_fg, true);
            pull(p.lumen->bg, *l_bg, false);
            pull(p.lumen_contour->fg, *lc_fg, false);
            pull(p.lumen_contour->bg, *lc_bg, false);
        }
    }

    const double n = static_cast<double>(draws.size());
    UncertaintyMap u;
    u.n = static_cast<int>(draws.size());
    auto mean_grid = [&](const Acc& a) {
        Grid g = make_grid(h, w);
        for (size_t i = 0; i < a.sum.size(); ++i) g.v[i] = static_cast<float>(a.sum[i] / n);
        return g;
    };
    auto var_grid = [&](const Acc& a) {
        Grid g = make_grid(h, w);
        for (size_t i = 0; i < a.sum.size(); ++i) {
            double mu = a.sum[i] / n;
            double var = a.sumsq[i] / n - mu * mu;
            g.v[i] = static_cast<float>(var > 0.0 ? var : 0.0);
        }
        return g;
    };
    u.mu.gland = Prob2{mean_grid(g_fg), mean_grid(g_bg)};
    u.mu.contour = Prob2{mean_grid(c_fg), mean_grid(c_bg)};
    u.sigma = var_grid(g_fg);
    if (l_fg) {
        u.mu.lumen = Prob2{mean_grid(*l_fg), mean_grid(*l_bg)};
        u.mu.lumen_contour = Prob2{mean_grid(*lc_fg), mean_grid(*lc_bg)};
        u.sigma_lumen = var_grid(*l_fg);
    }
    return u;
}

inline UncertaintyMap rts_predict(const PredictFn& predict, const ImageRGB& image, int n, const TransformPool& pool,
                                  uint64_t seed) {
    if (n < 1) throw ConfigError("rts_predict needs n >= 1");
    Rng rng(derive_seed(seed, 0x727473));
    std::vector<TransformSpec> draws;
    draws.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) draws.push_back(pool.draw(rng));
    return rts_predict(predict, image, draws);
}

// sigma with predicted-contour pixels zeroed
inline Grid boundary_removed(const Grid& sigma, const Grid& contour_fg, double threshold = 0.5) {
    if (sigma.h != contour_fg.h || sigma.w != contour_fg.w)
        throw ConfigError("boundary_removed: extents differ");
    Grid out = sigma;
    for (size_t i = 0; i < out.v.size(); ++i)
        if (contour_fg.v[i] >= threshold) out.v[i] = 0.0f;
    return out;
}

inline void apply_boundary_removal(UncertaintyMap& u, double threshold = 0.5) {
    u.sigma_hat = boundary_removed(u.sigma, u.mu.contour.fg, threshold);
    if (u.sigma_lumen && u.mu.lumen_contour)
        u.sigma_hat_lumen = boundary_removed(*u.sigma_lumen, u.mu.lumen_contour->fg, threshold);
}

// tau_k: mean of the (boundary-removed) uncertainty map over each predicted
// instance's pixels
inline std::map<int32_t, double> instance_uncertainty(const Grid& sigma_hat, const InstanceMap& instances) {
    if (sigma_hat.h != instances.h || sigma_hat.w != instances.w)
        throw ConfigError("instance_uncertainty: extents differ");
    std::map<int32_t, double> sum;
    std::map<int32_t, size_t> count;
    for (size_t i = 0; i < instances.v.size(); ++i) {
        if (instances.v[i] <= 0) continue;
        sum[instances.v[i]] += sigma_hat.v[i];
        ++count[instances.v[i]];
    }
    std::map<int32_t, double> tau;
    for (const auto& [id, s] : sum) tau[id] = s / static_cast<double>(count[id]);
    return tau;
}

struct FilterResult {
    InstanceMap filtered;
    std::vector<int32_t> removed_ids;
    int total_instances = 0;
    int retained_instances = 0;

    double retained_fraction() const {
        return total_instances == 0 ? 1.0 : static_cast<double>(retained_instances) / total_instances;
    }
};

// Instances with tau >= threshold are disregarded; only scores strictly below
// the threshold are kept.
inline FilterResult filter_instances(const InstanceMap& instances, const std::map<int32_t, double>& tau,
                                     double threshold) {
    if (threshold < 0) throw ConfigError("filter threshold must be >= 0");
    FilterResult r;
    r.filtered = instances;
    auto ids = instance_ids(instances);
    r.total_instances = static_cast<int>(ids.size());
    std::vector<char> removed_flag;
    for (int32_t id : ids) {
        auto it = tau.find(id);
        const bool remove = it != tau.end() && it->second >= threshold;
        if (remove) r.removed_ids.push_back(id);
    }
    for (auto& v : r.filtered.v)
        if (v > 0 && std::binary_search(r.removed_ids.begin(), r.removed_ids.end(), v)) v = 0;
    r.retained_instances = r.total_instances - static_cast<int>(r.removed_ids.size());
    return r;
}

// --- threshold sweep -------------------------------------------------------------

struct SweepInput {
    InstanceMap pred, gt;
    std::map<int32_t, double> tau_sigma, tau_sigma_hat;
};

struct SweepRecord {
    double threshold = 0.0;
    double f1 = 0.0;
    double retained_fraction = 1.0;
    bool boundary_removed = false;  // which map variant produced tau
};

// For every threshold and both map variants: drop predictions with tau >=
// threshold, drop the ground-truth instance matched to each dropped
// prediction, and recompute detection F1 over the whole set.
inline std::vector<SweepRecord> uncertainty_sweep(const std::vector<SweepInput>& items,
                                                  const std::vector<double>& thresholds) {
    std::vector<SweepRecord> records;
    for (int variant = 0; variant < 2; ++variant) {
        const bool use_hat = variant == 1;
        for (double t : thresholds) {
            int64_t tp = 0, fp = 0, fn = 0, total = 0, retained = 0;
            for (const auto& item : items) {
                const auto& tau = use_hat ? item.tau_sigma_hat : item.tau_sigma;
                FilterResult fr = filter_instances(item.pred, tau, t);
                total += fr.total_instances;
                retained += fr.retained_instances;

                InstanceMap gt = item.gt;
                if (!fr.removed_ids.empty()) {
                    DetectionResult match = detection_match(item.pred, item.gt);
                    for (const auto& m : match.matches)
                        if (std::binary_search(fr.removed_ids.begin(), fr.removed_ids.end(), m.pred_id))
                            for (auto& v : gt.v)
                                if (v == m.gt_id) v = 0;
                }
                DetectionResult det = detection_match(fr.filtered, gt);
                tp += det.tp;
                fp += det.fp;
                fn += det.fn;
            }
            SweepRecord rec;
            rec.threshold = t;
            rec.boundary_removed = use_hat;
            rec.f1 = (tp + fp + fn) == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / (2.0 * tp + fp + fn);
            rec.retained_fraction = total == 0 ? 1.0 : static_cast<double>(retained) / static_cast<double>(total);
            records.push_back(rec);
        }
    }
    return records;
}

}  // namespace mild
