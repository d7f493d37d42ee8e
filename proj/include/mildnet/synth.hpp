#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "mildnet/image.hpp"
#include "mildnet/morphology.hpp"
#include "mildnet/rng.hpp"

// Synthetic H&E-like gland images with exact instance and lumen ground truth.
// Each gland is a ring of dark epithelium around a bright lumen core on a
// textured pink stroma. Malignant-like mode fuses several lobes into one
// irregular instance. Distractors are unlabeled ring-like structures rendered
// at intermediate contrast; they exist to seed ambiguous predictions for the
// uncertainty-filtering experiments.

namespace mild {

enum class Grade { benign, malignant_like };

inline Grade grade_from_name(const std::string& s) {
    if (s == "benign") return Grade::benign;
    if (s == "malignant" || s == "malignant-like") return Grade::malignant_like;
    throw ConfigError("unknown grade '" + s + "' (expected benign|malignant-like)");
}

inline const char* grade_name(Grade g) { return g == Grade::benign ? "benign" : "malignant-like"; }

struct SynthOptions {
    int count = 8;
    int size = 64;
    Grade grade = Grade::benign;
    uint64_t seed = 0;
    int min_glands = 0;  // 0 = scale with image area
    int max_glands = 0;
    int distractors = 0;
    double distractor_strength = 0.55;  // blend toward gland appearance, 0..1
    int min_instance_area = 50;

    void validate() const {
        if (count < 1) throw ConfigError("synth count must be >= 1");
        if (size < 64) throw ConfigError("synth size must be >= 64");
        if (distractors < 0) throw ConfigError("synth distractors must be >= 0");
        if (distractor_strength < 0.0 || distractor_strength > 1.0)
            throw ConfigError("distractor_strength must be in [0, 1]");
    }
};

struct SynthSample {
    ImageRGB image;
    InstanceMap instances;
    InstanceMap lumen;  // shares instance ids with `instances`
};

namespace detail {

// low-frequency value noise: coarse random grid, bilinear upsampled
inline Grid value_noise(int h, int w, int cell, double amp, Rng& rng) {
    const int gh = h / cell + 2, gw = w / cell + 2;
    std::vector<double> coarse(static_cast<size_t>(gh) * gw);
    for (auto& v : coarse) v = rng.uniform(-amp, amp);
    Grid g = make_grid(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double fy = static_cast<double>(y) / cell, fx = static_cast<double>(x) / cell;
            int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
            double ay = fy - y0, ax = fx - x0;
            double top = coarse[static_cast<size_t>(y0) * gw + x0] * (1 - ax) +
                         coarse[static_cast<size_t>(y0) * gw + x0 + 1] * ax;
            double bot = coarse[static_cast<size_t>(y0 + 1) * gw + x0] * (1 - ax) +
                         coarse[static_cast<size_t>(y0 + 1) * gw + x0 + 1] * ax;
            g.at(y, x) = static_cast<float>(top * (1 - ay) + bot * ay);
        }
    return g;
}

struct Lobe {
    double cy, cx, a, b, phi;       // ellipse center, semi-axes, rotation
    double amp;                     // radial perturbation amplitude
    double c[3], ph[3];             // radial harmonics
    double radial(double theta) const {
        double r = 1.0;
        for (int k = 0; k < 3; ++k) r += amp * c[k] * std::sin((k + 2) * theta + ph[k]);
        return r;
    }
    // normalized squared radius; <= 1 is inside
    double rho2(double y, double x) const {
        double dy = y - cy, dx = x - cx;
        double u = dx * std::cos(phi) + dy * std::sin(phi);
        double v = -dx * std::sin(phi) + dy * std::cos(phi);
        double theta = std::atan2(v / b, u / a);
        double r = radial(theta);
        double q = (u * u) / (a * a) + (v * v) / (b * b);
        return q / (r * r);
    }
};

struct GlandShape {
    std::vector<Lobe> lobes;
    double lumen_frac;

    bool inside(double y, double x) const {
        for (const auto& l : lobes)
            if (l.rho2(y, x) <= 1.0) return true;
        return false;
    }
    bool inside_lumen(double y, double x) const {
        for (const auto& l : lobes)
            if (l.rho2(y, x) <= lumen_frac * lumen_frac) return true;
        return false;
    }
};

inline GlandShape draw_gland_shape(double cy, double cx, double radius, Grade grade, Rng& rng) {
    GlandShape s;
    const int lobes = grade == Grade::malignant_like ? rng.uniform_int(2, 3) : 1;
    for (int i = 0; i < lobes; ++i) {
        Lobe l;
        double off = i == 0 ? 0.0 : rng.uniform(0.4, 0.8) * radius;
        double dir = rng.uniform(0.0, 6.283185307179586);
        l.cy = cy + off * std::sin(dir);
        l.cx = cx + off * std::cos(dir);
        double scale = i == 0 ? 1.0 : rng.uniform(0.55, 0.85);
        l.a = radius * scale * rng.uniform(0.8, 1.2);
        l.b = radius * scale * rng.uniform(0.8, 1.2);
        l.phi = rng.uniform(0.0, 3.141592653589793);
        l.amp = grade == Grade::malignant_like ? rng.uniform(0.1, 0.2) : rng.uniform(0.03, 0.09);
        for (int k = 0; k < 3; ++k) {
            l.c[k] = rng.uniform(0.2, 1.0);
            l.ph[k] = rng.uniform(0.0, 6.283185307179586);
        }
        s.lobes.push_back(l);
    }
    s.lumen_frac = grade == Grade::malignant_like ? rng.uniform(0.35, 0.5) : rng.uniform(0.45, 0.62);
    return s;
}

struct Palette {
    float stroma[3] = {0.87f, 0.75f, 0.81f};
    float epithelium[3] = {0.55f, 0.44f, 0.70f};
    float nucleus[3] = {0.26f, 0.20f, 0.48f};
    float lumen[3] = {0.93f, 0.91f, 0.94f};
};

inline void splat_disc(ImageRGB& im, double cy, double cx, double r, const float rgb[3], double blend) {
    int y0 = std::max(0, static_cast<int>(cy - r - 1)), y1 = std::min(im.h - 1, static_cast<int>(cy + r + 1));
    int x0 = std::max(0, static_cast<int>(cx - r - 1)), x1 = std::min(im.w - 1, static_cast<int>(cx + r + 1));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
            if (d2 > r * r) continue;
            for (int c = 0; c < 3; ++c)
                im.at(y, x, c) = static_cast<float>(im.at(y, x, c) * (1 - blend) + rgb[c] * blend);
        }
}

inline void box_smooth(ImageRGB& im) {
    ImageRGB src = im;
    for (int y = 0; y < im.h; ++y)
        for (int x = 0; x < im.w; ++x)
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                int cnt = 0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        int yy = y + dy, xx = x + dx;
                        if (yy < 0 || yy >= im.h || xx < 0 || xx >= im.w) continue;
                        acc += src.at(yy, xx, c);
                        ++cnt;
                    }
                im.at(y, x, c) = static_cast<float>(acc / cnt);
            }
}

}  // namespace detail

inline std::vector<SynthSample> synth_glands(const SynthOptions& opt) {
    opt.validate();
    const int S = opt.size;
    const double area = static_cast<double>(S) * S;
    const int lo = opt.min_glands > 0 ? opt.min_glands : std::max(2, static_cast<int>(area / 2048));
    const int hi = opt.max_glands > 0 ? opt.max_glands : std::max(lo + 1, static_cast<int>(area / 1100));
    detail::Palette pal;

    std::vector<SynthSample> out;
    out.reserve(static_cast<size_t>(opt.count));
    for (int img_i = 0; img_i < opt.count; ++img_i) {
        Rng rng(derive_seed(opt.seed, 0x5359, static_cast<uint64_t>(img_i)));
        SynthSample s;
        s.instances = make_instance_map(S, S);
        s.lumen = make_instance_map(S, S);

        // stroma background with coarse+fine texture
        Grid coarse = detail::value_noise(S, S, std::max(8, S / 8), 0.05, rng);
        s.image = make_image(S, S);
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                float n = coarse.at(y, x) + static_cast<float>(rng.uniform(-0.03, 0.03));
                for (int c = 0; c < 3; ++c) s.image.at(y, x, c) = pal.stroma[c] + n;
            }
        // sparse stromal cell nuclei
        const int stromal_cells = static_cast<int>(area / 450);
        for (int k = 0; k < stromal_cells; ++k)
            detail::splat_disc(s.image, rng.uniform(0.0, S - 1.0), rng.uniform(0.0, S - 1.0), rng.uniform(0.7, 1.3),
                               pal.nucleus, 0.55);

        // place glands with a separation band so instances never touch
        const int target = rng.uniform_int(lo, hi);
        Mask occupied = make_mask(S, S);
        const auto gap_se = square_offsets(3);
        int next_id = 0;
        for (int g = 0; g < target; ++g) {
            for (int attempt = 0; attempt < 60; ++attempt) {
                double radius = rng.uniform(0.095, 0.16) * S;
                radius = std::max(radius, 5.5);
                double cy = rng.uniform(radius, S - 1 - radius);
                double cx = rng.uniform(radius, S - 1 - radius);
                detail::GlandShape shape = detail::draw_gland_shape(cy, cx, radius, opt.grade, rng);

                // rasterize candidate
                Mask cand = make_mask(S, S);
                int cand_area = 0;
                int y0 = std::max(0, static_cast<int>(cy - 2.2 * radius)), y1 = std::min(S - 1, static_cast<int>(cy + 2.2 * radius));
                int x0 = std::max(0, static_cast<int>(cx - 2.2 * radius)), x1 = std::min(S - 1, static_cast<int>(cx + 2.2 * radius));
                for (int y = y0; y <= y1; ++y)
                    for (int x = x0; x <= x1; ++x)
                        if (shape.inside(y, x)) {
                            cand.at(y, x) = 1;
                            ++cand_area;
                        }
                if (cand_area < opt.min_instance_area) continue;

                // reject if touching/too close to an existing gland
                Mask grown = dilate(cand, gap_se);
                bool clash = false;
                for (size_t i = 0; i < grown.v.size() && !clash; ++i)
                    if (grown.v[i] && occupied.v[i]) clash = true;
                if (clash) continue;

                // reject if the union of lobes came out disconnected
                InstanceMap cc = connected_components(cand);
                if (!instance_ids(cc).empty() && instance_ids(cc).size() > 1) continue;

                ++next_id;
                for (int y = y0; y <= y1; ++y)
                    for (int x = x0; x <= x1; ++x) {
                        if (!cand.at(y, x)) continue;
                        occupied.at(y, x) = 1;
                        s.instances.at(y, x) = next_id;
                        bool lum = shape.inside_lumen(y, x);
                        if (lum) s.lumen.at(y, x) = next_id;
                        const float* base = lum ? pal.lumen : pal.epithelium;
                        float n = static_cast<float>(rng.uniform(-0.04, 0.04));
                        for (int c = 0; c < 3; ++c) s.image.at(y, x, c) = base[c] + n;
                    }
                // nuclei dotted along the outer ring
                for (const auto& lobe : shape.lobes) {
                    int dots = std::max(8, static_cast<int>(2.2 * radius));
                    for (int d = 0; d < dots; ++d) {
                        double theta = (6.283185307179586 * d) / dots + rng.uniform(-0.15, 0.15);
                        double rr = lobe.radial(theta) * rng.uniform(0.82, 0.97);
                        double u = lobe.a * rr * std::cos(theta), v = lobe.b * rr * std::sin(theta);
                        double py = lobe.cy + u * std::sin(lobe.phi) + v * std::cos(lobe.phi);
                        double px = lobe.cx + u * std::cos(lobe.phi) - v * std::sin(lobe.phi);
                        int iy = static_cast<int>(py + 0.5), ix = static_cast<int>(px + 0.5);
                        if (iy < 0 || iy >= S || ix < 0 || ix >= S) continue;
                        if (s.instances.at(iy, ix) != next_id || s.lumen.at(iy, ix)) continue;
                        detail::splat_disc(s.image, py, px, rng.uniform(0.8, 1.5), pal.nucleus, 0.8);
                    }
                }
                break;
            }
        }

        // unlabeled ambiguous ring fragments
        for (int d = 0; d < opt.distractors; ++d) {
            for (int attempt = 0; attempt < 40; ++attempt) {
                double radius = rng.uniform(0.08, 0.13) * S;
                double cy = rng.uniform(radius, S - 1 - radius);
                double cx = rng.uniform(radius, S - 1 - radius);
                double strength = opt.distractor_strength * rng.uniform(0.7, 1.1);
                double arc0 = rng.uniform(0.0, 6.283185307179586);
                double arc_len = rng.uniform(0.55, 0.9) * 6.283185307179586;
                double band = rng.uniform(0.22, 0.3);

                int y0 = std::max(0, static_cast<int>(cy - radius - 2)), y1 = std::min(S - 1, static_cast<int>(cy + radius + 2));
                int x0 = std::max(0, static_cast<int>(cx - radius - 2)), x1 = std::min(S - 1, static_cast<int>(cx + radius + 2));
                bool clash = false;
                for (int y = y0; y <= y1 && !clash; ++y)
                    for (int x = x0; x <= x1 && !clash; ++x)
                        if (occupied.at(y, x) && (y - cy) * (y - cy) + (x - cx) * (x - cx) <= (radius + 2) * (radius + 2))
                            clash = true;
                if (clash) continue;

                for (int y = y0; y <= y1; ++y)
                    for (int x = x0; x <= x1; ++x) {
                        double dy = y - cy, dx = x - cx;
                        double r = std::sqrt(dy * dy + dx * dx) / radius;
                        double theta = std::atan2(dy, dx);
                        double darc = std::fmod(theta - arc0 + 12.566370614359172, 6.283185307179586);
                        if (r > 1.0) continue;
                        const float* target_col = r > 1.0 - band && darc <= arc_len ? pal.epithelium : pal.lumen;
                        double w = r > 1.0 - band ? (darc <= arc_len ? strength : 0.0) : strength * 0.8;
                        for (int c = 0; c < 3; ++c)
                            s.image.at(y, x, c) =
                                static_cast<float>(s.image.at(y, x, c) * (1 - w) + target_col[c] * w);
                    }
                for (int k = 0; k < static_cast<int>(radius); ++k) {
                    double theta = arc0 + rng.uniform(0.0, arc_len);
                    detail::splat_disc(s.image, cy + (radius * (1 - band / 2)) * std::sin(theta),
                                       cx + (radius * (1 - band / 2)) * std::cos(theta), rng.uniform(0.7, 1.2),
                                       pal.nucleus, 0.55 * strength);
                }
                break;
            }
        }

        detail::box_smooth(s.image);
        for (auto& v : s.image.v) v = std::clamp(v, 0.0f, 1.0f);
        out.push_back(std::move(s));
    }
    return out;
}

inline std::vector<SynthSample> synth_glands(int count, int size, Grade grade, uint64_t seed) {
    SynthOptions opt;
    opt.count = count;
    opt.size = size;
    opt.grade = grade;
    opt.seed = seed;
    return synth_glands(opt);
}

}  // namespace mild
