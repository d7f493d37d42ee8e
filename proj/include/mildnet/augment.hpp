#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "mildnet/image.hpp"
#include "mildnet/rng.hpp"

// Training-time augmentation. Geometric transforms move image and label maps
// through the same coordinate mapping (bilinear with reflected borders for
// the image, nearest-neighbour with background fill for labels); photometric
// transforms never touch the labels.

namespace mild {

struct Sample {
    ImageRGB image;
    InstanceMap labels;
    std::optional<InstanceMap> lumen;
};

struct AugmentSpec {
    bool elastic = true;
    int elastic_grid = 8;
    double elastic_alpha = 10.0;  // max displacement in px
    bool flip = true;
    bool rotate = true;
    bool gaussian_blur = true;
    double blur_sigma_min = 0.4, blur_sigma_max = 1.2;
    double blur_prob = 0.3;
    bool median_blur = true;
    int median_kernel_max = 5;
    double median_prob = 0.2;
    bool colour = true;
    double colour_gain = 0.1, colour_offset = 0.04;
    int crop = 464;

    static AugmentSpec disabled(int crop_size) {
        AugmentSpec s;
        s.elastic = s.flip = s.rotate = s.gaussian_blur = s.median_blur = s.colour = false;
        s.crop = crop_size;
        return s;
    }
};

namespace detail {

// reflect-101 index (no edge duplication)
inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i = std::abs(i) % period;
    return i < n ? i : period - i;
}

inline float sample_bilinear_reflect(const ImageRGB& im, double y, double x, int c) {
    int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
    double fy = y - y0, fx = x - x0;
    int ya = reflect_index(y0, im.h), yb = reflect_index(y0 + 1, im.h);
    int xa = reflect_index(x0, im.w), xb = reflect_index(x0 + 1, im.w);
    double top = im.at(ya, xa, c) * (1 - fx) + im.at(ya, xb, c) * fx;
    double bot = im.at(yb, xa, c) * (1 - fx) + im.at(yb, xb, c) * fx;
    return static_cast<float>(top * (1 - fy) + bot * fy);
}

inline int32_t sample_nearest_or_bg(const InstanceMap& m, double y, double x) {
    int iy = static_cast<int>(std::lround(y)), ix = static_cast<int>(std::lround(x));
    if (iy < 0 || iy >= m.h || ix < 0 || ix >= m.w) return 0;
    return m.at(iy, ix);
}

// applies a per-pixel source mapping to the whole sample
template <typename MapFn>
inline Sample warp(const Sample& in, MapFn&& src_of) {
    Sample out;
    out.image = make_image(in.image.h, in.image.w);
    out.labels = make_instance_map(in.labels.h, in.labels.w);
    if (in.lumen) out.lumen = make_instance_map(in.lumen->h, in.lumen->w);
    for (int y = 0; y < in.image.h; ++y)
        for (int x = 0; x < in.image.w; ++x) {
            auto [sy, sx] = src_of(y, x);
            for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = sample_bilinear_reflect(in.image, sy, sx, c);
            out.labels.at(y, x) = sample_nearest_or_bg(in.labels, sy, sx);
            if (in.lumen) out.lumen->at(y, x) = sample_nearest_or_bg(*in.lumen, sy, sx);
        }
    return out;
}

}  // namespace detail

inline Sample flip_horizontal(const Sample& in) {
    return detail::warp(in, [&](int y, int x) { return std::pair<double, double>(y, in.image.w - 1 - x); });
}

inline Sample flip_vertical(const Sample& in) {
    return detail::warp(in, [&](int y, int x) { return std::pair<double, double>(in.image.h - 1 - y, x); });
}

// arbitrary-angle rotation about the image center
inline Sample rotate_sample(const Sample& in, double angle_rad) {
    const double cy = (in.image.h - 1) * 0.5, cx = (in.image.w - 1) * 0.5;
    const double c = std::cos(angle_rad), s = std::sin(angle_rad);
    return detail::warp(in, [&](int y, int x) {
        double dy = y - cy, dx = x - cx;
        // inverse rotation
        return std::pair<double, double>(cy + dy * c - dx * s, cx + dy * s + dx * c);
    });
}

// coarse random displacement field, bilinearly upsampled
inline Sample elastic_distort(const Sample& in, int grid, double alpha, uint64_t seed) {
    if (grid < 2) throw ConfigError("elastic grid must be >= 2");
    Rng rng(seed);
    const int h = in.image.h, w = in.image.w;
    std::vector<double> dy(static_cast<size_t>(grid) * grid), dx(static_cast<size_t>(grid) * grid);
    for (auto& v : dy) v = rng.uniform(-alpha, alpha);
    for (auto& v : dx) v = rng.uniform(-alpha, alpha);
    auto field_at = [&](const std::vector<double>& f, double y, double x) {
        double gy = y * (grid - 1) / std::max(1, h - 1), gx = x * (grid - 1) / std::max(1, w - 1);
        int y0 = std::min(static_cast<int>(gy), grid - 2), x0 = std::min(static_cast<int>(gx), grid - 2);
        double fy = gy - y0, fx = gx - x0;
        double top = f[static_cast<size_t>(y0) * grid + x0] * (1 - fx) + f[static_cast<size_t>(y0) * grid + x0 + 1] * fx;
        double bot = f[static_cast<size_t>(y0 + 1) * grid + x0] * (1 - fx) +
                     f[static_cast<size_t>(y0 + 1) * grid + x0 + 1] * fx;
        return top * (1 - fy) + bot * fy;
    };
    return detail::warp(in, [&](int y, int x) {
        return std::pair<double, double>(y + field_at(dy, y, x), x + field_at(dx, y, x));
    });
}

inline ImageRGB gaussian_blur_image(const ImageRGB& in, double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(static_cast<size_t>(2 * radius + 1));
    double norm = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[static_cast<size_t>(i + radius)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        norm += k[static_cast<size_t>(i + radius)];
    }
    for (auto& v : k) v /= norm;

    ImageRGB tmp = make_image(in.h, in.w), out = make_image(in.h, in.w);
    for (int y = 0; y < in.h; ++y)
        for (int x = 0; x < in.w; ++x)
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i)
                    acc += k[static_cast<size_t>(i + radius)] * in.at(y, detail::reflect_index(x + i, in.w), c);
                tmp.at(y, x, c) = static_cast<float>(acc);
            }
    for (int y = 0; y < in.h; ++y)
        for (int x = 0; x < in.w; ++x)
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i)
                    acc += k[static_cast<size_t>(i + radius)] * tmp.at(detail::reflect_index(y + i, in.h), x, c);
                out.at(y, x, c) = static_cast<float>(acc);
            }
    return out;
}

inline ImageRGB median_blur_image(const ImageRGB& in, int kernel) {
    if (kernel < 3 || kernel % 2 == 0) throw ConfigError("median kernel must be odd and >= 3");
    const int r = kernel / 2;
    ImageRGB out = make_image(in.h, in.w);
    std::vector<float> window;
    window.reserve(static_cast<size_t>(kernel) * kernel);
    for (int y = 0; y < in.h; ++y)
        for (int x = 0; x < in.w; ++x)
            for (int c = 0; c < 3; ++c) {
                window.clear();
                for (int dy = -r; dy <= r; ++dy)
                    for (int dx = -r; dx <= r; ++dx)
                        window.push_back(
                            in.at(detail::reflect_index(y + dy, in.h), detail::reflect_index(x + dx, in.w), c));
                auto mid = window.begin() + window.size() / 2;
                std::nth_element(window.begin(), mid, window.end());
                out.at(y, x, c) = *mid;
            }
    return out;
}

inline ImageRGB colour_distort(const ImageRGB& in, const double gain[3], const double offset[3]) {
    ImageRGB out = in;
    for (int y = 0; y < in.h; ++y)
        for (int x = 0; x < in.w; ++x)
            for (int c = 0; c < 3; ++c)
                out.at(y, x, c) = std::clamp(static_cast<float>(in.at(y, x, c) * gain[c] + offset[c]), 0.0f, 1.0f);
    return out;
}

inline Sample crop_sample(const Sample& in, int y0, int x0, int size) {
    if (y0 < 0 || x0 < 0 || y0 + size > in.image.h || x0 + size > in.image.w)
        throw ConfigError("crop window outside sample extents");
    Sample out;
    out.image = make_image(size, size);
    out.labels = make_instance_map(size, size);
    if (in.lumen) out.lumen = make_instance_map(size, size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = in.image.at(y0 + y, x0 + x, c);
            out.labels.at(y, x) = in.labels.at(y0 + y, x0 + x);
            if (in.lumen) out.lumen->at(y, x) = in.lumen->at(y0 + y, x0 + x);
        }
    return out;
}

// Randomly parameterized transform chain ending in a random crop to
// spec.crop x spec.crop.
inline Sample augment(const Sample& in, const AugmentSpec& spec, uint64_t seed) {
    if (in.image.h != in.labels.h || in.image.w != in.labels.w)
        throw ConfigError("augment: image/label extents differ");
    if (in.image.h < spec.crop || in.image.w < spec.crop)
        throw ConfigError("augment: sample smaller than crop size " + std::to_string(spec.crop));
    Rng rng(seed);
    Sample cur = in;
    if (spec.elastic) {
        double alpha = rng.uniform(0.4, 1.0) * spec.elastic_alpha;
        cur = elastic_distort(cur, spec.elastic_grid, alpha, rng.next_u64());
    }
    if (spec.flip) {
        if (rng.uniform() < 0.5) cur = flip_horizontal(cur);
        if (rng.uniform() < 0.5) cur = flip_vertical(cur);
    }
    if (spec.rotate) cur = rotate_sample(cur, rng.uniform(0.0, 6.283185307179586));
    if (spec.gaussian_blur && rng.uniform() < spec.blur_prob)
        cur.image = gaussian_blur_image(cur.image, rng.uniform(spec.blur_sigma_min, spec.blur_sigma_max));
    if (spec.median_blur && rng.uniform() < spec.median_prob) {
        int k = 3 + 2 * rng.uniform_int(0, std::max(0, (spec.median_kernel_max - 3) / 2));
        cur.image = median_blur_image(cur.image, k);
    }
    if (spec.colour) {
        double gain[3], offset[3];
        for (int c = 0; c < 3; ++c) {
            gain[c] = rng.uniform(1.0 - spec.colour_gain, 1.0 + spec.colour_gain);
            offset[c] = rng.uniform(-spec.colour_offset, spec.colour_offset);
        }
        cur.image = colour_distort(cur.image, gain, offset);
    }
    const int y0 = cur.image.h == spec.crop ? 0 : rng.uniform_int(0, cur.image.h - spec.crop);
    const int x0 = cur.image.w == spec.crop ? 0 : rng.uniform_int(0, cur.image.w - spec.crop);
    return crop_sample(cur, y0, x0, spec.crop);
}

}  // namespace mild
