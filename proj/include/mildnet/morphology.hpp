#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "mildnet/image.hpp"

// Binary morphology and connected-component labeling shared by label
// derivation, post-processing and the synthetic data generator.

namespace mild {

struct Mask {
    int h = 0, w = 0;
    std::vector<uint8_t> v;

    uint8_t& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
    uint8_t at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
};

inline Mask make_mask(int h, int w, uint8_t fill = 0) {
    return Mask{h, w, std::vector<uint8_t>(static_cast<size_t>(h) * w, fill)};
}

// discrete disk: {(dy,dx): dy^2 + dx^2 <= r^2}
inline std::vector<std::pair<int, int>> disk_offsets(int radius) {
    std::vector<std::pair<int, int>> offs;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
            if (dy * dy + dx * dx <= radius * radius) offs.emplace_back(dy, dx);
    return offs;
}

// square (Chebyshev) element of the given radius
inline std::vector<std::pair<int, int>> square_offsets(int radius) {
    std::vector<std::pair<int, int>> offs;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) offs.emplace_back(dy, dx);
    return offs;
}

// Erosion treats pixels outside the image as background.
inline Mask erode(const Mask& m, const std::vector<std::pair<int, int>>& se) {
    Mask out = make_mask(m.h, m.w);
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) {
            uint8_t keep = 1;
            for (const auto& [dy, dx] : se) {
                int yy = y + dy, xx = x + dx;
                if (yy < 0 || yy >= m.h || xx < 0 || xx >= m.w || !m.at(yy, xx)) {
                    keep = 0;
                    break;
                }
            }
            out.at(y, x) = keep;
        }
    return out;
}

inline Mask dilate(const Mask& m, const std::vector<std::pair<int, int>>& se) {
    Mask out = make_mask(m.h, m.w);
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) {
            if (!m.at(y, x)) continue;
            for (const auto& [dy, dx] : se) {
                int yy = y + dy, xx = x + dx;
                if (yy >= 0 && yy < m.h && xx >= 0 && xx < m.w) out.at(yy, xx) = 1;
            }
        }
    return out;
}

inline Mask opening(const Mask& m, const std::vector<std::pair<int, int>>& se) {
    return dilate(erode(m, se), se);
}

// 4-connected component labeling; ids assigned 1..K in scan order.
inline InstanceMap connected_components(const Mask& m) {
    InstanceMap out = make_instance_map(m.h, m.w);
    std::vector<int> stack;
    int next_id = 0;
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) {
            if (!m.at(y, x) || out.at(y, x)) continue;
            ++next_id;
            stack.push_back(y * m.w + x);
            out.at(y, x) = next_id;
            while (!stack.empty()) {
                int p = stack.back();
                stack.pop_back();
                int py = p / m.w, px = p % m.w;
                const int ny[4] = {py - 1, py + 1, py, py};
                const int nx[4] = {px, px, px - 1, px + 1};
                for (int k = 0; k < 4; ++k) {
                    if (ny[k] < 0 || ny[k] >= m.h || nx[k] < 0 || nx[k] >= m.w) continue;
                    if (m.at(ny[k], nx[k]) && !out.at(ny[k], nx[k])) {
                        out.at(ny[k], nx[k]) = next_id;
                        stack.push_back(ny[k] * m.w + nx[k]);
                    }
                }
            }
        }
    return out;
}

inline Mask instance_to_mask(const InstanceMap& m, int32_t id = -1) {
    // id < 0 selects "any instance" (foreground union)
    Mask out = make_mask(m.h, m.w);
    for (size_t i = 0; i < m.v.size(); ++i) out.v[i] = id < 0 ? (m.v[i] > 0) : (m.v[i] == id);
    return out;
}

// Pixels of an instance with a 4-neighbor outside it (image border counts).
inline Mask instance_boundaries(const InstanceMap& m) {
    Mask out = make_mask(m.h, m.w);
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) {
            int32_t id = m.at(y, x);
            if (!id) continue;
            const int ny[4] = {y - 1, y + 1, y, y};
            const int nx[4] = {x, x, x - 1, x + 1};
            for (int k = 0; k < 4; ++k) {
                if (ny[k] < 0 || ny[k] >= m.h || nx[k] < 0 || nx[k] >= m.w || m.at(ny[k], nx[k]) != id) {
                    out.at(y, x) = 1;
                    break;
                }
            }
        }
    return out;
}

// ids present in the map (sorted, unique, background excluded)
inline std::vector<int32_t> instance_ids(const InstanceMap& m) {
    std::vector<int32_t> ids(m.v.begin(), m.v.end());
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    if (!ids.empty() && ids.front() == 0) ids.erase(ids.begin());
    return ids;
}

}  // namespace mild
