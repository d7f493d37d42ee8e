#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "mildnet/image.hpp"
#include "mildnet/morphology.hpp"

// Object-level evaluation triad in the GlaS challenge convention, frozen as:
//  - detection F1: a prediction is a true positive when it overlaps at least
//    50% of some ground-truth instance's area; each side matches at most
//    once, assignment is greedy by descending overlap (ties broken by lower
//    pred id, then lower gt id).
//  - object Dice: 0.5*[sum_i w_i Dice(G_i, S*(G_i)) + sum_j w~_j Dice(G*(S_j), S_j)]
//    with area-fraction weights; an object's counterpart is the one of
//    maximal overlap, Dice 0 when nothing overlaps.
//  - object Hausdorff: the same weighted structure over Euclidean Hausdorff
//    distances between boundary pixel sets; an object with no overlapping
//    counterpart pairs with the nearest counterpart (minimal boundary-to-
//    boundary distance); if the other side is empty the image diagonal is
//    charged.

namespace mild {

struct InstanceStats {
    std::vector<int32_t> ids;
    std::map<int32_t, size_t> area;
    std::map<std::pair<int32_t, int32_t>, size_t> overlap;  // (pred, gt) -> pixels
};

inline InstanceStats instance_overlaps(const InstanceMap& pred, const InstanceMap& gt) {
    if (pred.h != gt.h || pred.w != gt.w) throw ConfigError("instance maps must share extents");
    InstanceStats s;
    for (size_t i = 0; i < pred.v.size(); ++i)
        if (pred.v[i] > 0 && gt.v[i] > 0) ++s.overlap[{pred.v[i], gt.v[i]}];
    return s;
}

inline std::map<int32_t, size_t> instance_areas(const InstanceMap& m) {
    std::map<int32_t, size_t> area;
    for (int32_t id : m.v)
        if (id > 0) ++area[id];
    return area;
}

struct MatchEntry {
    int32_t pred_id = 0, gt_id = 0;
    size_t overlap = 0;
};

struct DetectionResult {
    int tp = 0, fp = 0, fn = 0;
    std::vector<MatchEntry> matches;

    double f1() const {
        if (tp + fp + fn == 0) return 1.0;  // both sides empty: perfect
        return 2.0 * tp / (2.0 * tp + fp + fn);
    }
};

inline DetectionResult detection_match(const InstanceMap& pred, const InstanceMap& gt) {
    auto overlaps = instance_overlaps(pred, gt).overlap;
    auto pred_area = instance_areas(pred);
    auto gt_area = instance_areas(gt);

    struct Cand {
        size_t ov;
        int32_t p, g;
    };
    std::vector<Cand> cands;
    for (const auto& [pg, ov] : overlaps)
        if (2 * ov >= gt_area[pg.second]) cands.push_back({ov, pg.first, pg.second});
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.ov != b.ov) return a.ov > b.ov;
        if (a.p != b.p) return a.p < b.p;
        return a.g < b.g;
    });

    DetectionResult r;
    std::map<int32_t, bool> pred_used, gt_used;
    for (const auto& c : cands) {
        if (pred_used[c.p] || gt_used[c.g]) continue;
        pred_used[c.p] = gt_used[c.g] = true;
        r.matches.push_back({c.p, c.g, c.ov});
        ++r.tp;
    }
    r.fp = static_cast<int>(pred_area.size()) - r.tp;
    r.fn = static_cast<int>(gt_area.size()) - r.tp;
    return r;
}

inline double detection_f1(const InstanceMap& pred, const InstanceMap& gt) { return detection_match(pred, gt).f1(); }

inline double object_dice(const InstanceMap& pred, const InstanceMap& gt) {
    auto overlaps = instance_overlaps(pred, gt).overlap;
    auto pred_area = instance_areas(pred);
    auto gt_area = instance_areas(gt);
    if (pred_area.empty() && gt_area.empty()) return 1.0;
    if (pred_area.empty() || gt_area.empty()) return 0.0;

    size_t gt_total = 0, pred_total = 0;
    for (const auto& [id, a] : gt_area) gt_total += a;
    for (const auto& [id, a] : pred_area) pred_total += a;

    // counterpart of maximal overlap per object; ties by lower counterpart id
    std::map<int32_t, std::pair<size_t, int32_t>> best_for_gt, best_for_pred;  // id -> (ov, counterpart)
    for (const auto& [pg, ov] : overlaps) {
        auto& bg = best_for_gt[pg.second];
        if (ov > bg.first || (ov == bg.first && bg.second == 0)) bg = {ov, pg.first};
        auto& bp = best_for_pred[pg.first];
        if (ov > bp.first || (ov == bp.first && bp.second == 0)) bp = {ov, pg.second};
    }

    double term_gt = 0.0;
    for (const auto& [gid, area] : gt_area) {
        auto it = best_for_gt.find(gid);
        double dice = 0.0;
        if (it != best_for_gt.end() && it->second.first > 0) {
            size_t ov = it->second.first;
            dice = 2.0 * static_cast<double>(ov) / (static_cast<double>(area) + pred_area[it->second.second]);
        }
        term_gt += (static_cast<double>(area) / gt_total) * dice;
    }
    double term_pred = 0.0;
    for (const auto& [pid, area] : pred_area) {
        auto it = best_for_pred.find(pid);
        double dice = 0.0;
        if (it != best_for_pred.end() && it->second.first > 0) {
            size_t ov = it->second.first;
            dice = 2.0 * static_cast<double>(ov) / (static_cast<double>(area) + gt_area[it->second.second]);
        }
        term_pred += (static_cast<double>(area) / pred_total) * dice;
    }
    return 0.5 * (term_gt + term_pred);
}

namespace detail {

using PixelList = std::vector<std::pair<int, int>>;

inline std::map<int32_t, PixelList> boundary_pixels_by_id(const InstanceMap& m) {
    Mask b = instance_boundaries(m);
    std::map<int32_t, PixelList> out;
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x)
            if (b.at(y, x)) out[m.at(y, x)].emplace_back(y, x);
    return out;
}

inline int64_t min_sq_dist(const PixelList& a, const PixelList& b) {
    int64_t best = std::numeric_limits<int64_t>::max();
    for (const auto& [ay, ax] : a)
        for (const auto& [by, bx] : b) {
            int64_t dy = ay - by, dx = ax - bx;
            best = std::min(best, dy * dy + dx * dx);
        }
    return best;
}

inline double hausdorff_boundary(const PixelList& a, const PixelList& b) {
    int64_t worst = 0;
    for (const auto& [ay, ax] : a) {
        int64_t nearest = std::numeric_limits<int64_t>::max();
        for (const auto& [by, bx] : b) {
            int64_t dy = ay - by, dx = ax - bx;
            nearest = std::min(nearest, dy * dy + dx * dx);
        }
        worst = std::max(worst, nearest);
    }
    for (const auto& [by, bx] : b) {
        int64_t nearest = std::numeric_limits<int64_t>::max();
        for (const auto& [ay, ax] : a) {
            int64_t dy = ay - by, dx = ax - bx;
            nearest = std::min(nearest, dy * dy + dx * dx);
        }
        worst = std::max(worst, nearest);
    }
    return std::sqrt(static_cast<double>(worst));
}

}  // namespace detail

inline double object_hausdorff(const InstanceMap& pred, const InstanceMap& gt) {
    auto overlaps = instance_overlaps(pred, gt).overlap;
    auto pred_area = instance_areas(pred);
    auto gt_area = instance_areas(gt);
    if (pred_area.empty() && gt_area.empty()) return 0.0;
    const double diagonal = std::sqrt(static_cast<double>(pred.h) * pred.h + static_cast<double>(pred.w) * pred.w);

    auto pred_bnd = detail::boundary_pixels_by_id(pred);
    auto gt_bnd = detail::boundary_pixels_by_id(gt);

    std::map<int32_t, std::pair<size_t, int32_t>> best_for_gt, best_for_pred;
    for (const auto& [pg, ov] : overlaps) {
        auto& bg = best_for_gt[pg.second];
        if (ov > bg.first || (ov == bg.first && bg.second == 0)) bg = {ov, pg.first};
        auto& bp = best_for_pred[pg.first];
        if (ov > bp.first || (ov == bp.first && bp.second == 0)) bp = {ov, pg.second};
    }

    auto nearest_counterpart = [](const detail::PixelList& own,
                                  const std::map<int32_t, detail::PixelList>& others) -> const detail::PixelList* {
        const detail::PixelList* best = nullptr;
        int64_t best_d = std::numeric_limits<int64_t>::max();
        for (const auto& [id, pix] : others) {
            int64_t d = detail::min_sq_dist(own, pix);
            if (d < best_d) {
                best_d = d;
                best = &pix;
            }
        }
        return best;
    };

    size_t gt_total = 0, pred_total = 0;
    for (const auto& [id, a] : gt_area) gt_total += a;
    for (const auto& [id, a] : pred_area) pred_total += a;

    double term_gt = 0.0;
    for (const auto& [gid, area] : gt_area) {
        double h;
        auto it = best_for_gt.find(gid);
        if (it != best_for_gt.end() && it->second.first > 0) {
            h = detail::hausdorff_boundary(gt_bnd[gid], pred_bnd[it->second.second]);
        } else {
            const detail::PixelList* near = pred_bnd.empty() ? nullptr : nearest_counterpart(gt_bnd[gid], pred_bnd);
            h = near ? detail::hausdorff_boundary(gt_bnd[gid], *near) : diagonal;
        }
        term_gt += (static_cast<double>(area) / gt_total) * h;
    }
    double term_pred = 0.0;
    for (const auto& [pid, area] : pred_area) {
        double h;
        auto it = best_for_pred.find(pid);
        if (it != best_for_pred.end() && it->second.first > 0) {
            h = detail::hausdorff_boundary(pred_bnd[pid], gt_bnd[it->second.second]);
        } else {
            const detail::PixelList* near = gt_bnd.empty() ? nullptr : nearest_counterpart(pred_bnd[pid], gt_bnd);
            h = near ? detail::hausdorff_boundary(pred_bnd[pid], *near) : diagonal;
        }
        term_pred += (static_cast<double>(area) / pred_total) * h;
    }
    if (pred_area.empty()) return term_gt;  // weights of the empty side vanish
    if (gt_area.empty()) return term_pred;
    return 0.5 * (term_gt + term_pred);
}

// --- reports -------------------------------------------------------------------

struct EvalReport {
    double f1 = 0.0;
    int tp = 0, fp = 0, fn = 0;
    double object_dice = 0.0;
    double object_hausdorff = 0.0;
    std::vector<MatchEntry> matches;
};

inline EvalReport evaluate_instances(const InstanceMap& pred, const InstanceMap& gt) {
    EvalReport r;
    DetectionResult det = detection_match(pred, gt);
    r.f1 = det.f1();
    r.tp = det.tp;
    r.fp = det.fp;
    r.fn = det.fn;
    r.matches = det.matches;
    r.object_dice = object_dice(pred, gt);
    r.object_hausdorff = object_hausdorff(pred, gt);
    return r;
}

inline void write_eval_report(const std::string& path, const std::string& name, const EvalReport& r) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write report: " + path);
    char buf[256];
    std::snprintf(buf, sizeof(buf), "image=%s\nf1=%.9g\ntp=%d\nfp=%d\nfn=%d\nobject_dice=%.9g\nobject_hausdorff=%.9g\n",
                  name.c_str(), r.f1, r.tp, r.fp, r.fn, r.object_dice, r.object_hausdorff);
    out << buf;
    out << "matches=pred_id:gt_id:overlap_px\n";
    for (const auto& m : r.matches) {
        std::snprintf(buf, sizeof(buf), "match=%d:%d:%zu\n", m.pred_id, m.gt_id, m.overlap);
        out << buf;
    }
}

// one tab-separated row per image, for aggregation
inline std::string eval_summary_row(const std::string& name, const EvalReport& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s\t%.9g\t%d\t%d\t%d\t%.9g\t%.9g", name.c_str(), r.f1, r.tp, r.fp, r.fn,
                  r.object_dice, r.object_hausdorff);
    return buf;
}

}  // namespace mild
