#pragma once

#include <string>
#include <vector>

#include "mildnet/model.hpp"
#include "mildnet/morphology.hpp"
#include "mildnet/ops.hpp"

namespace mild {

struct TrainConfig {
    double learning_rate = 1e-4;
    int batch_size = 2;
    double gamma = 1e-5;
    double lambda_init = 1.0;
    int lambda_decay_every_epochs = 8;
    double lambda_decay_factor = 10.0;
    int max_epochs = 30;
    uint64_t seed = 0;

    void validate() const {
        if (learning_rate <= 0 || batch_size <= 0 || gamma < 0 || lambda_init <= 0 ||
            lambda_decay_every_epochs <= 0 || lambda_decay_factor <= 0 || max_epochs <= 0)
            throw ConfigError("train config fields must be positive");
    }
};

// Discount weight for the auxiliary losses: starts at lambda_init and is
// divided by lambda_decay_factor after every lambda_decay_every_epochs epochs.
inline double lambda_schedule(int epoch, const TrainConfig& cfg) {
    if (epoch < 0) throw ConfigError("lambda_schedule: epoch must be >= 0");
    double lam = cfg.lambda_init;
    for (int k = 0; k < epoch / cfg.lambda_decay_every_epochs; ++k) lam /= cfg.lambda_decay_factor;
    return lam;
}

// Per-branch binary ground truth derived from an instance map. The contour
// map is the instance boundary dilated to the requested band width.
struct LabelBundle {
    Mask gland, contour;
    Mask lumen, lumen_contour;
    bool has_lumen = false;
};

inline Mask contour_band(const InstanceMap& inst, int width) {
    Mask b = instance_boundaries(inst);
    if (width > 1) b = dilate(b, square_offsets(width - 1));
    return b;
}

inline LabelBundle derive_labels(const InstanceMap& inst, const InstanceMap* lumen = nullptr, int contour_width = 2) {
    LabelBundle lb;
    lb.gland = instance_to_mask(inst);
    lb.contour = contour_band(inst, contour_width);
    if (lumen) {
        if (lumen->h != inst.h || lumen->w != inst.w)
            throw ConfigError("lumen label extents differ from instance map");
        lb.lumen = instance_to_mask(*lumen);
        lb.lumen_contour = contour_band(*lumen, contour_width);
        lb.has_lumen = true;
    }
    return lb;
}

// Stacked binary maps for a batch, one MaskBatch per branch.
struct LabelBatch {
    MaskBatch gland, contour, lumen, lumen_contour;
    bool has_lumen = false;
};

inline MaskBatch stack_masks(const std::vector<const Mask*>& masks) {
    MaskBatch mb;
    mb.n = static_cast<int>(masks.size());
    mb.h = masks.empty() ? 0 : masks[0]->h;
    mb.w = masks.empty() ? 0 : masks[0]->w;
    mb.v.reserve(static_cast<size_t>(mb.n) * mb.h * mb.w);
    for (const Mask* m : masks) {
        if (m->h != mb.h || m->w != mb.w) throw ConfigError("stack_masks: extents differ across batch");
        mb.v.insert(mb.v.end(), m->v.begin(), m->v.end());
    }
    return mb;
}

inline LabelBatch stack_labels(const std::vector<const LabelBundle*>& items) {
    LabelBatch lb;
    std::vector<const Mask*> g, c, l, lc;
    lb.has_lumen = !items.empty() && items[0]->has_lumen;
    for (const LabelBundle* it : items) {
        g.push_back(&it->gland);
        c.push_back(&it->contour);
        if (lb.has_lumen) {
            if (!it->has_lumen) throw ConfigError("stack_labels: lumen maps missing for part of the batch");
            l.push_back(&it->lumen);
            lc.push_back(&it->lumen_contour);
        }
    }
    lb.gland = stack_masks(g);
    lb.contour = stack_masks(c);
    if (lb.has_lumen) {
        lb.lumen = stack_masks(l);
        lb.lumen_contour = stack_masks(lc);
    }
    return lb;
}

struct LossTerms {
    double gland = 0, contour = 0, lumen = 0, lumen_contour = 0;
    double aux_gland = 0, aux_contour = 0, aux_lumen = 0;
    double reg = 0;  // raw sum of squared weights, before gamma
    double total = 0;
};

namespace detail {

inline TensorPtr regularization(const std::vector<TensorPtr>& weights) {
    TensorPtr reg;
    for (const auto& w : weights) {
        TensorPtr s = sum_squares(w);
        reg = reg ? add(reg, s) : s;
    }
    return reg ? reg : make_scalar(0.0f);
}

}  // namespace detail

// L_total = L_g + L_c + lambda*(L_ag + L_ac) + gamma*|w|^2, every term a
// mean-reduced softmax cross-entropy.
inline TensorPtr total_loss(const SegmentationOutput& out, const LabelBatch& labels, double lambda, double gamma,
                            const std::vector<TensorPtr>& reg_weights, LossTerms* terms = nullptr) {
    if (!out.aux_contour_logits) throw ConfigError("total_loss expects a standard-variant output");
    TensorPtr lg = softmax_cross_entropy(out.gland_logits, labels.gland);
    TensorPtr lc = softmax_cross_entropy(out.contour_logits, labels.contour);
    TensorPtr lag = softmax_cross_entropy(out.aux_gland_logits, labels.gland);
    TensorPtr lac = softmax_cross_entropy(out.aux_contour_logits, labels.contour);
    TensorPtr reg = detail::regularization(reg_weights);
    TensorPtr total = add(add(add(lg, lc), scale(add(lag, lac), lambda)), scale(reg, gamma));
    if (terms) {
        terms->gland = lg->data[0];
        terms->contour = lc->data[0];
        terms->aux_gland = lag->data[0];
        terms->aux_contour = lac->data[0];
        terms->reg = reg->data[0];
        terms->total = total->data[0];
    }
    return total;
}

// Plus-variant loss: four main branches, auxiliary terms for gland and lumen
// only (no contour auxiliaries).
inline TensorPtr total_loss_plus(const SegmentationOutput& out, const LabelBatch& labels, double lambda, double gamma,
                                 const std::vector<TensorPtr>& reg_weights, LossTerms* terms = nullptr) {
    if (!out.lumen_logits || !out.lumen_contour_logits || !out.aux_lumen_logits)
        throw ConfigError("total_loss_plus expects a plus-variant output");
    if (!labels.has_lumen) throw ConfigError("total_loss_plus requires lumen ground truth");
    TensorPtr lg = softmax_cross_entropy(out.gland_logits, labels.gland);
    TensorPtr lgc = softmax_cross_entropy(out.contour_logits, labels.contour);
    TensorPtr ll = softmax_cross_entropy(out.lumen_logits, labels.lumen);
    TensorPtr llc = softmax_cross_entropy(out.lumen_contour_logits, labels.lumen_contour);
    TensorPtr lag = softmax_cross_entropy(out.aux_gland_logits, labels.gland);
    TensorPtr lal = softmax_cross_entropy(out.aux_lumen_logits, labels.lumen);
    TensorPtr reg = detail::regularization(reg_weights);
    TensorPtr total =
        add(add(add(add(lg, lgc), add(ll, llc)), scale(add(lag, lal), lambda)), scale(reg, gamma));
    if (terms) {
        terms->gland = lg->data[0];
        terms->contour = lgc->data[0];
        terms->lumen = ll->data[0];
        terms->lumen_contour = llc->data[0];
        terms->aux_gland = lag->data[0];
        terms->aux_lumen = lal->data[0];
        terms->reg = reg->data[0];
        terms->total = total->data[0];
    }
    return total;
}

}  // namespace mild
