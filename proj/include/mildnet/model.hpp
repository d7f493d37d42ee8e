#pragma once

#include <cstdio>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mildnet/ops.hpp"
#include "mildnet/optim.hpp"

// Network assembly. The encoder follows the minimal-information-loss layout:
// a two-conv stem, then three stages of [max-pool -> MIL unit -> residual
// unit(s)], dilated residual units at 1/8 resolution, ASPP, and a three-step
// bilinear-upsampling decoder with skip concatenation. The task-specific
// component is a set of 1x1 heads over a shared trunk: gland + contour for
// the standard variant; gland, gland-contour, lumen, lumen-contour for the
// plus variant. Auxiliary heads tap the second dilated residual unit.

namespace mild {

enum class Variant { standard, plus };

inline const char* variant_name(Variant v) { return v == Variant::plus ? "plus" : "standard"; }

inline Variant variant_from_name(const std::string& s) {
    if (s == "standard") return Variant::standard;
    if (s == "plus") return Variant::plus;
    throw ConfigError("unknown variant '" + s + "' (expected standard|plus)");
}

struct ModelConfig {
    int base_channels = 16;
    std::vector<int> level_channels = {16, 32, 64, 128};
    std::vector<int> aspp_rates = {6, 12, 18};
    int aspp_out_channels = 32;
    Variant variant = Variant::standard;
    float dropout_rate = 0.5f;
    int input_size = 464;
    int residual_units_per_stage = 1;
    std::vector<int> dilated_unit_rates = {2, 2};

    void validate() const {
        if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
        if (level_channels.size() != 4) throw ConfigError("level_channels must list 4 stage widths");
        for (int c : level_channels)
            if (c < 1) throw ConfigError("level_channels entries must be >= 1");
        if (aspp_rates.empty()) throw ConfigError("aspp_rates must not be empty");
        for (int r : aspp_rates)
            if (r < 1) throw ConfigError("aspp_rates entries must be >= 1");
        if (aspp_out_channels < 1) throw ConfigError("aspp_out_channels must be >= 1");
        if (dropout_rate < 0.0f || dropout_rate >= 1.0f) throw ConfigError("dropout_rate must be in [0, 1)");
        if (input_size < 8 || input_size % 8 != 0) throw ConfigError("input_size must be a positive multiple of 8");
        if (residual_units_per_stage < 1) throw ConfigError("residual_units_per_stage must be >= 1");
        if (dilated_unit_rates.empty()) throw ConfigError("dilated_unit_rates must not be empty");
        for (int r : dilated_unit_rates)
            if (r < 1) throw ConfigError("dilated_unit_rates entries must be >= 1");
    }

    int branch_count() const { return variant == Variant::plus ? 4 : 2; }
};

struct SegmentationOutput {
    // probability maps (2 channels each; channel 1 is foreground)
    TensorPtr gland_prob, contour_prob;
    TensorPtr lumen_prob, lumen_contour_prob;  // plus variant only
    TensorPtr aux_gland_prob;
    TensorPtr aux_contour_prob;  // standard variant only
    TensorPtr aux_lumen_prob;    // plus variant only
    // matching logits, for the losses
    TensorPtr gland_logits, contour_logits, lumen_logits, lumen_contour_logits;
    TensorPtr aux_gland_logits, aux_contour_logits, aux_lumen_logits;
};

class Model {
  public:
    Model(ModelConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
        cfg_.validate();
        Rng rng(derive_seed(seed, 0x6d696c64));  // weight-init stream
        build(rng);
    }

    const ModelConfig& config() const { return cfg_; }

    const std::vector<std::pair<std::string, TensorPtr>>& parameters() const { return params_; }

    std::vector<TensorPtr> trainable_params() const {
        std::vector<TensorPtr> out;
        out.reserve(params_.size());
        for (auto& [name, t] : params_) out.push_back(t);
        return out;
    }

    // conv kernels only; the L2 regularization set
    std::vector<TensorPtr> kernel_params() const {
        std::vector<TensorPtr> out;
        for (auto& [name, t] : params_)
            if (name.size() > 2 && name.rfind(".w") == name.size() - 2) out.push_back(t);
        return out;
    }

    TensorPtr param(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
        return params_[it->second].second;
    }

    bool has_param(const std::string& name) const { return index_.count(name) > 0; }

    // Copies values for every name present in both models (used to share an
    // encoder between variants and to load checkpoints).
    void copy_matching_params(const Model& src) {
        for (auto& [name, t] : params_)
            if (src.has_param(name)) t->data = src.param(name)->data;
    }

    SegmentationOutput forward(const TensorPtr& image, bool training = false, Rng* rng = nullptr) const {
        TensorPtr aux_tap;
        TensorPtr trunk = forward_trunk(image, training, rng, &aux_tap);
        TensorPtr feat = apply_dropout(trunk, training, rng);
        const int h = image->shape[2], w = image->shape[3];

        SegmentationOutput out;
        out.gland_logits = conv2d(feat, head_gland_->p, head_gland_->name);
        out.contour_logits = conv2d(feat, head_contour_->p, head_contour_->name);
        out.gland_prob = softmax_channels(out.gland_logits);
        out.contour_prob = softmax_channels(out.contour_logits);

        out.aux_gland_logits = bilinear_resize(conv2d(aux_tap, aux_gland_->p, aux_gland_->name), h, w);
        out.aux_gland_prob = softmax_channels(out.aux_gland_logits);
        if (cfg_.variant == Variant::standard) {
            out.aux_contour_logits = bilinear_resize(conv2d(aux_tap, aux_contour_->p, aux_contour_->name), h, w);
            out.aux_contour_prob = softmax_channels(out.aux_contour_logits);
        } else {
            out.lumen_logits = conv2d(feat, head_lumen_->p, head_lumen_->name);
            out.lumen_contour_logits = conv2d(feat, head_lumen_contour_->p, head_lumen_contour_->name);
            out.lumen_prob = softmax_channels(out.lumen_logits);
            out.lumen_contour_prob = softmax_channels(out.lumen_contour_logits);
            out.aux_lumen_logits = bilinear_resize(conv2d(aux_tap, aux_lumen_->p, aux_lumen_->name), h, w);
            out.aux_lumen_prob = softmax_channels(out.aux_lumen_logits);
        }
        return out;
    }

    // Shared feature trunk at full resolution (identical for both variants
    // given identical encoder weights). aux_tap, when requested, receives the
    // deep-supervision tap at 1/8 resolution.
    TensorPtr forward_trunk(const TensorPtr& image, bool training = false, Rng* rng = nullptr,
                            TensorPtr* aux_tap_out = nullptr) const {
        detail::require_4d(image, "Model::forward");
        if (image->shape[1] != 3)
            throw ConfigError("model input must have 3 channels, got " + shape_str(image->shape));
        if (image->shape[2] % 8 != 0 || image->shape[3] % 8 != 0)
            throw ConfigError("model input extents must be divisible by 8, got " + shape_str(image->shape));
        if (training && cfg_.dropout_rate > 0.0f && !rng)
            throw ConfigError("training-mode forward needs an RNG for dropout");

        TensorPtr x = relu(conv2d(image, stem1_->p, stem1_->name));
        x = relu(conv2d(x, stem2_->p, stem2_->name));
        TensorPtr skip0 = x;

        std::vector<TensorPtr> skips;  // full, /2, /4
        skips.push_back(skip0);
        for (int s = 0; s < 3; ++s) {
            x = maxpool2x(x);
            x = mil_unit_forward(mil_[static_cast<size_t>(s)], x, image);
            for (auto& unit : res_[static_cast<size_t>(s)]) x = residual_unit_forward(unit, x);
            if (s < 2) skips.push_back(x);
        }

        TensorPtr aux_tap;
        for (size_t u = 0; u < dil_.size(); ++u) {
            x = residual_unit_forward(dil_[u], x);
            if (u == aux_tap_index_) aux_tap = x;
        }
        if (aux_tap_out) *aux_tap_out = aux_tap;

        x = aspp_forward(x, training, rng);

        for (int d = 0; d < 3; ++d) x = decoder_forward(dec_[static_cast<size_t>(d)], x, skips[static_cast<size_t>(2 - d)]);
        return x;
    }

  private:
    struct ConvLayer {
        ConvParams p;
        std::string name;
    };
    struct ResUnit {
        ConvLayer c1, c2;
        std::optional<ConvLayer> proj;
    };
    struct MilUnit {
        ConvLayer f1, f2, g1, g2;
    };
    struct AsppBranch {
        std::optional<ConvLayer> conv3;  // absent on the pooled branch
        ConvLayer c1, c2;
        int rate = 1;
    };
    struct DecBlock {
        ConvLayer skip1x1, fuse;
    };

    ModelConfig cfg_;
    std::vector<std::pair<std::string, TensorPtr>> params_;
    std::unordered_map<std::string, size_t> index_;

    std::optional<ConvLayer> stem1_, stem2_;
    std::vector<MilUnit> mil_;
    std::vector<std::vector<ResUnit>> res_;
    std::vector<ResUnit> dil_;
    size_t aux_tap_index_ = 0;
    std::vector<AsppBranch> aspp_;
    std::optional<AsppBranch> aspp_gap_;
    std::vector<DecBlock> dec_;
    std::optional<ConvLayer> head_gland_, head_contour_, head_lumen_, head_lumen_contour_;
    std::optional<ConvLayer> aux_gland_, aux_contour_, aux_lumen_;
    mutable bool warned_small_extent_ = false;

    TensorPtr register_param(const std::string& name, TensorPtr t) {
        index_[name] = params_.size();
        params_.emplace_back(name, std::move(t));
        return params_.back().second;
    }

    ConvLayer make_conv(const std::string& name, int out_ch, int in_ch, int k, Rng& rng, int dilation = 1) {
        ConvLayer layer;
        layer.name = name;
        layer.p.kernel = register_param(name + ".w", xavier_init({out_ch, in_ch, k, k}, rng));
        layer.p.bias = register_param(name + ".b", zero_init({out_ch}));
        layer.p.dilation_rate = dilation;
        return layer;
    }

    void build(Rng& rng) {
        const auto& L = cfg_.level_channels;
        stem1_ = make_conv("stem.conv1", cfg_.base_channels, 3, 3, rng);
        stem2_ = make_conv("stem.conv2", L[0], cfg_.base_channels, 3, rng);

        mil_.clear();
        res_.assign(3, {});
        int ch = L[0];
        for (int s = 0; s < 3; ++s) {
            std::string ms = "enc" + std::to_string(s + 1) + ".mil";
            MilUnit m;
            m.f1 = make_conv(ms + ".f1", ch, ch, 3, rng);
            m.f2 = make_conv(ms + ".f2", ch, ch, 3, rng);
            m.g1 = make_conv(ms + ".g1", ch, 3, 3, rng);
            m.g2 = make_conv(ms + ".g2", ch, 2 * ch, 3, rng);
            mil_.push_back(std::move(m));

            int out_ch = L[static_cast<size_t>(s) + 1];
            for (int u = 0; u < cfg_.residual_units_per_stage; ++u) {
                std::string rs = "enc" + std::to_string(s + 1) + ".res" + std::to_string(u + 1);
                int in_ch = (u == 0) ? ch : out_ch;
                ResUnit unit;
                unit.c1 = make_conv(rs + ".conv1", out_ch, in_ch, 3, rng);
                unit.c2 = make_conv(rs + ".conv2", out_ch, out_ch, 3, rng);
                if (in_ch != out_ch) unit.proj = make_conv(rs + ".proj", out_ch, in_ch, 1, rng);
                res_[static_cast<size_t>(s)].push_back(std::move(unit));
            }
            ch = out_ch;
        }

        dil_.clear();
        for (size_t u = 0; u < cfg_.dilated_unit_rates.size(); ++u) {
            std::string ds = "dil" + std::to_string(u + 1);
            ResUnit unit;
            unit.c1 = make_conv(ds + ".conv1", ch, ch, 3, rng, cfg_.dilated_unit_rates[u]);
            unit.c2 = make_conv(ds + ".conv2", ch, ch, 3, rng, cfg_.dilated_unit_rates[u]);
            dil_.push_back(std::move(unit));
        }
        aux_tap_index_ = std::min<size_t>(1, dil_.size() - 1);  // second unit when present

        const int mid = cfg_.aspp_out_channels * 2;
        aspp_.clear();
        for (int r : cfg_.aspp_rates) {
            std::string as = "aspp.rate" + std::to_string(r);
            AsppBranch b;
            b.rate = r;
            b.conv3 = make_conv(as + ".conv3", mid, ch, 3, rng, r);
            b.c1 = make_conv(as + ".c1", mid, mid, 1, rng);
            b.c2 = make_conv(as + ".c2", cfg_.aspp_out_channels, mid, 1, rng);
            aspp_.push_back(std::move(b));
        }
        AsppBranch gap;
        gap.c1 = make_conv("aspp.gap.c1", mid, ch, 1, rng);
        gap.c2 = make_conv("aspp.gap.c2", cfg_.aspp_out_channels, mid, 1, rng);
        aspp_gap_ = std::move(gap);

        const int aspp_total = static_cast<int>(cfg_.aspp_rates.size() + 1) * cfg_.aspp_out_channels;
        const int dec_in[3] = {aspp_total, L[2], L[1]};
        const int dec_skip[3] = {L[2], L[1], L[0]};
        const int dec_out[3] = {L[2], L[1], L[0]};
        dec_.clear();
        for (int d = 0; d < 3; ++d) {
            std::string ds = "dec" + std::to_string(d + 1);
            DecBlock b;
            b.skip1x1 = make_conv(ds + ".skip", dec_in[d], dec_skip[d], 1, rng);
            b.fuse = make_conv(ds + ".fuse", dec_out[d], 2 * dec_in[d], 3, rng);
            dec_.push_back(std::move(b));
        }

        head_gland_ = make_conv("head.gland", 2, L[0], 1, rng);
        head_contour_ = make_conv("head.contour", 2, L[0], 1, rng);
        aux_gland_ = make_conv("aux.gland", 2, ch, 1, rng);
        if (cfg_.variant == Variant::standard) {
            aux_contour_ = make_conv("aux.contour", 2, ch, 1, rng);
        } else {
            head_lumen_ = make_conv("head.lumen", 2, L[0], 1, rng);
            head_lumen_contour_ = make_conv("head.lumen_contour", 2, L[0], 1, rng);
            aux_lumen_ = make_conv("aux.lumen", 2, ch, 1, rng);
        }
    }

    TensorPtr apply_dropout(const TensorPtr& x, bool training, Rng* rng) const {
        if (!training || cfg_.dropout_rate <= 0.0f) return x;
        return dropout(x, cfg_.dropout_rate, true, *rng);
    }

    TensorPtr residual_unit_forward(const ResUnit& u, const TensorPtr& x) const {
        TensorPtr f = conv2d(relu(conv2d(x, u.c1.p, u.c1.name)), u.c2.p, u.c2.name);
        TensorPtr shortcut = u.proj ? conv2d(x, u.proj->p, u.proj->name) : x;
        return add(f, shortcut);
    }

    TensorPtr mil_unit_forward(const MilUnit& m, const TensorPtr& x, const TensorPtr& image) const {
        TensorPtr v = bicubic_resize(image, x->shape[2], x->shape[3]);
        TensorPtr f = conv2d(relu(conv2d(x, m.f1.p, m.f1.name)), m.f2.p, m.f2.name);
        TensorPtr g = conv2d(concat_channels(relu(conv2d(v, m.g1.p, m.g1.name)), x), m.g2.p, m.g2.name);
        return add(f, g);
    }

    TensorPtr aspp_forward(const TensorPtr& x, bool training, Rng* rng) const {
        const int h = x->shape[2], w = x->shape[3];
        if (!warned_small_extent_) {
            for (const auto& b : aspp_)
                if (h <= b.rate || w <= b.rate) {
                    std::fprintf(stderr,
                                 "mildnet: ASPP input extent %dx%d <= dilation rate %d; branch degenerates toward 1x1\n",
                                 h, w, b.rate);
                    warned_small_extent_ = true;
                }
        }
        TensorPtr out;
        for (const auto& b : aspp_) {
            TensorPtr y = relu(conv2d(x, b.conv3->p, b.conv3->name));
            y = relu(conv2d(y, b.c1.p, b.c1.name));
            y = apply_dropout(y, training, rng);
            y = conv2d(y, b.c2.p, b.c2.name);
            out = out ? concat_channels(out, y) : y;
        }
        TensorPtr g = global_avg_pool(x);
        g = relu(conv2d(g, aspp_gap_->c1.p, aspp_gap_->c1.name));
        g = apply_dropout(g, training, rng);
        g = conv2d(g, aspp_gap_->c2.p, aspp_gap_->c2.name);
        g = broadcast_hw(g, h, w);
        return concat_channels(out, g);
    }

    TensorPtr decoder_forward(const DecBlock& b, const TensorPtr& x, const TensorPtr& skip) const {
        if (skip->shape[2] != 2 * x->shape[2] || skip->shape[3] != 2 * x->shape[3])
            throw ConfigError("decoder skip extents " + shape_str(skip->shape) + " are not 2x input " +
                              shape_str(x->shape));
        TensorPtr up = upsample2x(x);
        TensorPtr sk = conv2d(skip, b.skip1x1.p, b.skip1x1.name);
        return relu(conv2d(concat_channels(up, sk), b.fuse.p, b.fuse.name));
    }

  public:
    // Building blocks exposed for composition tests: each runs the same code
    // path as forward() on caller-provided parameters.
    static TensorPtr residual_unit(const TensorPtr& x, const ConvParams& c1, const ConvParams& c2,
                                   const ConvParams* proj = nullptr) {
        TensorPtr f = conv2d(relu(conv2d(x, c1)), c2);
        TensorPtr shortcut = proj ? conv2d(x, *proj) : x;
        if (!proj && x->shape[1] != f->shape[1])
            throw ConfigError("residual_unit: channel mismatch without projection");
        return add(f, shortcut);
    }

    static TensorPtr mil_unit(const TensorPtr& x, const TensorPtr& original_image, const ConvParams& f1,
                              const ConvParams& f2, const ConvParams& g1, const ConvParams& g2) {
        TensorPtr v = bicubic_resize(original_image, x->shape[2], x->shape[3]);
        TensorPtr f = conv2d(relu(conv2d(x, f1)), f2);
        TensorPtr g = conv2d(concat_channels(relu(conv2d(v, g1)), x), g2);
        return add(f, g);
    }
};

}  // namespace mild
