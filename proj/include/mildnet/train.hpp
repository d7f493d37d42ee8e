#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "mildnet/checkpoint.hpp"
#include "mildnet/dataset.hpp"
#include "mildnet/infer.hpp"
#include "mildnet/loss.hpp"
#include "mildnet/metrics.hpp"
#include "mildnet/postprocess.hpp"

// Training loop: per-epoch lambda schedule, Adam updates, seeded shuffling
// and augmentation, periodic validation (object-level Dice on the gland
// branch) and best-checkpoint retention. The log is newline-delimited
// key=value records:
//   step=N epoch=E lambda=L loss=... loss_g=... loss_c=... [loss_l=...
//   loss_lc=...] loss_ag=... [loss_ac=...|loss_al=...] reg=...
//   val epoch=E step=N dice=D [lumen_dice=D]
//   best epoch=E dice=D

namespace mild {

struct TrainOptions {
    TrainConfig cfg;
    bool augment_enabled = true;
    AugmentSpec augment;
    int patch_size = 0;  // 0 = automatic: 500 when images allow it, else the model input size
    int contour_width = 2;
    int val_every_epochs = 1;
    int64_t max_steps = 0;        // 0 = run to max_epochs
    double stop_at_val_dice = 0;  // early stop once best validation dice reaches this (0 = off)
    std::string log_path;         // optional log file
    int start_epoch = 0;          // resume point
    int64_t start_step = 0;
};

struct TrainResult {
    Checkpoint best, last;
    double best_val_dice = -1.0;
    int best_epoch = -1;
    double initial_loss = 0.0, final_loss = 0.0;
    int64_t steps = 0;
    std::vector<std::string> log_lines;
};

namespace detail {

inline void fisher_yates(std::vector<size_t>& v, Rng& rng) {
    for (size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
}

struct ValScore {
    double gland = 0.0, lumen = 0.0;
    bool has_lumen = false;
};

inline ValScore validation_dice(const Model& model, const Dataset& data, const std::vector<size_t>& idx) {
    ValScore s;
    if (idx.empty()) return s;
    double gsum = 0.0, lsum = 0.0;
    for (size_t i : idx) {
        const DatasetItem& item = data.items[i];
        BranchProbs p = infer_probs(model, item.image);
        gsum += object_dice(postprocess(p.gland.fg), item.labels);
        if (p.lumen && item.lumen) {
            lsum += object_dice(postprocess(p.lumen->fg), *item.lumen);
            s.has_lumen = true;
        }
    }
    s.gland = gsum / static_cast<double>(idx.size());
    s.lumen = s.has_lumen ? lsum / static_cast<double>(idx.size()) : 0.0;
    return s;
}

}  // namespace detail

inline TrainResult train(Model& model, const Dataset& data, const TrainOptions& opt,
                         AdamState* resume_adam = nullptr) {
    opt.cfg.validate();
    const ModelConfig& mc = model.config();
    const bool plus = mc.variant == Variant::plus;
    if (plus && !data.has_lumen())
        throw ConfigError("plus-variant training requires lumen label maps for every item");
    if (data.train_idx.empty()) throw ConfigError("no training items");

    const int S = mc.input_size;
    int patch = opt.patch_size;
    if (patch <= 0) {
        patch = 500;
        for (size_t i : data.train_idx)
            patch = std::min({patch, std::max(S, data.items[i].image.h), std::max(S, data.items[i].image.w)});
        patch = std::max(patch, S);
    }
    if (patch < S) throw ConfigError("patch size is smaller than the model input size");

    AugmentSpec aug = opt.augment_enabled ? opt.augment : AugmentSpec::disabled(S);
    aug.crop = S;

    // materialize training patches once; augmentation re-randomizes per epoch
    std::vector<Sample> patches;
    for (size_t i : data.train_idx) {
        const DatasetItem& item = data.items[i];
        auto refs = extract_patches(item.image, item.labels, item.lumen ? &*item.lumen : nullptr, patch, patch / 2);
        for (auto& r : refs) patches.push_back(std::move(r.sample));
    }

    std::ofstream log_file;
    if (!opt.log_path.empty()) {
        log_file.open(opt.log_path);
        if (!log_file) throw DataError("cannot write training log: " + opt.log_path);
    }
    TrainResult result;
    auto emit = [&](const std::string& line) {
        result.log_lines.push_back(line);
        if (log_file) log_file << line << '\n';
    };

    AdamState local_adam;
    AdamState& adam = resume_adam ? *resume_adam : local_adam;
    Rng dropout_rng(derive_seed(opt.cfg.seed, 0xd70, static_cast<uint64_t>(opt.start_epoch)));
    const std::vector<size_t>& val_idx = data.val_idx.empty() ? data.train_idx : data.val_idx;

    int64_t step = opt.start_step;
    bool first_loss_seen = step > 0;
    bool stop = false;
    char line[512];
    int epoch = opt.start_epoch;
    int64_t last_val_step = -1;

    auto run_validation = [&](int ep) {
        last_val_step = step;
        detail::ValScore vs = detail::validation_dice(model, data, val_idx);
        if (vs.has_lumen)
            std::snprintf(line, sizeof(line), "val epoch=%d step=%lld dice=%.6g lumen_dice=%.6g", ep,
                          static_cast<long long>(step), vs.gland, vs.lumen);
        else
            std::snprintf(line, sizeof(line), "val epoch=%d step=%lld dice=%.6g", ep, static_cast<long long>(step),
                          vs.gland);
        emit(line);
        if (vs.gland > result.best_val_dice) {
            result.best_val_dice = vs.gland;
            result.best_epoch = ep;
            result.best = checkpoint_from_model(model, ep, step, &adam);
            std::snprintf(line, sizeof(line), "best epoch=%d dice=%.6g", ep, vs.gland);
            emit(line);
        }
        if (opt.stop_at_val_dice > 0 && result.best_val_dice >= opt.stop_at_val_dice) stop = true;
    };

    for (; epoch < opt.cfg.max_epochs && !stop; ++epoch) {
        const double lambda = lambda_schedule(epoch, opt.cfg);
        std::vector<size_t> order(patches.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng(derive_seed(opt.cfg.seed, 0x54f, static_cast<uint64_t>(epoch)));
        detail::fisher_yates(order, shuffle_rng);

        for (size_t b = 0; b < order.size() && !stop; b += static_cast<size_t>(opt.cfg.batch_size)) {
            const size_t bsz = std::min(static_cast<size_t>(opt.cfg.batch_size), order.size() - b);

            auto batch_img = make_tensor({static_cast<int>(bsz), 3, S, S});
            std::vector<LabelBundle> bundles(bsz);
            for (size_t k = 0; k < bsz; ++k) {
                uint64_t aseed = derive_seed(opt.cfg.seed, 0xa6, static_cast<uint64_t>(epoch),
                                             static_cast<uint64_t>(order[b + k]));
                Sample s = augment(patches[order[b + k]], aug, aseed);
                bundles[k] = derive_labels(s.labels, s.lumen ? &*s.lumen : nullptr, opt.contour_width);
                for (int c = 0; c < 3; ++c)
                    for (int y = 0; y < S; ++y)
                        for (int x = 0; x < S; ++x) batch_img->at(static_cast<int>(k), c, y, x) = s.image.at(y, x, c);
            }
            std::vector<const LabelBundle*> bundle_ptrs;
            for (auto& lb : bundles) bundle_ptrs.push_back(&lb);
            LabelBatch labels = stack_labels(bundle_ptrs);

            LossTerms terms;
            try {
                SegmentationOutput out = model.forward(batch_img, /*training=*/true, &dropout_rng);
                TensorPtr loss = plus ? total_loss_plus(out, labels, lambda, opt.cfg.gamma, model.kernel_params(), &terms)
                                      : total_loss(out, labels, lambda, opt.cfg.gamma, model.kernel_params(), &terms);
                backward(loss);
                adam_step(model.parameters(), adam, opt.cfg.learning_rate);
            } catch (const NumericError& e) {
                throw NumericError("training diverged at step " + std::to_string(step + 1) + ": " + e.what());
            }
            zero_grads(model.trainable_params());

            ++step;
            if (!first_loss_seen) {
                result.initial_loss = terms.total;
                first_loss_seen = true;
            }
            result.final_loss = terms.total;
            if (plus)
                std::snprintf(line, sizeof(line),
                              "step=%lld epoch=%d lambda=%.6g loss=%.6g loss_g=%.6g loss_c=%.6g loss_l=%.6g "
                              "loss_lc=%.6g loss_ag=%.6g loss_al=%.6g reg=%.6g",
                              static_cast<long long>(step), epoch, lambda, terms.total, terms.gland, terms.contour,
                              terms.lumen, terms.lumen_contour, terms.aux_gland, terms.aux_lumen, terms.reg);
            else
                std::snprintf(line, sizeof(line),
                              "step=%lld epoch=%d lambda=%.6g loss=%.6g loss_g=%.6g loss_c=%.6g loss_ag=%.6g "
                              "loss_ac=%.6g reg=%.6g",
                              static_cast<long long>(step), epoch, lambda, terms.total, terms.gland, terms.contour,
                              terms.aux_gland, terms.aux_contour, terms.reg);
            emit(line);

            if (opt.max_steps > 0 && step - opt.start_step >= opt.max_steps) stop = true;
        }

        if (!stop && (epoch + 1) % opt.val_every_epochs == 0) run_validation(epoch);
    }

    if (last_val_step != step) run_validation(std::min(epoch, opt.cfg.max_epochs - 1));
    result.steps = step;
    result.last = checkpoint_from_model(model, std::min(epoch, opt.cfg.max_epochs - 1), step, &adam);
    if (result.best_epoch < 0) result.best = result.last;
    return result;
}

}  // namespace mild
