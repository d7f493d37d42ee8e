// Command-line harness wiring synthesis, training, inference, RTS and
// evaluation into reproducible runs. Every command resolves its parameters
// from defaults < --config JSON < explicit flags, writes the resolved config
// into the output directory, and exits 0 on success, 2 on configuration
// errors, 3 on data errors, 4 on numeric failures.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "mildnet/checkpoint.hpp"
#include "mildnet/dataset.hpp"
#include "mildnet/infer.hpp"
#include "mildnet/metrics.hpp"
#include "mildnet/postprocess.hpp"
#include "mildnet/rts.hpp"
#include "mildnet/synth.hpp"
#include "mildnet/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load_config_file(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path);
    if (!in) throw mild::ConfigError("cannot open config file: " + path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw mild::ConfigError("config file is not valid JSON: " + path);
    if (!j.is_object()) throw mild::ConfigError("config root must be a JSON object: " + path);
    return j;
}

json section(const json& cfg, const std::string& name) {
    if (cfg.contains(name)) {
        if (!cfg.at(name).is_object()) throw mild::ConfigError("config section '" + name + "' must be an object");
        return cfg.at(name);
    }
    return json::object();
}

template <typename T>
void from_cfg(const json& sec, const std::string& key, T& value) {
    if (!sec.contains(key)) return;
    try {
        value = sec.at(key).get<T>();
    } catch (const json::exception&) {
        throw mild::ConfigError("config field '" + key + "' has the wrong type");
    }
}

void write_resolved_config(const fs::path& out_dir, const std::string& command, uint64_t seed, json body) {
    body["command"] = command;
    body["seed"] = seed;
    std::ofstream out(out_dir / "config.json");
    if (!out) throw mild::DataError("cannot write resolved config under " + out_dir.string());
    out << body.dump(2) << '\n';
}

void ensure_out_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw mild::DataError("cannot create output directory: " + dir.string());
}

mild::ModelConfig model_config_from_section(const json& sec) {
    mild::ModelConfig mc;
    from_cfg(sec, "base_channels", mc.base_channels);
    from_cfg(sec, "level_channels", mc.level_channels);
    from_cfg(sec, "aspp_rates", mc.aspp_rates);
    from_cfg(sec, "aspp_out_channels", mc.aspp_out_channels);
    std::string variant = variant_name(mc.variant);
    from_cfg(sec, "variant", variant);
    mc.variant = mild::variant_from_name(variant);
    from_cfg(sec, "dropout_rate", mc.dropout_rate);
    from_cfg(sec, "input_size", mc.input_size);
    from_cfg(sec, "residual_units_per_stage", mc.residual_units_per_stage);
    from_cfg(sec, "dilated_unit_rates", mc.dilated_unit_rates);
    return mc;
}

mild::AugmentSpec augment_from_section(const json& sec, bool* enabled) {
    mild::AugmentSpec a;
    from_cfg(sec, "enabled", *enabled);
    from_cfg(sec, "elastic", a.elastic);
    from_cfg(sec, "elastic_grid", a.elastic_grid);
    from_cfg(sec, "elastic_alpha", a.elastic_alpha);
    from_cfg(sec, "flip", a.flip);
    from_cfg(sec, "rotate", a.rotate);
    from_cfg(sec, "gaussian_blur", a.gaussian_blur);
    from_cfg(sec, "blur_sigma_min", a.blur_sigma_min);
    from_cfg(sec, "blur_sigma_max", a.blur_sigma_max);
    from_cfg(sec, "blur_prob", a.blur_prob);
    from_cfg(sec, "median_blur", a.median_blur);
    from_cfg(sec, "median_kernel_max", a.median_kernel_max);
    from_cfg(sec, "median_prob", a.median_prob);
    from_cfg(sec, "colour", a.colour);
    from_cfg(sec, "colour_gain", a.colour_gain);
    from_cfg(sec, "colour_offset", a.colour_offset);
    return a;
}

json augment_to_json(const mild::AugmentSpec& a, bool enabled) {
    return json{{"enabled", enabled},
                {"elastic", a.elastic},
                {"elastic_grid", a.elastic_grid},
                {"elastic_alpha", a.elastic_alpha},
                {"flip", a.flip},
                {"rotate", a.rotate},
                {"gaussian_blur", a.gaussian_blur},
                {"blur_sigma_min", a.blur_sigma_min},
                {"blur_sigma_max", a.blur_sigma_max},
                {"blur_prob", a.blur_prob},
                {"median_blur", a.median_blur},
                {"median_kernel_max", a.median_kernel_max},
                {"median_prob", a.median_prob},
                {"colour", a.colour},
                {"colour_gain", a.colour_gain},
                {"colour_offset", a.colour_offset}};
}

// file -> [(id, path)], directory of PNGs, or a dataset directory with images/
std::vector<std::pair<std::string, std::string>> collect_images(const std::string& path) {
    std::vector<std::pair<std::string, std::string>> out;
    fs::path p(path);
    if (fs::is_regular_file(p)) {
        out.emplace_back(p.stem().string(), p.string());
        return out;
    }
    if (fs::is_directory(p / "images")) p /= "images";
    if (!fs::is_directory(p)) throw mild::DataError("image path not found: " + path);
    for (const auto& e : fs::directory_iterator(p))
        if (e.path().extension() == ".png") out.emplace_back(e.path().stem().string(), e.path().string());
    std::sort(out.begin(), out.end());
    if (out.empty()) throw mild::DataError("no PNG images under " + path);
    return out;
}

fs::path label_path_for(const std::string& labels_dir, const std::string& id) {
    fs::path p(labels_dir);
    if (fs::is_directory(p / "labels")) p /= "labels";
    fs::path f = p / (id + ".png");
    if (!fs::exists(f)) f = p / (id + ".instances.png");
    return f;
}

void write_prob_png16(const std::string& path, const mild::Grid& g) {
    // fixed scale: pixel = probability * 65535
    mild::InstanceMap q = mild::make_instance_map(g.h, g.w);
    for (size_t i = 0; i < g.v.size(); ++i)
        q.v[i] = static_cast<int32_t>(std::min(65535.0f, std::max(0.0f, g.v[i] * 65535.0f + 0.5f)));
    mild::write_label_png(path, q);
}

void write_sigma_artifacts(const fs::path& stem, const mild::Grid& sigma) {
    const double scale = mild::write_grid_png16(stem.string() + ".png", sigma);
    std::ofstream side(stem.string() + ".json");
    side << json{{"scale", scale}, {"encoding", "value = pixel / scale"}}.dump(2) << '\n';
    mild::write_grid_f32(stem.string() + ".f32", sigma);
}

// --- synth ----------------------------------------------------------------------

struct SynthArgs {
    std::string config_path, out;
    uint64_t seed = 0;
    mild::SynthOptions opt;
    std::string grade = "benign";
    double val_fraction = 0.2;
    bool lumen = true;
};

int cmd_synth(SynthArgs& a, const std::vector<std::string>& explicit_flags) {
    json cfg = section(load_config_file(a.config_path), "synth");
    auto flag_set = [&](const std::string& f) {
        return std::find(explicit_flags.begin(), explicit_flags.end(), f) != explicit_flags.end();
    };
    if (!flag_set("count")) from_cfg(cfg, "count", a.opt.count);
    if (!flag_set("size")) from_cfg(cfg, "size", a.opt.size);
    if (!flag_set("grade")) from_cfg(cfg, "grade", a.grade);
    if (!flag_set("distractors")) from_cfg(cfg, "distractors", a.opt.distractors);
    from_cfg(cfg, "distractor_strength", a.opt.distractor_strength);
    from_cfg(cfg, "min_glands", a.opt.min_glands);
    from_cfg(cfg, "max_glands", a.opt.max_glands);
    from_cfg(cfg, "val_fraction", a.val_fraction);
    from_cfg(cfg, "lumen", a.lumen);
    a.opt.grade = mild::grade_from_name(a.grade);
    a.opt.seed = a.seed;
    a.opt.validate();

    ensure_out_dir(a.out);
    auto samples = mild::synth_glands(a.opt);
    mild::save_dataset(a.out, samples, a.val_fraction, a.lumen);
    write_resolved_config(a.out, "synth", a.seed,
                          json{{"synth",
                                {{"count", a.opt.count},
                                 {"size", a.opt.size},
                                 {"grade", a.grade},
                                 {"distractors", a.opt.distractors},
                                 {"distractor_strength", a.opt.distractor_strength},
                                 {"min_glands", a.opt.min_glands},
                                 {"max_glands", a.opt.max_glands},
                                 {"val_fraction", a.val_fraction},
                                 {"lumen", a.lumen}}}});
    std::cout << "wrote " << samples.size() << " samples to " << a.out << "\n";
    return 0;
}

// --- train ----------------------------------------------------------------------

struct TrainArgs {
    std::string config_path, out, data, resume, variant;
    uint64_t seed = 0;
    mild::TrainOptions opt;
    double val_fraction = 0.2;
};

int cmd_train(TrainArgs& a, const std::vector<std::string>& explicit_flags) {
    json root = load_config_file(a.config_path);
    json tcfg = section(root, "train");
    auto flag_set = [&](const std::string& f) {
        return std::find(explicit_flags.begin(), explicit_flags.end(), f) != explicit_flags.end();
    };
    if (!flag_set("data")) from_cfg(tcfg, "data", a.data);
    from_cfg(tcfg, "learning_rate", a.opt.cfg.learning_rate);
    if (!flag_set("batch")) from_cfg(tcfg, "batch_size", a.opt.cfg.batch_size);
    from_cfg(tcfg, "gamma", a.opt.cfg.gamma);
    from_cfg(tcfg, "lambda_init", a.opt.cfg.lambda_init);
    from_cfg(tcfg, "lambda_decay_every_epochs", a.opt.cfg.lambda_decay_every_epochs);
    from_cfg(tcfg, "lambda_decay_factor", a.opt.cfg.lambda_decay_factor);
    if (!flag_set("epochs")) from_cfg(tcfg, "max_epochs", a.opt.cfg.max_epochs);
    if (!flag_set("steps")) {
        long long ms = a.opt.max_steps;
        from_cfg(tcfg, "max_steps", ms);
        a.opt.max_steps = ms;
    }
    from_cfg(tcfg, "val_every_epochs", a.opt.val_every_epochs);
    from_cfg(tcfg, "val_fraction", a.val_fraction);
    from_cfg(tcfg, "patch_size", a.opt.patch_size);
    from_cfg(tcfg, "contour_width", a.opt.contour_width);
    from_cfg(tcfg, "stop_at_val_dice", a.opt.stop_at_val_dice);
    a.opt.augment = augment_from_section(section(tcfg, "augment"), &a.opt.augment_enabled);
    a.opt.cfg.seed = a.seed;

    mild::ModelConfig mc = model_config_from_section(section(root, "model"));
    if (flag_set("variant")) mc.variant = mild::variant_from_name(a.variant);
    if (a.data.empty()) throw mild::ConfigError("train: no dataset given (use --data or config train.data)");

    ensure_out_dir(a.out);
    mild::Dataset data = mild::load_dataset(a.data, a.val_fraction);
    if (mc.variant == mild::Variant::plus && !data.has_lumen())
        throw mild::ConfigError(
            "train: --variant plus needs lumen label maps (lumen/<id>.png) for every dataset item, and this "
            "dataset has none");

    mild::AdamState adam;
    mild::Model model = [&]() {
        if (a.resume.empty()) return mild::Model(mc, a.seed);
        mild::Checkpoint ckpt = mild::load_checkpoint(a.resume);
        mild::Model m(ckpt.config, a.seed);
        mild::load_model_weights(m, ckpt, &adam);
        a.opt.start_epoch = static_cast<int>(ckpt.epoch) + 1;
        a.opt.start_step = ckpt.step;
        return m;
    }();

    a.opt.log_path = (fs::path(a.out) / "train_log.txt").string();
    write_resolved_config(
        fs::path(a.out), "train", a.seed,
        json{{"model", mild::model_config_to_json(model.config())},
             {"train",
              {{"data", a.data},
               {"learning_rate", a.opt.cfg.learning_rate},
               {"batch_size", a.opt.cfg.batch_size},
               {"gamma", a.opt.cfg.gamma},
               {"lambda_init", a.opt.cfg.lambda_init},
               {"lambda_decay_every_epochs", a.opt.cfg.lambda_decay_every_epochs},
               {"lambda_decay_factor", a.opt.cfg.lambda_decay_factor},
               {"max_epochs", a.opt.cfg.max_epochs},
               {"max_steps", static_cast<long long>(a.opt.max_steps)},
               {"val_every_epochs", a.opt.val_every_epochs},
               {"val_fraction", a.val_fraction},
               {"patch_size", a.opt.patch_size},
               {"contour_width", a.opt.contour_width},
               {"stop_at_val_dice", a.opt.stop_at_val_dice},
               {"resume", a.resume},
               {"augment", augment_to_json(a.opt.augment, a.opt.augment_enabled)}}}});

    mild::TrainResult result = mild::train(model, data, a.opt, &adam);
    mild::save_checkpoint((fs::path(a.out) / "checkpoint_best.mnck").string(), result.best);
    mild::save_checkpoint((fs::path(a.out) / "checkpoint_last.mnck").string(), result.last);
    std::cout << "trained " << result.steps << " steps; best validation dice " << result.best_val_dice << " at epoch "
              << result.best_epoch << "\n";
    return 0;
}

// --- infer ----------------------------------------------------------------------

struct InferArgs {
    std::string config_path, out, checkpoint, images;
    uint64_t seed = 0;
    double threshold = 0.5;
    int disk_radius = 5;
};

int cmd_infer(InferArgs& a, const std::vector<std::string>& explicit_flags) {
    json cfg = section(load_config_file(a.config_path), "infer");
    auto flag_set = [&](const std::string& f) {
        return std::find(explicit_flags.begin(), explicit_flags.end(), f) != explicit_flags.end();
    };
    if (!flag_set("checkpoint")) from_cfg(cfg, "checkpoint", a.checkpoint);
    if (!flag_set("images")) from_cfg(cfg, "images", a.images);
    from_cfg(cfg, "threshold", a.threshold);
    from_cfg(cfg, "disk_radius", a.disk_radius);
    if (a.checkpoint.empty()) throw mild::ConfigError("infer: no checkpoint given");
    if (a.images.empty()) throw mild::ConfigError("infer: no images given");

    ensure_out_dir(a.out);
    mild::Model model = mild::model_from_checkpoint(mild::load_checkpoint(a.checkpoint));
    write_resolved_config(fs::path(a.out), "infer", a.seed,
                          json{{"infer",
                                {{"checkpoint", a.checkpoint},
                                 {"images", a.images},
                                 {"threshold", a.threshold},
                                 {"disk_radius", a.disk_radius}}},
                               {"model", mild::model_config_to_json(model.config())}});

    for (const auto& [id, path] : collect_images(a.images)) {
        mild::ImageRGB image = mild::read_image_png(path);
        mild::BranchProbs probs = mild::infer_probs(model, image);
        mild::InstanceMap instances = mild::postprocess(probs.gland.fg, a.threshold, a.disk_radius);
        const fs::path base = fs::path(a.out) / id;
        write_prob_png16(base.string() + ".gland.png", probs.gland.fg);
        write_prob_png16(base.string() + ".contour.png", probs.contour.fg);
        if (probs.lumen) {
            write_prob_png16(base.string() + ".lumen.png", probs.lumen->fg);
            write_prob_png16(base.string() + ".lumen_contour.png", probs.lumen_contour->fg);
        }
        mild::write_label_png(base.string() + ".instances.png", instances);
        mild::write_image_png(base.string() + ".overlay.png", mild::overlay_instances(image, instances));
        std::cout << id << ": " << mild::instance_ids(instances).size() << " instances\n";
    }
    return 0;
}

// --- rts ------------------------------------------------------------------------

struct RtsArgs {
    std::string config_path, out, checkpoint, images, labels;
    uint64_t seed = 0;
    int samples = 8;
    std::vector<std::string> pool_names;
    double contour_threshold = 0.5;
    double tau_threshold = -1.0;  // < 0 = keep everything
    std::vector<double> sweep_thresholds;
    double threshold = 0.5;
    int disk_radius = 5;
};

int cmd_rts(RtsArgs& a, const std::vector<std::string>& explicit_flags) {
    json cfg = section(load_config_file(a.config_path), "rts");
    auto flag_set = [&](const std::string& f) {
        return std::find(explicit_flags.begin(), explicit_flags.end(), f) != explicit_flags.end();
    };
    if (!flag_set("checkpoint")) from_cfg(cfg, "checkpoint", a.checkpoint);
    if (!flag_set("images")) from_cfg(cfg, "images", a.images);
    if (!flag_set("labels")) from_cfg(cfg, "labels", a.labels);
    if (!flag_set("samples")) from_cfg(cfg, "samples", a.samples);
    if (!flag_set("pool")) from_cfg(cfg, "pool", a.pool_names);
    from_cfg(cfg, "contour_threshold", a.contour_threshold);
    if (!flag_set("tau-threshold")) from_cfg(cfg, "tau_threshold", a.tau_threshold);
    if (!flag_set("sweep")) from_cfg(cfg, "sweep_thresholds", a.sweep_thresholds);
    from_cfg(cfg, "threshold", a.threshold);
    from_cfg(cfg, "disk_radius", a.disk_radius);
    if (a.checkpoint.empty()) throw mild::ConfigError("rts: no checkpoint given");
    if (a.images.empty()) throw mild::ConfigError("rts: no images given");
    if (a.samples < 1) throw mild::ConfigError("rts: samples must be >= 1");
    if (!a.sweep_thresholds.empty() && a.labels.empty())
        throw mild::ConfigError("rts: --sweep needs ground-truth instance maps via --labels");

    mild::TransformPool pool;
    if (!a.pool_names.empty()) {
        pool.kinds.clear();
        for (const auto& n : a.pool_names) pool.kinds.push_back(mild::transform_kind_from_name(n));
    }
    from_cfg(cfg, "blur_sigma_min", pool.blur_sigma_min);
    from_cfg(cfg, "blur_sigma_max", pool.blur_sigma_max);
    from_cfg(cfg, "median_kernel_max", pool.median_kernel_max);
    from_cfg(cfg, "noise_sigma_min", pool.noise_sigma_min);
    from_cfg(cfg, "noise_sigma_max", pool.noise_sigma_max);

    ensure_out_dir(a.out);
    mild::Model model = mild::model_from_checkpoint(mild::load_checkpoint(a.checkpoint));
    json pool_json = json::array();
    for (auto k : pool.kinds) pool_json.push_back(mild::transform_kind_name(k));
    write_resolved_config(fs::path(a.out), "rts", a.seed,
                          json{{"rts",
                                {{"checkpoint", a.checkpoint},
                                 {"images", a.images},
                                 {"labels", a.labels},
                                 {"samples", a.samples},
                                 {"pool", pool_json},
                                 {"blur_sigma_min", pool.blur_sigma_min},
                                 {"blur_sigma_max", pool.blur_sigma_max},
                                 {"median_kernel_max", pool.median_kernel_max},
                                 {"noise_sigma_min", pool.noise_sigma_min},
                                 {"noise_sigma_max", pool.noise_sigma_max},
                                 {"contour_threshold", a.contour_threshold},
                                 {"tau_threshold", a.tau_threshold},
                                 {"sweep_thresholds", a.sweep_thresholds},
                                 {"threshold", a.threshold},
                                 {"disk_radius", a.disk_radius}}},
                               {"model", mild::model_config_to_json(model.config())}});

    mild::PredictFn predict = [&](const mild::ImageRGB& im) { return mild::infer_probs(model, im); };
    std::vector<mild::SweepInput> sweep_inputs;

    for (const auto& [id, path] : collect_images(a.images)) {
        mild::ImageRGB image = mild::read_image_png(path);
        mild::UncertaintyMap u =
            mild::rts_predict(predict, image, a.samples, pool, mild::derive_seed(a.seed, std::hash<std::string>{}(id)));
        mild::apply_boundary_removal(u, a.contour_threshold);

        mild::InstanceMap instances = mild::postprocess(u.mu.gland.fg, a.threshold, a.disk_radius);
        auto tau_sigma = mild::instance_uncertainty(u.sigma, instances);
        auto tau_hat = mild::instance_uncertainty(u.sigma_hat, instances);
        const double keep_threshold =
            a.tau_threshold < 0 ? std::numeric_limits<double>::infinity() : a.tau_threshold;
        mild::FilterResult filtered = mild::filter_instances(instances, tau_hat, keep_threshold);

        const fs::path base = fs::path(a.out) / id;
        write_prob_png16(base.string() + ".mu_gland.png", u.mu.gland.fg);
        write_prob_png16(base.string() + ".mu_contour.png", u.mu.contour.fg);
        if (u.mu.lumen) {
            write_prob_png16(base.string() + ".mu_lumen.png", u.mu.lumen->fg);
            write_prob_png16(base.string() + ".mu_lumen_contour.png", u.mu.lumen_contour->fg);
        }
        write_sigma_artifacts(base.string() + ".sigma", u.sigma);
        write_sigma_artifacts(base.string() + ".sigma_hat", u.sigma_hat);
        if (u.sigma_lumen) {
            write_sigma_artifacts(base.string() + ".sigma_lumen", *u.sigma_lumen);
            write_sigma_artifacts(base.string() + ".sigma_hat_lumen", *u.sigma_hat_lumen);
        }
        mild::write_label_png(base.string() + ".instances.png", instances);
        mild::write_label_png(base.string() + ".filtered.png", filtered.filtered);
        mild::write_image_png(base.string() + ".overlay.png", mild::overlay_instances(image, filtered.filtered));

        std::ofstream tau_out(base.string() + ".tau.txt");
        tau_out << "id\ttau_sigma\ttau_sigma_hat\tremoved\n";
        char row[128];
        for (const auto& [iid, t] : tau_sigma) {
            bool removed =
                std::find(filtered.removed_ids.begin(), filtered.removed_ids.end(), iid) != filtered.removed_ids.end();
            std::snprintf(row, sizeof(row), "%d\t%.9g\t%.9g\t%d\n", iid, t, tau_hat[iid], removed ? 1 : 0);
            tau_out << row;
        }

        if (!a.sweep_thresholds.empty()) {
            fs::path gt_path = label_path_for(a.labels, id);
            if (!fs::exists(gt_path)) throw mild::DataError("rts sweep: no ground truth map for '" + id + "'");
            mild::SweepInput si;
            si.pred = instances;
            si.gt = mild::read_label_png(gt_path.string());
            si.tau_sigma = tau_sigma;
            si.tau_sigma_hat = tau_hat;
            sweep_inputs.push_back(std::move(si));
        }
        std::cout << id << ": " << filtered.retained_instances << "/" << filtered.total_instances
                  << " instances kept\n";
    }

    if (!a.sweep_thresholds.empty()) {
        auto records = mild::uncertainty_sweep(sweep_inputs, a.sweep_thresholds);
        std::ofstream out(fs::path(a.out) / "sweep.txt");
        out << "threshold\tf1\tretained_fraction\tmap_variant\n";
        char row[128];
        for (const auto& r : records) {
            std::snprintf(row, sizeof(row), "%.9g\t%.9g\t%.9g\t%s\n", r.threshold, r.f1, r.retained_fraction,
                          r.boundary_removed ? "sigma_hat" : "sigma");
            out << row;
        }
    }
    return 0;
}

// --- eval -----------------------------------------------------------------------

struct EvalArgs {
    std::string config_path, out, pred, gt;
    uint64_t seed = 0;
};

int cmd_eval(EvalArgs& a, const std::vector<std::string>& explicit_flags) {
    json cfg = section(load_config_file(a.config_path), "eval");
    auto flag_set = [&](const std::string& f) {
        return std::find(explicit_flags.begin(), explicit_flags.end(), f) != explicit_flags.end();
    };
    if (!flag_set("pred")) from_cfg(cfg, "pred", a.pred);
    if (!flag_set("gt")) from_cfg(cfg, "gt", a.gt);
    if (a.pred.empty() || a.gt.empty()) throw mild::ConfigError("eval: both --pred and --gt are required");

    ensure_out_dir(a.out);
    write_resolved_config(fs::path(a.out), "eval", a.seed, json{{"eval", {{"pred", a.pred}, {"gt", a.gt}}}});

    // enumerate predictions: <id>.png or <id>.instances.png
    std::vector<std::pair<std::string, std::string>> preds;
    fs::path pd(a.pred);
    if (!fs::is_directory(pd)) throw mild::DataError("eval: prediction directory not found: " + a.pred);
    for (const auto& e : fs::directory_iterator(pd)) {
        std::string name = e.path().filename().string();
        if (name.size() > 14 && name.substr(name.size() - 14) == ".instances.png")
            preds.emplace_back(name.substr(0, name.size() - 14), e.path().string());
        else if (e.path().extension() == ".png" && name.find('.') == name.size() - 4)
            preds.emplace_back(e.path().stem().string(), e.path().string());
    }
    std::sort(preds.begin(), preds.end());
    if (preds.empty()) throw mild::DataError("eval: no prediction maps under " + a.pred);

    std::vector<std::string> problems;
    std::vector<std::pair<std::string, mild::EvalReport>> reports;
    for (const auto& [id, path] : preds) {
        fs::path gt_path = label_path_for(a.gt, id);
        if (!fs::exists(gt_path)) {
            problems.push_back(id + ": no ground truth map");
            continue;
        }
        mild::InstanceMap pred = mild::read_label_png(path);
        mild::InstanceMap gt = mild::read_label_png(gt_path.string());
        if (pred.h != gt.h || pred.w != gt.w) {
            problems.push_back(id + ": extents differ between prediction and ground truth");
            continue;
        }
        reports.emplace_back(id, mild::evaluate_instances(pred, gt));
    }
    if (!problems.empty()) {
        std::string msg = "eval: " + std::to_string(problems.size()) + " unpaired/mismatched item(s):";
        for (const auto& p : problems) msg += "\n  " + p;
        throw mild::DataError(msg);
    }

    std::ofstream summary(fs::path(a.out) / "summary.tsv");
    summary << "image\tf1\ttp\tfp\tfn\tobject_dice\tobject_hausdorff\n";
    double f1 = 0, dice = 0, hd = 0;
    for (const auto& [id, r] : reports) {
        mild::write_eval_report((fs::path(a.out) / (id + ".report.txt")).string(), id, r);
        summary << mild::eval_summary_row(id, r) << '\n';
        f1 += r.f1;
        dice += r.object_dice;
        hd += r.object_hausdorff;
    }
    const double n = static_cast<double>(reports.size());
    char buf[256];
    std::snprintf(buf, sizeof(buf), "images=%zu\nmean_f1=%.9g\nmean_object_dice=%.9g\nmean_object_hausdorff=%.9g\n",
                  reports.size(), f1 / n, dice / n, hd / n);
    std::ofstream agg(fs::path(a.out) / "aggregate.txt");
    agg << buf;
    std::cout << buf;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gland instance segmentation toolkit"};
    app.require_subcommand(1);

    SynthArgs sa;
    TrainArgs ta;
    InferArgs ia;
    RtsArgs ra;
    EvalArgs ea;

    auto* synth = app.add_subcommand("synth", "generate a synthetic gland dataset");
    synth->add_option("--config", sa.config_path, "JSON config file");
    synth->add_option("--out", sa.out, "output dataset directory")->required();
    synth->add_option("--seed", sa.seed, "global seed");
    synth->add_option("--count", sa.opt.count, "number of images");
    synth->add_option("--size", sa.opt.size, "image extent (>= 64)");
    synth->add_option("--grade", sa.grade, "benign|malignant-like");
    synth->add_option("--distractors", sa.opt.distractors, "ambiguous unlabeled structures per image");

    auto* train = app.add_subcommand("train", "train a model on a dataset directory");
    train->add_option("--config", ta.config_path, "JSON config file");
    train->add_option("--out", ta.out, "output run directory")->required();
    train->add_option("--seed", ta.seed, "global seed");
    train->add_option("--data", ta.data, "dataset directory");
    train->add_option("--variant", ta.variant, "standard|plus");
    train->add_option("--epochs", ta.opt.cfg.max_epochs, "maximum epochs");
    long long train_steps = 0;
    train->add_option("--steps", train_steps, "maximum steps (0 = epochs only)");
    train->add_option("--batch", ta.opt.cfg.batch_size, "batch size");
    train->add_option("--resume", ta.resume, "checkpoint to resume from");

    auto* infer = app.add_subcommand("infer", "run inference and post-processing");
    infer->add_option("--config", ia.config_path, "JSON config file");
    infer->add_option("--out", ia.out, "output directory")->required();
    infer->add_option("--seed", ia.seed, "global seed");
    infer->add_option("--checkpoint", ia.checkpoint, "checkpoint file");
    infer->add_option("--images", ia.images, "image file, directory, or dataset directory");

    auto* rts = app.add_subcommand("rts", "random-transformation-sampling inference with uncertainty");
    rts->add_option("--config", ra.config_path, "JSON config file");
    rts->add_option("--out", ra.out, "output directory")->required();
    rts->add_option("--seed", ra.seed, "global seed");
    rts->add_option("--checkpoint", ra.checkpoint, "checkpoint file");
    rts->add_option("--images", ra.images, "image file, directory, or dataset directory");
    rts->add_option("--labels", ra.labels, "ground-truth instance maps (for --sweep)");
    rts->add_option("--samples", ra.samples, "number of transform samples n");
    rts->add_option("--pool", ra.pool_names, "transform kinds in the pool");
    rts->add_option("--tau-threshold", ra.tau_threshold, "keep instances with tau below this (< 0 keeps all)");
    rts->add_option("--sweep", ra.sweep_thresholds, "thresholds for the uncertainty sweep");

    auto* eval = app.add_subcommand("eval", "object-level evaluation of instance maps");
    eval->add_option("--config", ea.config_path, "JSON config file");
    eval->add_option("--out", ea.out, "output directory")->required();
    eval->add_option("--seed", ea.seed, "global seed");
    eval->add_option("--pred", ea.pred, "directory of predicted instance maps");
    eval->add_option("--gt", ea.gt, "directory of ground-truth instance maps");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    auto explicit_flags = [&](CLI::App* sub) {
        std::vector<std::string> set;
        for (const auto* opt : sub->get_options())
            if (opt->count() > 0) {
                std::string n = opt->get_name();
                if (n.rfind("--", 0) == 0) n = n.substr(2);
                set.push_back(n);
            }
        return set;
    };

    try {
        if (synth->parsed()) return cmd_synth(sa, explicit_flags(synth));
        if (train->parsed()) {
            ta.opt.max_steps = train_steps;
            return cmd_train(ta, explicit_flags(train));
        }
        if (infer->parsed()) return cmd_infer(ia, explicit_flags(infer));
        if (rts->parsed()) return cmd_rts(ra, explicit_flags(rts));
        if (eval->parsed()) return cmd_eval(ea, explicit_flags(eval));
    } catch (const mild::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const mild::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const mild::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
