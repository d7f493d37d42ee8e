#pragma once

#include <cstdio>
#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mildnet/image.hpp"
#include "mildnet/model.hpp"
#include "mildnet/optim.hpp"

// Versioned binary checkpoint container.
//
//   magic   "MNCK"
//   u32     format version (currently 1)
//   u32     length of the UTF-8 JSON header
//   bytes   JSON header: model config, epoch, step, optimizer step count
//   u32     tensor count
//   per tensor:
//     u32   name length, name bytes
//     u32   ndim, u32 dims[ndim]
//     f32   data[numel]
//
// Integers and floats are little-endian. Model parameters are stored under
// their parameter names; Adam moments, when present, under "opt.m.<name>"
// and "opt.v.<name>".

namespace mild {

struct Checkpoint {
    ModelConfig config;
    int64_t epoch = 0;
    int64_t step = 0;
    int64_t adam_t = 0;
    std::vector<std::pair<std::string, std::pair<std::vector<int>, std::vector<float>>>> tensors;
};

inline nlohmann::json model_config_to_json(const ModelConfig& cfg) {
    return nlohmann::json{{"base_channels", cfg.base_channels},
                          {"level_channels", cfg.level_channels},
                          {"aspp_rates", cfg.aspp_rates},
                          {"aspp_out_channels", cfg.aspp_out_channels},
                          {"variant", variant_name(cfg.variant)},
                          {"dropout_rate", cfg.dropout_rate},
                          {"input_size", cfg.input_size},
                          {"residual_units_per_stage", cfg.residual_units_per_stage},
                          {"dilated_unit_rates", cfg.dilated_unit_rates}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.base_channels = j.value("base_channels", cfg.base_channels);
    cfg.level_channels = j.value("level_channels", cfg.level_channels);
    cfg.aspp_rates = j.value("aspp_rates", cfg.aspp_rates);
    cfg.aspp_out_channels = j.value("aspp_out_channels", cfg.aspp_out_channels);
    cfg.variant = variant_from_name(j.value("variant", std::string("standard")));
    cfg.dropout_rate = j.value("dropout_rate", cfg.dropout_rate);
    cfg.input_size = j.value("input_size", cfg.input_size);
    cfg.residual_units_per_stage = j.value("residual_units_per_stage", cfg.residual_units_per_stage);
    cfg.dilated_unit_rates = j.value("dilated_unit_rates", cfg.dilated_unit_rates);
    cfg.validate();
    return cfg;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw DataError("cannot write checkpoint: " + path);
    auto put_u32 = [&](uint32_t v) {
        if (std::fwrite(&v, 4, 1, fp.get()) != 1) throw DataError("short write: " + path);
    };
    if (std::fwrite("MNCK", 1, 4, fp.get()) != 4) throw DataError("short write: " + path);
    put_u32(1);
    nlohmann::json header = {{"model", model_config_to_json(ckpt.config)},
                             {"epoch", ckpt.epoch},
                             {"step", ckpt.step},
                             {"adam_t", ckpt.adam_t}};
    const std::string hs = header.dump();
    put_u32(static_cast<uint32_t>(hs.size()));
    if (std::fwrite(hs.data(), 1, hs.size(), fp.get()) != hs.size()) throw DataError("short write: " + path);
    put_u32(static_cast<uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, shape_data] : ckpt.tensors) {
        const auto& [shape, data] = shape_data;
        put_u32(static_cast<uint32_t>(name.size()));
        if (std::fwrite(name.data(), 1, name.size(), fp.get()) != name.size()) throw DataError("short write: " + path);
        put_u32(static_cast<uint32_t>(shape.size()));
        for (int d : shape) put_u32(static_cast<uint32_t>(d));
        if (std::fwrite(data.data(), 4, data.size(), fp.get()) != data.size()) throw DataError("short write: " + path);
    }
}

inline Checkpoint load_checkpoint(const std::string& path) {
    detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw DataError("cannot open checkpoint: " + path);
    auto get_u32 = [&]() {
        uint32_t v = 0;
        if (std::fread(&v, 4, 1, fp.get()) != 1) throw DataError("truncated checkpoint: " + path);
        return v;
    };
    char magic[4];
    if (std::fread(magic, 1, 4, fp.get()) != 4 || std::memcmp(magic, "MNCK", 4) != 0)
        throw DataError("not a checkpoint file: " + path);
    const uint32_t version = get_u32();
    if (version != 1) throw DataError("unsupported checkpoint version " + std::to_string(version) + ": " + path);
    const uint32_t hlen = get_u32();
    std::string hs(hlen, '\0');
    if (std::fread(hs.data(), 1, hlen, fp.get()) != hlen) throw DataError("truncated checkpoint: " + path);
    nlohmann::json header = nlohmann::json::parse(hs, nullptr, false);
    if (header.is_discarded()) throw DataError("corrupt checkpoint header: " + path);

    Checkpoint ckpt;
    ckpt.config = model_config_from_json(header.at("model"));
    ckpt.epoch = header.value("epoch", 0);
    ckpt.step = header.value("step", 0);
    ckpt.adam_t = header.value("adam_t", 0);
    const uint32_t count = get_u32();
    ckpt.tensors.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t nlen = get_u32();
        std::string name(nlen, '\0');
        if (std::fread(name.data(), 1, nlen, fp.get()) != nlen) throw DataError("truncated checkpoint: " + path);
        const uint32_t ndim = get_u32();
        std::vector<int> shape(ndim);
        size_t numel = 1;
        for (uint32_t d = 0; d < ndim; ++d) {
            shape[d] = static_cast<int>(get_u32());
            numel *= static_cast<size_t>(shape[d]);
        }
        std::vector<float> data(numel);
        if (std::fread(data.data(), 4, numel, fp.get()) != numel) throw DataError("truncated checkpoint: " + path);
        ckpt.tensors.emplace_back(std::move(name), std::make_pair(std::move(shape), std::move(data)));
    }
    return ckpt;
}

// --- model/optimizer bridges --------------------------------------------------

inline Checkpoint checkpoint_from_model(const Model& model, int64_t epoch = 0, int64_t step = 0,
                                        const AdamState* adam = nullptr) {
    Checkpoint ckpt;
    ckpt.config = model.config();
    ckpt.epoch = epoch;
    ckpt.step = step;
    for (const auto& [name, t] : model.parameters()) ckpt.tensors.emplace_back(name, std::make_pair(t->shape, t->data));
    if (adam) {
        ckpt.adam_t = adam->t;
        const auto& params = model.parameters();
        if (adam->m.size() == params.size()) {
            for (size_t i = 0; i < params.size(); ++i) {
                ckpt.tensors.emplace_back("opt.m." + params[i].first,
                                          std::make_pair(params[i].second->shape, adam->m[i]));
                ckpt.tensors.emplace_back("opt.v." + params[i].first,
                                          std::make_pair(params[i].second->shape, adam->v[i]));
            }
        }
    }
    return ckpt;
}

inline void load_model_weights(Model& model, const Checkpoint& ckpt, AdamState* adam = nullptr) {
    std::unordered_map<std::string, const std::pair<std::vector<int>, std::vector<float>>*> by_name;
    for (const auto& [name, sd] : ckpt.tensors) by_name[name] = &sd;
    for (const auto& [name, t] : model.parameters()) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw DataError("checkpoint is missing parameter '" + name + "'");
        if (it->second->first != t->shape)
            throw DataError("checkpoint parameter '" + name + "' has shape " + shape_str(it->second->first) +
                            ", model expects " + shape_str(t->shape));
        t->data = it->second->second;
    }
    if (adam) {
        const auto& params = model.parameters();
        adam->t = ckpt.adam_t;
        adam->m.assign(params.size(), {});
        adam->v.assign(params.size(), {});
        bool any = false;
        for (size_t i = 0; i < params.size(); ++i) {
            auto im = by_name.find("opt.m." + params[i].first);
            auto iv = by_name.find("opt.v." + params[i].first);
            if (im != by_name.end() && iv != by_name.end()) {
                adam->m[i] = im->second->second;
                adam->v[i] = iv->second->second;
                any = true;
            } else {
                adam->m[i].assign(params[i].second->numel(), 0.0f);
                adam->v[i].assign(params[i].second->numel(), 0.0f);
            }
        }
        if (!any) adam->t = 0;
    }
}

inline Model model_from_checkpoint(const Checkpoint& ckpt, AdamState* adam = nullptr) {
    Model model(ckpt.config, /*seed=*/0);
    load_model_weights(model, ckpt, adam);
    return model;
}

}  // namespace mild
