#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "mildnet/augment.hpp"
#include "mildnet/image.hpp"
#include "mildnet/synth.hpp"

// Dataset directory convention:
//   images/<id>.png   8-bit RGB
//   labels/<id>.png   16-bit grayscale instance map (pixel value = id)
//   lumen/<id>.png    optional 16-bit grayscale lumen instance map
//   manifest.txt      one "<id> train|val" line per item
// When no manifest is present a deterministic split is derived from the
// sorted item order and the requested validation fraction.

namespace mild {

struct DatasetItem {
    std::string id;
    ImageRGB image;
    InstanceMap labels;
    std::optional<InstanceMap> lumen;
};

struct Dataset {
    std::vector<DatasetItem> items;
    std::vector<size_t> train_idx, val_idx;

    bool has_lumen() const {
        for (const auto& it : items)
            if (!it.lumen) return false;
        return !items.empty();
    }
};

namespace detail {

inline std::vector<char> split_assignment(size_t count, double val_fraction) {
    // spreads validation items evenly through the sorted order
    std::vector<char> is_val(count, 0);
    for (size_t i = 0; i < count; ++i)
        if (std::floor((i + 1) * val_fraction) > std::floor(i * val_fraction)) is_val[i] = 1;
    return is_val;
}

}  // namespace detail

inline Dataset load_dataset(const std::string& dir, double val_fraction = 0.2) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw DataError("dataset directory not found: " + dir);
    const fs::path images = fs::path(dir) / "images";
    const fs::path labels = fs::path(dir) / "labels";
    const fs::path lumen = fs::path(dir) / "lumen";
    if (!fs::is_directory(images)) throw DataError("dataset has no images/ directory: " + dir);

    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(images))
        if (e.path().extension() == ".png") ids.push_back(e.path().stem().string());
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) throw DataError("no PNG images found under " + images.string());

    Dataset ds;
    std::vector<std::string> problems;
    for (const auto& id : ids) {
        try {
            DatasetItem item;
            item.id = id;
            item.image = read_image_png((images / (id + ".png")).string());
            const fs::path lp = labels / (id + ".png");
            if (!fs::exists(lp)) {
                problems.push_back(id + ": missing label map " + lp.string());
                continue;
            }
            item.labels = read_label_png(lp.string());
            if (item.labels.h != item.image.h || item.labels.w != item.image.w) {
                problems.push_back(id + ": label extents " + std::to_string(item.labels.w) + "x" +
                                   std::to_string(item.labels.h) + " do not match image");
                continue;
            }
            const fs::path lu = lumen / (id + ".png");
            if (fs::exists(lu)) {
                item.lumen = read_label_png(lu.string());
                if (item.lumen->h != item.image.h || item.lumen->w != item.image.w) {
                    problems.push_back(id + ": lumen extents do not match image");
                    continue;
                }
            }
            ds.items.push_back(std::move(item));
        } catch (const DataError& e) {
            problems.push_back(id + ": " + e.what());
        }
    }
    if (!problems.empty()) {
        std::string msg = "dataset ingest failed for " + std::to_string(problems.size()) + " item(s):";
        for (const auto& p : problems) msg += "\n  " + p;
        throw DataError(msg);
    }

    // split: manifest wins, otherwise deterministic by order
    const fs::path manifest = fs::path(dir) / "manifest.txt";
    if (fs::exists(manifest)) {
        std::unordered_map<std::string, std::string> split;
        std::ifstream in(manifest);
        std::string id, part;
        while (in >> id >> part) split[id] = part;
        for (size_t i = 0; i < ds.items.size(); ++i) {
            auto it = split.find(ds.items[i].id);
            if (it == split.end()) throw DataError("manifest has no entry for item '" + ds.items[i].id + "'");
            if (it->second == "val")
                ds.val_idx.push_back(i);
            else if (it->second == "train")
                ds.train_idx.push_back(i);
            else
                throw DataError("manifest split '" + it->second + "' for item '" + ds.items[i].id +
                                "' is not train|val");
        }
    } else {
        auto is_val = detail::split_assignment(ds.items.size(), val_fraction);
        for (size_t i = 0; i < ds.items.size(); ++i)
            (is_val[i] ? ds.val_idx : ds.train_idx).push_back(i);
    }
    if (ds.train_idx.empty()) throw DataError("dataset split left no training items: " + dir);
    return ds;
}

// Writes synthesized samples in the dataset directory convention.
inline void save_dataset(const std::string& dir, const std::vector<SynthSample>& samples, double val_fraction,
                         bool write_lumen = true) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "labels");
    if (write_lumen) fs::create_directories(fs::path(dir) / "lumen");

    auto is_val = detail::split_assignment(samples.size(), val_fraction);
    std::ofstream manifest(fs::path(dir) / "manifest.txt");
    if (!manifest) throw DataError("cannot write manifest under " + dir);
    char name[16];
    for (size_t i = 0; i < samples.size(); ++i) {
        std::snprintf(name, sizeof(name), "%03zu", i);
        write_image_png((fs::path(dir) / "images" / (std::string(name) + ".png")).string(), samples[i].image);
        write_label_png((fs::path(dir) / "labels" / (std::string(name) + ".png")).string(), samples[i].instances);
        if (write_lumen)
            write_label_png((fs::path(dir) / "lumen" / (std::string(name) + ".png")).string(), samples[i].lumen);
        manifest << name << ' ' << (is_val[i] ? "val" : "train") << '\n';
    }
}

// --- patch extraction ----------------------------------------------------------

struct PatchRef {
    Sample sample;
    int y0 = 0, x0 = 0;
};

namespace detail {

inline ImageRGB mirror_pad_image(const ImageRGB& im, int h, int w) {
    ImageRGB out = make_image(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                out.at(y, x, c) = im.at(reflect_index(y, im.h), reflect_index(x, im.w), c);
    return out;
}

inline InstanceMap mirror_pad_labels(const InstanceMap& m, int h, int w) {
    InstanceMap out = make_instance_map(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(y, x) = m.at(reflect_index(y, m.h), reflect_index(x, m.w));
    return out;
}

inline std::vector<int> grid_positions(int extent, int patch, int stride) {
    std::vector<int> pos;
    for (int p = 0; p + patch < extent; p += stride) pos.push_back(p);
    pos.push_back(extent - patch);  // always cover the far edge
    return pos;
}

}  // namespace detail

// Overlapping grid of patches with paired label crops; instance ids are kept
// as-is. Inputs smaller than the patch are mirror-padded first.
inline std::vector<PatchRef> extract_patches(const ImageRGB& image, const InstanceMap& labels,
                                             const InstanceMap* lumen, int patch, int stride = 0) {
    if (patch < 1) throw ConfigError("patch size must be >= 1");
    if (stride <= 0) stride = std::max(1, patch / 2);
    Sample src;
    src.image = image;
    src.labels = labels;
    if (lumen) src.lumen = *lumen;
    if (image.h < patch || image.w < patch) {
        const int h = std::max(image.h, patch), w = std::max(image.w, patch);
        src.image = detail::mirror_pad_image(image, h, w);
        src.labels = detail::mirror_pad_labels(labels, h, w);
        if (lumen) src.lumen = detail::mirror_pad_labels(*lumen, h, w);
    }
    std::vector<PatchRef> out;
    for (int y0 : detail::grid_positions(src.image.h, patch, stride))
        for (int x0 : detail::grid_positions(src.image.w, patch, stride)) {
            PatchRef p;
            p.y0 = y0;
            p.x0 = x0;
            p.sample = crop_sample(src, y0, x0, patch);
            out.push_back(std::move(p));
        }
    return out;
}

}  // namespace mild
