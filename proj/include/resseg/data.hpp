#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "resseg/geometry.hpp"
#include "resseg/image_io.hpp"
#include "resseg/maps.hpp"
#include "resseg/tensor.hpp"

namespace resseg {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

// Uniform integer in [0, n) by rejection; independent of the standard library's distributions.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    const std::uint64_t limit = Rng::max() - (Rng::max() % n);
    std::uint64_t v;
    do {
        v = rng();
    } while (v >= limit);
    return v % n;
}

// Uniform double in [0, 1) from the top 53 bits.
inline double uniform_unit(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline bool coin(Rng& rng) { return (rng() >> 63) != 0; }

// Standard normal via Box-Muller; one value per call.
inline double standard_normal(Rng& rng) {
    double u1 = uniform_unit(rng);
    while (u1 <= 0.0) u1 = uniform_unit(rng);
    const double u2 = uniform_unit(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// SplitMix64 finalizer; derives independent stream seeds from (seed, salt).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

struct SubImage {
    std::string id;
    Tensor<float> image;  // 1×3×H×W, values in [0,1]
    BinaryMask mask;      // H×W
};

inline void validate_subimage(const SubImage& s) {
    if (s.image.n() != 1 || s.image.c() != 3) throw DataError("subimage " + s.id + ": image must be 1x3xHxW");
    require_same_size(s.image.w(), s.image.h(), s.mask.width, s.mask.height, "subimage image/mask");
}

struct DatasetSplit {
    std::vector<std::string> train;
    std::vector<std::string> validation;
    std::vector<std::string> test;
};

struct SplitRatios {
    int train = 8;
    int validation = 1;
    int test = 1;
};

// Shuffles ids with `seed`, then assigns floor-proportional validation and
// test counts; train takes the remainder.
inline DatasetSplit split_dataset(const std::vector<std::string>& ids, SplitRatios ratios, std::uint64_t seed) {
    if (ids.empty()) throw DataError("split_dataset: no ids");
    if (ratios.train <= 0 || ratios.validation <= 0 || ratios.test <= 0) {
        throw DataError("split_dataset: ratios must be positive");
    }
    if (ids.size() < 3) throw DataError("split_dataset: fewer ids than split buckets");
    const std::size_t total = static_cast<std::size_t>(ratios.train + ratios.validation + ratios.test);
    const std::size_t n = ids.size();
    const std::size_t n_val = n * ratios.validation / total;
    const std::size_t n_test = n * ratios.test / total;

    std::vector<std::string> order = ids;
    Rng rng(seed);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[uniform_index(rng, i + 1)]);

    DatasetSplit s;
    const std::size_t n_train = n - n_val - n_test;
    s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                        order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
    return s;
}

// "8:1:1" → {8, 1, 1}.
inline SplitRatios parse_ratios(const std::string& text) {
    SplitRatios r;
    int* dst[3] = {&r.train, &r.validation, &r.test};
    std::size_t pos = 0;
    for (int i = 0; i < 3; ++i) {
        const std::size_t end = i < 2 ? text.find(':', pos) : text.size();
        if (end == std::string::npos) throw DataError("ratios must look like 8:1:1, got '" + text + "'");
        const std::string part = text.substr(pos, end - pos);
        std::size_t used = 0;
        try {
            *dst[i] = std::stoi(part, &used);
        } catch (const std::exception&) {
            used = std::string::npos;
        }
        if (part.empty() || used != part.size()) throw DataError("ratios must look like 8:1:1, got '" + text + "'");
        pos = end + 1;
    }
    return r;
}

inline nlohmann::json to_json(const DatasetSplit& s) {
    return {{"train", s.train}, {"validation", s.validation}, {"test", s.test}};
}

inline DatasetSplit split_from_json(const nlohmann::json& j) {
    DatasetSplit s;
    try {
        s.train = j.at("train").get<std::vector<std::string>>();
        s.validation = j.at("validation").get<std::vector<std::string>>();
        s.test = j.at("test").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("split file: ") + e.what());
    }
    return s;
}

struct Patch {
    Tensor<float> image;  // 1×3×P×P
    BinaryMask mask;
};

inline Patch crop(const SubImage& sub, int top, int left, int size) {
    Patch p{Tensor<float>(1, 3, size, size), BinaryMask(size, size)};
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < size; ++y) {
            const float* src = sub.image.channel(0, c) + static_cast<std::size_t>(top + y) * sub.image.w() + left;
            std::copy_n(src, size, p.image.channel(0, c) + static_cast<std::size_t>(y) * size);
        }
    }
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) p.mask.at(y, x) = sub.mask.at(top + y, left + x);
    }
    return p;
}

// Crop at a uniformly random in-bounds top-left corner.
inline Patch sample_patch(const SubImage& sub, int patch_size, Rng& rng) {
    validate_subimage(sub);
    if (patch_size < 1 || patch_size > sub.image.h() || patch_size > sub.image.w()) {
        throw DataError("sample_patch: patch size " + std::to_string(patch_size) + " exceeds subimage " + sub.id);
    }
    const int top = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(sub.image.h() - patch_size + 1)));
    const int left = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(sub.image.w() - patch_size + 1)));
    return crop(sub, top, left, patch_size);
}

struct FlipDecision {
    bool horizontal = false;
    bool vertical = false;
};

inline void apply_flips(Patch& p, FlipDecision f) {
    require_same_size(p.image.w(), p.image.h(), p.mask.width, p.mask.height, "random_flip");
    const int h = p.mask.height;
    const int w = p.mask.width;
    auto flip_plane = [&](auto* plane) {
        if (f.horizontal) {
            for (int y = 0; y < h; ++y) std::reverse(plane + static_cast<std::size_t>(y) * w, plane + static_cast<std::size_t>(y + 1) * w);
        }
        if (f.vertical) {
            for (int y = 0; y < h / 2; ++y) {
                std::swap_ranges(plane + static_cast<std::size_t>(y) * w, plane + static_cast<std::size_t>(y + 1) * w,
                                 plane + static_cast<std::size_t>(h - 1 - y) * w);
            }
        }
    };
    for (int c = 0; c < p.image.c(); ++c) flip_plane(p.image.channel(0, c));
    flip_plane(p.mask.pixels.data());
}

// Horizontal and vertical flips, each with probability 1/2.
inline FlipDecision random_flip(Patch& p, Rng& rng) {
    FlipDecision f;
    f.horizontal = coin(rng);
    f.vertical = coin(rng);
    apply_flips(p, f);
    return f;
}

struct SynthConfig {
    int count = 1;
    int image_size = 128;
    int ellipses_min = 3;
    int ellipses_max = 8;
    double radius_min = 8.0;
    double radius_max = 24.0;
    double noise_stddev = 0.05;
    std::uint64_t seed = 0;
};

inline void validate(const SynthConfig& c) {
    if (c.count < 1) throw DataError("synth: count must be >= 1");
    if (c.image_size < 16) throw DataError("synth: image_size must be >= 16");
    if (c.ellipses_min < 0 || c.ellipses_max < c.ellipses_min) throw DataError("synth: bad ellipse count range");
    if (!(c.radius_min > 0.0) || c.radius_max < c.radius_min) throw DataError("synth: bad radius range");
    if (!(c.noise_stddev >= 0.0)) throw DataError("synth: noise_stddev must be >= 0");
}

inline Ring ellipse_ring(double cx, double cy, double rx, double ry, double angle, int vertices = 64) {
    Ring ring;
    ring.reserve(static_cast<std::size_t>(vertices));
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (int k = 0; k < vertices; ++k) {
        const double t = 2.0 * std::numbers::pi * k / vertices;
        const double ex = rx * std::cos(t), ey = ry * std::sin(t);
        ring.push_back({cx + ca * ex - sa * ey, cy + sa * ex + ca * ey});
    }
    return ring;
}

// Bright ellipses on a darker, smoothly textured background, plus clamped
// Gaussian pixel noise. Images are produced in order from one seeded stream.
inline std::vector<SubImage> generate_synthetic(const SynthConfig& cfg) {
    validate(cfg);
    Rng rng(cfg.seed);
    const int s = cfg.image_size;
    std::vector<SubImage> out;
    out.reserve(static_cast<std::size_t>(cfg.count));
    for (int i = 0; i < cfg.count; ++i) {
        PolygonAnnotation ann;
        const int n = cfg.ellipses_min +
                      static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(cfg.ellipses_max - cfg.ellipses_min + 1)));
        const double margin = std::min(cfg.radius_max, s / 2.0);
        for (int k = 0; k < n; ++k) {
            const double cx = margin + uniform_unit(rng) * (s - 2.0 * margin);
            const double cy = margin + uniform_unit(rng) * (s - 2.0 * margin);
            const double rx = cfg.radius_min + uniform_unit(rng) * (cfg.radius_max - cfg.radius_min);
            const double ry = cfg.radius_min + uniform_unit(rng) * (cfg.radius_max - cfg.radius_min);
            const double angle = uniform_unit(rng) * std::numbers::pi;
            ann.polygons.push_back(ellipse_ring(cx, cy, rx, ry, angle));
        }
        SubImage sub;
        sub.id = "synth_" + std::to_string(i);
        sub.mask = rasterize_polygons(ann, s, s);
        sub.image = Tensor<float>(1, 3, s, s);

        // Low-frequency texture: two random plane waves.
        double fx[2], fy[2], phase[2];
        for (int k = 0; k < 2; ++k) {
            fx[k] = (uniform_unit(rng) - 0.5) * 0.4;
            fy[k] = (uniform_unit(rng) - 0.5) * 0.4;
            phase[k] = uniform_unit(rng) * 2.0 * std::numbers::pi;
        }
        static constexpr double background[3] = {0.55, 0.30, 0.50};
        static constexpr double foreground[3] = {0.92, 0.78, 0.88};
        for (int y = 0; y < s; ++y) {
            for (int x = 0; x < s; ++x) {
                const double texture = 0.06 * std::sin(fx[0] * x + fy[0] * y + phase[0]) +
                                       0.04 * std::sin(fx[1] * x + fy[1] * y + phase[1]);
                const bool fg = sub.mask.at(y, x) != 0;
                for (int c = 0; c < 3; ++c) {
                    double v = fg ? foreground[c] : background[c] + texture;
                    v += cfg.noise_stddev * standard_normal(rng);
                    sub.image(0, c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
                }
            }
        }
        out.push_back(std::move(sub));
    }
    return out;
}

struct ManifestItem {
    std::string id;
    std::string image_path;
    std::string annotation_path;
    std::string mask_path;
};

inline std::vector<ManifestItem> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("manifest " + path + ": " + e.what());
    }
    if (!doc.is_object() || !doc.contains("items") || !doc["items"].is_array()) {
        throw DataError("manifest must be an object with an \"items\" array");
    }
    const std::filesystem::path base = std::filesystem::path(path).parent_path();
    auto resolve = [&](const std::string& p) {
        const std::filesystem::path fp(p);
        return (fp.is_absolute() ? fp : base / fp).string();
    };
    std::vector<ManifestItem> items;
    for (const auto& it : doc["items"]) {
        if (!it.contains("id") || !it.contains("image_path")) throw DataError("manifest item missing id or image_path");
        ManifestItem m;
        m.id = it["id"].get<std::string>();
        m.image_path = resolve(it["image_path"].get<std::string>());
        if (it.contains("annotation_path")) m.annotation_path = resolve(it["annotation_path"].get<std::string>());
        if (it.contains("mask_path")) m.mask_path = resolve(it["mask_path"].get<std::string>());
        if (m.annotation_path.empty() && m.mask_path.empty()) {
            throw DataError("manifest item " + m.id + " needs annotation_path or mask_path");
        }
        items.push_back(std::move(m));
    }
    return items;
}

inline SubImage load_item(const ManifestItem& item) {
    SubImage s;
    s.id = item.id;
    s.image = load_rgb(item.image_path);
    if (!item.mask_path.empty()) {
        s.mask = load_mask(item.mask_path);
    } else {
        s.mask = rasterize_polygons(load_annotation(item.annotation_path), s.image.w(), s.image.h());
    }
    validate_subimage(s);
    return s;
}

inline std::vector<SubImage> load_dataset(const std::string& manifest_path) {
    std::vector<SubImage> out;
    for (const auto& item : load_manifest(manifest_path)) out.push_back(load_item(item));
    return out;
}

// Selects the subimages named in `ids`, in that order.
inline std::vector<SubImage> select(const std::vector<SubImage>& all, const std::vector<std::string>& ids) {
    std::vector<SubImage> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        auto it = std::find_if(all.begin(), all.end(), [&](const SubImage& s) { return s.id == id; });
        if (it == all.end()) throw DataError("unknown id in split: " + id);
        out.push_back(*it);
    }
    return out;
}

// One epoch's training patches: `per_image` random crops of every subimage,
// visited in a seeded random order, each randomly flipped.
inline std::vector<Patch> epoch_patches(const std::vector<SubImage>& subs, int patch_size, int per_image,
                                        std::uint64_t seed, int epoch) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> order;
    order.reserve(subs.size() * static_cast<std::size_t>(per_image));
    for (std::size_t i = 0; i < subs.size(); ++i) {
        for (int k = 0; k < per_image; ++k) order.push_back(i);
    }
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    std::vector<Patch> patches;
    patches.reserve(order.size());
    for (std::size_t idx : order) {
        Patch p = sample_patch(subs[idx], patch_size, rng);
        random_flip(p, rng);
        patches.push_back(std::move(p));
    }
    return patches;
}

}  // namespace resseg
