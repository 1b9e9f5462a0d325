#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "resseg/checkpoint.hpp"
#include "resseg/data.hpp"
#include "resseg/loss.hpp"
#include "resseg/objective.hpp"
#include "resseg/optim.hpp"
#include "resseg/resseg.hpp"

namespace resseg {

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    ModelKind model = ModelKind::ResSegFixed;
    int epochs = 30;
    int batch_size = 4;
    double learning_rate = 1e-4;
    std::uint64_t seed = 0;
    int patches_per_image = 4;
    LossWeights weights;  // empty: 1/4 per intermediate level, 1 for the final
    double eval_threshold = 0.5;
    NetworkConfig network = desk_profile();
    int horz_stages = 5;
};

inline void validate(const TrainConfig& c) {
    if (c.epochs < 1) throw ConfigError("epochs must be >= 1");
    if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(c.learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (c.patches_per_image < 1) throw ConfigError("patches_per_image must be >= 1");
    if (!(c.eval_threshold > 0.0 && c.eval_threshold < 1.0)) throw ConfigError("eval_threshold must lie in (0,1)");
    if (!c.weights.per_level.empty()) validate(c.weights);
    validate(c.network);
}

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"model", to_string(c.model)},
            {"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"seed", c.seed},
            {"patches_per_image", c.patches_per_image},
            {"weights", c.weights.per_level},
            {"eval_threshold", c.eval_threshold},
            {"network", to_json(c.network)},
            {"horz_stages", c.horz_stages}};
}

// Missing keys keep their defaults; unknown keys are rejected.
inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
    static const std::vector<std::string> known = {"model",          "epochs",  "batch_size", "learning_rate",
                                                   "seed",           "patches_per_image", "weights", "eval_threshold",
                                                   "network",        "horz_stages"};
    if (!j.is_object()) throw ConfigError("train config must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
            throw ConfigError("unknown train config key '" + it.key() + "'");
        }
    }
    try {
        if (j.contains("model")) c.model = parse_model_kind(j["model"].get<std::string>());
        if (j.contains("epochs")) c.epochs = j["epochs"].get<int>();
        if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<int>();
        if (j.contains("learning_rate")) c.learning_rate = j["learning_rate"].get<double>();
        if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("patches_per_image")) c.patches_per_image = j["patches_per_image"].get<int>();
        if (j.contains("weights")) c.weights.per_level = j["weights"].get<std::vector<double>>();
        if (j.contains("eval_threshold")) c.eval_threshold = j["eval_threshold"].get<double>();
        if (j.contains("network")) c.network = network_config_from_json(j["network"], c.network);
        if (j.contains("horz_stages")) c.horz_stages = j["horz_stages"].get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    return c;
}

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_mean_dsc = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> per_epoch;
    int best_epoch = 0;
};

// Earliest epoch with the highest validation DSC.
inline int select_best_epoch(const std::vector<EpochRecord>& records) {
    if (records.empty()) throw TrainingError("no epochs recorded");
    const EpochRecord* best = &records.front();
    for (const auto& r : records) {
        if (r.val_mean_dsc > best->val_mean_dsc) best = &r;
    }
    return best->epoch;
}

inline nlohmann::json to_json(const TrainHistory& h) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& r : h.per_epoch) {
        epochs.push_back({{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_mean_dsc", r.val_mean_dsc}});
    }
    return {{"per_epoch", epochs}, {"best_epoch", h.best_epoch}};
}

inline TrainHistory history_from_json(const nlohmann::json& j) {
    TrainHistory h;
    for (const auto& e : j.at("per_epoch")) {
        h.per_epoch.push_back({e.at("epoch").get<int>(), e.at("train_loss").get<double>(),
                               e.at("val_mean_dsc").get<double>()});
    }
    h.best_epoch = j.at("best_epoch").get<int>();
    return h;
}

struct ImageScore {
    std::string id;
    double dsc = 0.0;
};

struct EvalReport {
    std::vector<ImageScore> per_image;
    double mean_dsc = 0.0;
    double threshold = 0.5;
};

inline nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json items = nlohmann::json::array();
    for (const auto& s : r.per_image) items.push_back({{"id", s.id}, {"dsc", s.dsc}});
    return {{"per_image", items}, {"mean_dsc", r.mean_dsc}, {"threshold", r.threshold}};
}

// Finest prob-map for a whole image. Images are cut into non-overlapping
// input_size tiles over a zero-padded canvas; each tile is one forward pass.
template <typename T>
ProbMap<T> predict_full(const SegmentationNet<T>& net, const Tensor<float>& image) {
    const int tile = net.config().input_size;
    const int h = image.h(), w = image.w();
    const int th = (h + tile - 1) / tile, tw = (w + tile - 1) / tile;
    ProbMap<T> out(w, h);
    Tensor<T> patch(1, image.c(), tile, tile);
    for (int ty = 0; ty < th; ++ty) {
        for (int tx = 0; tx < tw; ++tx) {
            patch.fill(T(0));
            const int y0 = ty * tile, x0 = tx * tile;
            const int ch = std::min(tile, h - y0), cw = std::min(tile, w - x0);
            for (int c = 0; c < image.c(); ++c) {
                for (int y = 0; y < ch; ++y) {
                    for (int x = 0; x < cw; ++x) patch(0, c, y, x) = static_cast<T>(image(0, c, y0 + y, x0 + x));
                }
            }
            const Tensor<T> prob = net.forward(patch).final_map();
            for (int y = 0; y < ch; ++y) {
                for (int x = 0; x < cw; ++x) out.at(y0 + y, x0 + x) = prob(0, 0, y, x);
            }
        }
    }
    return out;
}

using Predictor = std::function<ProbMap<float>(const SubImage&)>;

// Binarizes each prediction and scores it; mean_dsc is the per-image (macro) average.
inline EvalReport evaluate_with(const std::vector<SubImage>& subs, const Predictor& predict, double threshold) {
    if (subs.empty()) throw DataError("evaluate: empty split");
    EvalReport r;
    r.threshold = threshold;
    double sum = 0.0;
    for (const auto& s : subs) {
        const ProbMap<float> p = predict(s);
        require_same_size(p.width, p.height, s.mask.width, s.mask.height, "evaluate");
        const double d = dsc(binarize(p, threshold), s.mask);
        r.per_image.push_back({s.id, d});
        sum += d;
    }
    r.mean_dsc = sum / static_cast<double>(subs.size());
    return r;
}

template <typename T>
EvalReport evaluate(const SegmentationNet<T>& net, const std::vector<SubImage>& subs, double threshold) {
    for (const auto& s : subs) {
        if (s.image.c() != net.config().input_channels) {
            throw ConfigError("evaluate: image " + s.id + " has " + std::to_string(s.image.c()) +
                              " channels, network expects " + std::to_string(net.config().input_channels));
        }
    }
    return evaluate_with(
        subs, [&](const SubImage& s) { return predict_full(net, s.image).template cast_to<float>(); }, threshold);
}

struct TrainResult {
    SegmentationNet<float> best;
    TrainHistory history;
};

inline LossWeights effective_weights(const TrainConfig& cfg, std::size_t outputs) {
    if (cfg.weights.per_level.empty()) return LossWeights::standard(outputs);
    if (cfg.weights.per_level.size() != outputs) {
        throw ConfigError("weights has " + std::to_string(cfg.weights.per_level.size()) + " entries but the model has " +
                          std::to_string(outputs) + " outputs");
    }
    return cfg.weights;
}

using EpochCallback = std::function<void(const EpochRecord&)>;

// Minibatch Adam on the multi-resolution Dice objective. Every epoch samples
// fresh patches, records the mean training loss and validation DSC of the
// finest map, and keeps the parameters of the best validation epoch.
inline TrainResult train(const TrainConfig& cfg, const std::vector<SubImage>& train_set,
                         const std::vector<SubImage>& val_set, const EpochCallback& on_epoch = {}) {
    validate(cfg);
    if (train_set.empty()) throw DataError("train: empty training split");
    if (val_set.empty()) throw DataError("train: empty validation split");

    SegmentationNet<float> net(cfg.model, cfg.network, cfg.horz_stages);
    net.init(mix_seed(cfg.seed, 0xC0FFEE));
    const LossWeights weights = effective_weights(cfg, net.output_count());
    Adam<float> adam(net.params(), AdamOptions{cfg.learning_rate});
    Gradients<float> grads(net.params());

    TrainResult result{net, {}};
    double best_dsc = -1.0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto patches = epoch_patches(train_set, cfg.network.input_size, cfg.patches_per_image, cfg.seed, epoch);
        double loss_sum = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t b = 0; b < patches.size(); b += static_cast<std::size_t>(cfg.batch_size), ++batch_index) {
            const std::size_t e = std::min(patches.size(), b + static_cast<std::size_t>(cfg.batch_size));
            const Batch<float> batch = make_batch<float>(patches, b, e);
            grads.zero();
            const ObjectiveValue v = objective(net, batch, weights, &grads);
            if (!std::isfinite(v.total)) {
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                    std::to_string(batch_index));
            }
            adam.step(net.params(), grads);
            loss_sum += v.total * static_cast<double>(e - b);
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(patches.size());
        rec.val_mean_dsc = evaluate(net, val_set, cfg.eval_threshold).mean_dsc;
        result.history.per_epoch.push_back(rec);
        if (rec.val_mean_dsc > best_dsc) {
            best_dsc = rec.val_mean_dsc;
            result.best = net;
        }
        if (on_epoch) on_epoch(rec);
    }
    result.history.best_epoch = select_best_epoch(result.history.per_epoch);
    return result;
}

}  // namespace resseg
