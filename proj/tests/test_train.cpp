#include <gtest/gtest.h>

#include <cmath>

#include "resseg/train.hpp"

using namespace resseg;

namespace {

// Tiny network and dataset so a full training run takes well under a second.
TrainConfig tiny_config(ModelKind model = ModelKind::ResSegFixed) {
    TrainConfig c;
    c.model = model;
    c.epochs = 3;
    c.batch_size = 2;
    c.learning_rate = 1e-3;
    c.seed = 5;
    c.patches_per_image = 2;
    c.network = {3, 4, 3, 3, 16};
    c.horz_stages = 2;
    return c;
}

std::vector<SubImage> tiny_data(int count, std::uint64_t seed) {
    SynthConfig s;
    s.count = count;
    s.image_size = 32;
    s.ellipses_min = 1;
    s.ellipses_max = 3;
    s.radius_min = 4;
    s.radius_max = 9;
    s.seed = seed;
    return generate_synthetic(s);
}

}  // namespace

TEST(TrainConfig, Validation) {
    TrainConfig c = tiny_config();
    c.epochs = 0;
    EXPECT_THROW(validate(c), ConfigError);
    c = tiny_config();
    c.learning_rate = 0.0;
    EXPECT_THROW(validate(c), ConfigError);
    c = tiny_config();
    c.eval_threshold = 1.0;
    EXPECT_THROW(validate(c), ConfigError);
    c = tiny_config();
    c.network.input_size = 18;
    EXPECT_THROW(validate(c), ConfigError);
}

TEST(TrainConfig, JsonRoundTripAndUnknownKeys) {
    const TrainConfig c = tiny_config(ModelKind::ResSegHorz);
    const TrainConfig back = train_config_from_json(to_json(c));
    EXPECT_EQ(to_json(back), to_json(c));
    EXPECT_THROW(train_config_from_json(nlohmann::json{{"epoch", 3}}), ConfigError);
    EXPECT_THROW(train_config_from_json(nlohmann::json{{"epochs", "three"}}), ConfigError);
}

TEST(TrainConfig, WeightCountMustMatchOutputs) {
    TrainConfig c = tiny_config();
    c.weights.per_level = {1.0, 1.0};
    EXPECT_THROW(train(c, tiny_data(4, 1), tiny_data(2, 2)), ConfigError);
}

TEST(BestEpoch, EarliestMaximumWins) {
    std::vector<EpochRecord> r = {{1, -0.1, 0.80}, {2, -0.2, 0.90}, {3, -0.3, 0.90}, {4, -0.4, 0.85}};
    EXPECT_EQ(select_best_epoch(r), 2);
    EXPECT_THROW(select_best_epoch({}), TrainingError);
}

TEST(Evaluate, EmptySplitRejected) {
    SegmentationNet<float> net(ModelKind::UNetBaseline, tiny_config().network);
    EXPECT_THROW(evaluate(net, {}, 0.5), DataError);
}

TEST(Evaluate, PerfectPredictorScoresOne) {
    const auto data = tiny_data(5, 3);
    const auto report = evaluate_with(
        data,
        [](const SubImage& s) {
            ProbMap<float> p(s.mask.width, s.mask.height);
            for (std::size_t i = 0; i < p.values.size(); ++i) p.values[i] = s.mask.pixels[i];
            return p;
        },
        0.5);
    EXPECT_EQ(report.mean_dsc, 1.0);
    ASSERT_EQ(report.per_image.size(), 5u);
    EXPECT_EQ(report.per_image[0].id, "synth_0");
}

TEST(Evaluate, MacroAverageOverImages) {
    auto data = tiny_data(2, 4);
    data[0].mask = BinaryMask(32, 32);
    data[0].mask.at(0, 0) = 1;
    data[1].mask = BinaryMask(32, 32);
    data[1].mask.at(0, 0) = 1;
    data[1].mask.at(0, 1) = 1;
    data[1].mask.at(0, 2) = 1;
    // Predict only pixel (0,0): image 0 scores 1, image 1 scores 2/4.
    const auto report = evaluate_with(
        data,
        [](const SubImage&) {
            ProbMap<float> p(32, 32);
            p.at(0, 0) = 1.0f;
            return p;
        },
        0.5);
    EXPECT_DOUBLE_EQ(report.mean_dsc, 0.75);
}

TEST(PredictFull, TilesMatchPerTileForward) {
    NetworkConfig cfg = tiny_config().network;
    SegmentationNet<float> net(ModelKind::ResSegFixed, cfg);
    net.init(6);
    const auto data = tiny_data(1, 5);
    const auto full = predict_full(net, data[0].image);
    ASSERT_EQ(full.width, 32);
    // Bottom-right tile computed directly.
    Tensor<float> tile(1, 3, 16, 16);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) tile(0, c, y, x) = data[0].image(0, c, 16 + y, 16 + x);
    const auto direct = net.forward(tile).final_map();
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) ASSERT_EQ(full.at(16 + y, 16 + x), direct(0, 0, y, x));
}

TEST(PredictFull, PadsPartialTiles) {
    SegmentationNet<float> net(ModelKind::UNetBaseline, tiny_config().network);
    net.init(7);
    Tensor<float> img(1, 3, 20, 24, 0.5f);
    const auto p = predict_full(net, img);
    EXPECT_EQ(p.width, 24);
    EXPECT_EQ(p.height, 20);
    for (float v : p.values) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
    }
}

TEST(Objective, SmallGradientStepDescends) {
    SegmentationNet<float> net(ModelKind::ResSegFixed, tiny_config().network);
    net.init(8);
    const auto data = tiny_data(2, 6);
    const auto patches = epoch_patches(data, 16, 2, 1, 1);
    const auto batch = make_batch<float>(patches, 0, patches.size());
    const auto w = LossWeights::standard(net.output_count());
    Gradients<float> g(net.params());
    const double before = objective(net, batch, w, &g).total;
    sgd_step(net.params(), g, 1e-5);
    EXPECT_LE(objective(net, batch, w).total, before);
}

TEST(Train, DeterministicForSameSeed) {
    const auto tr = tiny_data(6, 7), val = tiny_data(2, 8);
    const auto a = train(tiny_config(), tr, val);
    const auto b = train(tiny_config(), tr, val);
    ASSERT_EQ(a.history.per_epoch.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(a.history.per_epoch[i].train_loss, b.history.per_epoch[i].train_loss);
        EXPECT_EQ(a.history.per_epoch[i].val_mean_dsc, b.history.per_epoch[i].val_mean_dsc);
    }
    EXPECT_EQ(a.history.best_epoch, b.history.best_epoch);
}

TEST(Train, BestParametersMatchBestEpoch) {
    const auto tr = tiny_data(6, 9), val = tiny_data(2, 10);
    TrainConfig c = tiny_config();
    const auto r = train(c, tr, val);
    const double best = r.history.per_epoch[static_cast<std::size_t>(r.history.best_epoch - 1)].val_mean_dsc;
    EXPECT_EQ(evaluate(r.best, val, c.eval_threshold).mean_dsc, best);
}

TEST(Train, EveryModelRuns) {
    const auto tr = tiny_data(4, 11), val = tiny_data(2, 12);
    for (auto kind : {ModelKind::ResSegFixed, ModelKind::ResSegNonFixed, ModelKind::ResSegHorz, ModelKind::UNetBaseline}) {
        TrainConfig c = tiny_config(kind);
        c.epochs = 1;
        const auto r = train(c, tr, val);
        EXPECT_TRUE(std::isfinite(r.history.per_epoch[0].train_loss)) << to_string(kind);
    }
}

TEST(Train, EmptySplitsRejected) {
    EXPECT_THROW(train(tiny_config(), {}, tiny_data(1, 1)), DataError);
    EXPECT_THROW(train(tiny_config(), tiny_data(1, 1), {}), DataError);
}

TEST(Train, NonFiniteLossAborts) {
    // An absurd step size drives the weights to infinity within a few updates.
    TrainConfig c = tiny_config();
    c.learning_rate = 1e38;
    c.epochs = 20;
    try {
        train(c, tiny_data(4, 13), tiny_data(1, 14));
        FAIL() << "expected TrainingError";
    } catch (const TrainingError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("non-finite loss at epoch"), std::string::npos) << msg;
        EXPECT_NE(msg.find("batch"), std::string::npos) << msg;
    }
}

TEST(History, JsonRoundTrip) {
    TrainHistory h{{{1, -0.5, 0.7}, {2, -0.6, 0.8}}, 2};
    const auto back = history_from_json(to_json(h));
    EXPECT_EQ(back.best_epoch, 2);
    EXPECT_EQ(back.per_epoch[1].val_mean_dsc, 0.8);
}
