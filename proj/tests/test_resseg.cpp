#include <gtest/gtest.h>

#include <cmath>

#include "resseg/objective.hpp"
#include "resseg/resseg.hpp"
#include "support/gradcheck.hpp"

using namespace resseg;

namespace {

NetworkConfig small_profile(int size) {
    NetworkConfig cfg = desk_profile();
    cfg.input_size = size;
    return cfg;
}

Tensor<double> random_image(int size, std::uint64_t seed) {
    Rng rng(seed);
    Tensor<double> t(1, 3, size, size);
    for (auto& v : t.values()) v = uniform_unit(rng);
    return t;
}

double max_abs(const std::vector<double>& v) {
    double m = 0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

}  // namespace

TEST(ModelKind, RoundTripsThroughString) {
    for (auto k : {ModelKind::ResSegFixed, ModelKind::ResSegNonFixed, ModelKind::ResSegHorz, ModelKind::UNetBaseline}) {
        EXPECT_EQ(parse_model_kind(to_string(k)), k);
    }
    EXPECT_THROW(parse_model_kind("resnet"), ConfigError);
}

TEST(SigmoidHead, ZeroWeightsGiveHalfAndLargeNegativeBiasSaturates) {
    SegmentationNet<double> net(ModelKind::ResSegFixed, small_profile(16));
    net.init(1);
    auto& w = net.params().at("head.bottom.weight").value;
    auto& b = net.params().at("head.bottom.bias").value;
    std::fill(w.begin(), w.end(), 0.0);
    b[0] = 0.0;
    const auto half = net.forward(random_image(16, 2));
    for (double v : half.levels[0].values()) EXPECT_EQ(v, 0.5);
    b[0] = -20.0;
    const auto low = net.forward(random_image(16, 2));
    for (double v : low.levels[0].values()) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1e-8);
    }
}

TEST(RefineUnit, AddsResidualAndTruncates) {
    // A 1-channel feature map and a kernel that only reads the feature centre tap.
    ParamStore<double> ps;
    RefineUnit<double> unit{add_conv(ps, "r", 2, 1, 3)};
    auto& w = ps.at("r.weight").value;
    std::fill(w.begin(), w.end(), 0.0);
    w[4] = 1.0;  // channel 0 (features), centre tap
    Tensor<double> prob(1, 1, 2, 2, 0.8), feats(1, 1, 2, 2, std::atanh(-0.3));
    typename RefineUnit<double>::Trace tr;
    const auto a = unit.forward(ps, prob, feats, tr);
    for (double v : a.values()) EXPECT_NEAR(v, 0.5, 1e-12);

    prob.fill(0.9);
    feats.fill(std::atanh(0.4));
    const auto b = unit.forward(ps, prob, feats, tr);
    for (double v : b.values()) EXPECT_EQ(v, 1.0);
}

TEST(RefineUnit, ZeroParametersAreIdentityOnUpsampledMap) {
    ParamStore<double> ps;
    RefineUnit<double> unit{add_conv(ps, "r", 5, 1, 3)};
    Rng rng(3);
    Tensor<double> prob(1, 1, 4, 4), feats(1, 4, 8, 8);
    for (auto& v : prob.values()) v = uniform_unit(rng);
    for (auto& v : feats.values()) v = uniform_unit(rng);
    typename RefineUnit<double>::Trace tr;
    EXPECT_EQ(unit.forward(ps, prob, feats, tr), bilinear_resize(prob, 8, 8));
}

TEST(RefineUnit, RejectsOtherScaleRatios) {
    ParamStore<double> ps;
    RefineUnit<double> unit{add_conv(ps, "r", 2, 1, 3)};
    typename RefineUnit<double>::Trace tr;
    EXPECT_THROW(unit.forward(ps, Tensor<double>(1, 1, 2, 2), Tensor<double>(1, 1, 8, 8), tr), ShapeError);
}

TEST(SegmentationNet, PyramidSizesAndRange) {
    for (auto kind : {ModelKind::ResSegFixed, ModelKind::ResSegNonFixed}) {
        SegmentationNet<double> net(kind, desk_profile());
        net.init(4);
        const auto out = net.forward(random_image(64, 5));
        ASSERT_EQ(out.size(), 4u);
        for (std::size_t i = 0; i < 4; ++i) {
            EXPECT_EQ(out.levels[i].shape(), (Shape{1, 1, 8 << i, 8 << i}));
            for (double v : out.levels[i].values()) {
                ASSERT_GE(v, 0.0);
                ASSERT_LE(v, 1.0);
            }
        }
    }
}

TEST(SegmentationNet, ZeroHeadsGiveUniformHalf) {
    SegmentationNet<double> net(ModelKind::ResSegFixed, desk_profile());
    net.init(6);
    net.zero_heads();
    const auto out = net.forward(random_image(64, 7));
    for (const auto& level : out.levels) {
        for (double v : level.values()) EXPECT_NEAR(v, 0.5, 1e-15);
    }
}

TEST(SegmentationNet, FixedAndNonFixedForwardsAreBitwiseEqual) {
    SegmentationNet<double> a(ModelKind::ResSegFixed, desk_profile());
    SegmentationNet<double> b(ModelKind::ResSegNonFixed, desk_profile());
    a.init(8);
    b.init(8);
    const auto img = random_image(64, 9);
    const auto oa = a.forward(img), ob = b.forward(img);
    for (std::size_t i = 0; i < oa.size(); ++i) EXPECT_EQ(oa.levels[i], ob.levels[i]);
}

TEST(SegmentationNet, HorizontalVariantStaysAtFullResolution) {
    SegmentationNet<double> net(ModelKind::ResSegHorz, desk_profile());
    net.init(10);
    const auto out = forward_horz(net, random_image(64, 11));
    ASSERT_EQ(out.size(), 6u);
    for (const auto& l : out.levels) EXPECT_EQ(l.shape(), (Shape{1, 1, 64, 64}));
    EXPECT_TRUE(net.params().contains("head.seed.weight"));
    EXPECT_TRUE(net.params().contains("head.refine5.weight"));
}

TEST(SegmentationNet, BaselineHasOneFullResolutionMap) {
    SegmentationNet<double> net(ModelKind::UNetBaseline, desk_profile());
    net.init(12);
    EXPECT_EQ(net.output_count(), 1u);
    EXPECT_EQ(forward_unet_baseline(net, random_image(64, 13)).shape(), (Shape{1, 1, 64, 64}));
    EXPECT_THROW(forward_ressegnet(net, random_image(64, 13)), ConfigError);
}

TEST(SegmentationNet, BackboneParametersIdenticalAcrossModels) {
    SegmentationNet<float> base(ModelKind::UNetBaseline, desk_profile());
    SegmentationNet<float> res(ModelKind::ResSegFixed, desk_profile());
    for (const auto& p : base.params()) {
        if (p.name.rfind("head.", 0) == 0) continue;
        ASSERT_TRUE(res.params().contains(p.name)) << p.name;
        EXPECT_EQ(res.params().at(p.name).shape, p.shape) << p.name;
    }
}

TEST(SegmentationNet, SameSeedSameParameters) {
    SegmentationNet<float> a(ModelKind::ResSegFixed, desk_profile()), b(ModelKind::ResSegFixed, desk_profile());
    a.init(21);
    b.init(21);
    for (std::size_t i = 0; i < a.params().count(); ++i) EXPECT_EQ(a.params()[i].value, b.params()[i].value);
}

TEST(StopGradient, FinerLossesDoNotReachCoarserHeadsUnderFixed) {
    const auto batch = oracle::random_batch<double>(1, 3, 64, 14);
    for (auto kind : {ModelKind::ResSegFixed, ModelKind::ResSegNonFixed}) {
        SegmentationNet<double> net(kind, desk_profile());
        net.init(15);
        const auto weights = LossWeights::standard(net.output_count());
        for (std::size_t level = 0; level + 1 < net.output_count(); ++level) {
            std::vector<bool> finer(net.output_count(), false);
            for (std::size_t k = level + 1; k < finer.size(); ++k) finer[k] = true;
            Gradients<double> g(net.params());
            objective(net, batch, weights, &g, &finer);
            double m = 0;
            for (auto id : net.head_params(level)) {
                m = std::max(m, max_abs(std::vector<double>(g[id].begin(), g[id].end())));
            }
            if (kind == ModelKind::ResSegFixed) {
                EXPECT_EQ(m, 0.0) << "level " << level;
            } else {
                EXPECT_GT(m, 1e-8) << "level " << level;
            }
        }
    }
}

TEST(GradientCheck, HeadsAndSampledBackboneParameters) {
    const auto batch = oracle::random_batch<double>(1, 3, 16, 16);
    for (auto kind : {ModelKind::ResSegFixed, ModelKind::ResSegNonFixed, ModelKind::ResSegHorz, ModelKind::UNetBaseline}) {
        SegmentationNet<double> net(kind, small_profile(16));
        net.init(17);
        const auto weights = LossWeights::standard(net.output_count());
        const auto report = oracle::check_gradients(net, batch, weights, {}, [&](std::size_t id, std::size_t k) {
            return net.params()[id].name.rfind("head.", 0) == 0 || k % 97 == 0;
        });
        EXPECT_GT(report.checked, 100u) << to_string(kind);
        EXPECT_EQ(report.failed, 0u) << to_string(kind) << " worst " << report.worst;
    }
}
