#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "resseg/data.hpp"

using namespace resseg;

namespace {

std::vector<std::string> make_ids(int n) {
    std::vector<std::string> ids;
    for (int i = 0; i < n; ++i) ids.push_back("img" + std::to_string(i));
    return ids;
}

SubImage gradient_subimage(int h, int w) {
    SubImage s;
    s.id = "grad";
    s.image = Tensor<float>(1, 3, h, w);
    s.mask = BinaryMask(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            // Unique per pixel, so a crop corner can be recovered from the image.
            for (int c = 0; c < 3; ++c) s.image(0, c, y, x) = static_cast<float>(y * w + x + c) / static_cast<float>(h * w + 2);
            s.mask.at(y, x) = (x * 7 + y * 3) % 5 == 0 ? 1 : 0;
        }
    }
    return s;
}

std::filesystem::path temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("resseg_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace

TEST(Split, EightyTenTenOnHundred) {
    const auto s = split_dataset(make_ids(100), {8, 1, 1}, 7);
    EXPECT_EQ(s.train.size(), 80u);
    EXPECT_EQ(s.validation.size(), 10u);
    EXPECT_EQ(s.test.size(), 10u);
}

TEST(Split, ExactProportionOnTen) {
    for (std::uint64_t seed : {0ull, 1ull, 12345ull}) {
        const auto s = split_dataset(make_ids(10), {8, 1, 1}, seed);
        EXPECT_EQ(s.train.size(), 8u);
        EXPECT_EQ(s.validation.size(), 1u);
        EXPECT_EQ(s.test.size(), 1u);
    }
}

TEST(Split, DeterministicInSeed) {
    const auto ids = make_ids(37);
    const auto a = split_dataset(ids, {8, 1, 1}, 5);
    const auto b = split_dataset(ids, {8, 1, 1}, 5);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.validation, b.validation);
    EXPECT_EQ(a.test, b.test);
    const auto c = split_dataset(ids, {8, 1, 1}, 6);
    EXPECT_NE(a.train, c.train);
}

TEST(Split, PartitionAndFloorSizes) {
    for (int n = 3; n < 120; n += 7) {
        const auto ids = make_ids(n);
        const auto s = split_dataset(ids, {8, 1, 1}, static_cast<std::uint64_t>(n));
        EXPECT_EQ(s.test.size(), static_cast<std::size_t>(n / 10));
        EXPECT_EQ(s.validation.size(), static_cast<std::size_t>(n / 10));
        std::multiset<std::string> all(s.train.begin(), s.train.end());
        all.insert(s.validation.begin(), s.validation.end());
        all.insert(s.test.begin(), s.test.end());
        EXPECT_EQ(all, std::multiset<std::string>(ids.begin(), ids.end()));
    }
}

TEST(Split, Errors) {
    EXPECT_THROW(split_dataset({}, {8, 1, 1}, 0), DataError);
    EXPECT_THROW(split_dataset(make_ids(2), {8, 1, 1}, 0), DataError);
    EXPECT_THROW(split_dataset(make_ids(20), {8, 0, 1}, 0), DataError);
}

TEST(SamplePatch, CornerRangeForFullSizes) {
    SubImage s;
    s.id = "big";
    s.image = Tensor<float>(1, 3, 800, 800);
    s.mask = BinaryMask(800, 800);
    // Encode each pixel's coordinates so the crop corner can be recovered.
    for (int y = 0; y < 800; ++y) {
        for (int x = 0; x < 800; ++x) {
            s.image(0, 0, y, x) = static_cast<float>(y);
            s.image(0, 1, y, x) = static_cast<float>(x);
        }
    }
    Rng rng(1);
    int max_top = 0, max_left = 0, min_top = 800, min_left = 800;
    for (int i = 0; i < 300; ++i) {
        const Patch p = sample_patch(s, 640, rng);
        ASSERT_EQ(p.image.h(), 640);
        ASSERT_EQ(p.mask.width, 640);
        const int top = static_cast<int>(p.image(0, 0, 0, 0));
        const int left = static_cast<int>(p.image(0, 1, 0, 0));
        ASSERT_GE(top, 0);
        ASSERT_LE(top, 160);
        ASSERT_GE(left, 0);
        ASSERT_LE(left, 160);
        max_top = std::max(max_top, top);
        min_top = std::min(min_top, top);
        max_left = std::max(max_left, left);
        min_left = std::min(min_left, left);
    }
    // 300 draws over 161 positions should reach near both ends.
    EXPECT_LT(min_top, 10);
    EXPECT_GT(max_top, 150);
    EXPECT_LT(min_left, 10);
    EXPECT_GT(max_left, 150);
}

TEST(SamplePatch, WholeImageWhenSizesMatch) {
    const SubImage s = gradient_subimage(32, 32);
    Rng rng(3);
    const Patch p = sample_patch(s, 32, rng);
    EXPECT_EQ(p.image, s.image);
    EXPECT_EQ(p.mask, s.mask);
}

TEST(SamplePatch, SameRngStateSamePatch) {
    const SubImage s = gradient_subimage(40, 48);
    Rng a(77), b(77);
    const Patch pa = sample_patch(s, 16, a);
    const Patch pb = sample_patch(s, 16, b);
    EXPECT_EQ(pa.image, pb.image);
    EXPECT_EQ(pa.mask, pb.mask);
}

TEST(SamplePatch, ImageAndMaskCroppedTogether) {
    const SubImage s = gradient_subimage(40, 48);
    Rng rng(8);
    for (int i = 0; i < 20; ++i) {
        const Patch p = sample_patch(s, 16, rng);
        // Recover the corner from the image encoding and check the mask crop.
        bool found = false;
        for (int top = 0; top <= 24 && !found; ++top) {
            for (int left = 0; left <= 32 && !found; ++left) {
                if (s.image(0, 0, top, left) == p.image(0, 0, 0, 0) && s.image(0, 0, top + 1, left + 1) == p.image(0, 0, 1, 1)) {
                    found = true;
                    for (int y = 0; y < 16; ++y) {
                        for (int x = 0; x < 16; ++x) ASSERT_EQ(p.mask.at(y, x), s.mask.at(top + y, left + x));
                    }
                }
            }
        }
        EXPECT_TRUE(found);
    }
}

TEST(SamplePatch, TooLargeRejected) {
    const SubImage s = gradient_subimage(16, 16);
    Rng rng(0);
    EXPECT_THROW(sample_patch(s, 17, rng), DataError);
}

TEST(Flip, NoFlipIsIdentity) {
    const SubImage s = gradient_subimage(8, 6);
    Patch p{s.image, s.mask};
    apply_flips(p, {false, false});
    EXPECT_EQ(p.image, s.image);
    EXPECT_EQ(p.mask, s.mask);
}

TEST(Flip, InvolutionForEveryDecision) {
    const SubImage s = gradient_subimage(7, 9);
    for (bool h : {false, true}) {
        for (bool v : {false, true}) {
            Patch p{s.image, s.mask};
            apply_flips(p, {h, v});
            apply_flips(p, {h, v});
            EXPECT_EQ(p.image, s.image);
            EXPECT_EQ(p.mask, s.mask);
        }
    }
}

TEST(Flip, HorizontalReversesColumns) {
    const SubImage s = gradient_subimage(5, 7);
    Patch p{s.image, s.mask};
    apply_flips(p, {true, false});
    for (int y = 0; y < 5; ++y) {
        for (int x = 0; x < 7; ++x) {
            EXPECT_EQ(p.mask.at(y, x), s.mask.at(y, 6 - x));
            for (int c = 0; c < 3; ++c) EXPECT_EQ(p.image(0, c, y, x), s.image(0, c, y, 6 - x));
        }
    }
}

TEST(Flip, VerticalReversesRows) {
    const SubImage s = gradient_subimage(5, 7);
    Patch p{s.image, s.mask};
    apply_flips(p, {false, true});
    for (int y = 0; y < 5; ++y) {
        for (int x = 0; x < 7; ++x) EXPECT_EQ(p.mask.at(y, x), s.mask.at(4 - y, x));
    }
}

TEST(Flip, PreservesForegroundCountAndFlipsBothHalfTheTime) {
    const SubImage s = gradient_subimage(16, 16);
    Rng rng(5);
    int hcount = 0, vcount = 0;
    for (int i = 0; i < 2000; ++i) {
        Patch p{s.image, s.mask};
        const auto f = random_flip(p, rng);
        hcount += f.horizontal;
        vcount += f.vertical;
        ASSERT_EQ(p.mask.count(), s.mask.count());
    }
    EXPECT_NEAR(hcount / 2000.0, 0.5, 0.05);
    EXPECT_NEAR(vcount / 2000.0, 0.5, 0.05);
}

TEST(Flip, DimensionMismatchRejected) {
    Patch p{Tensor<float>(1, 3, 4, 4), BinaryMask(5, 4)};
    EXPECT_THROW(apply_flips(p, {true, true}), ShapeError);
}

TEST(Synthetic, DeterministicInSeed) {
    SynthConfig cfg;
    cfg.count = 1;
    cfg.seed = 31;
    const auto a = generate_synthetic(cfg);
    const auto b = generate_synthetic(cfg);
    ASSERT_EQ(a.size(), 1u);
    EXPECT_EQ(a[0].image, b[0].image);
    EXPECT_EQ(a[0].mask, b[0].mask);
}

TEST(Synthetic, NoEllipsesMeansEmptyMask) {
    SynthConfig cfg;
    cfg.count = 3;
    cfg.ellipses_min = cfg.ellipses_max = 0;
    for (const auto& s : generate_synthetic(cfg)) EXPECT_EQ(s.mask.count(), 0u);
}

TEST(Synthetic, CircleAreaMatchesAnalytic) {
    for (double r : {8.0, 16.0, 24.0}) {
        const BinaryMask m = rasterize_polygons({{ellipse_ring(64.0, 64.0, r, r, 0.0)}}, 128, 128);
        const double area = std::numbers::pi * r * r;
        EXPECT_NEAR(static_cast<double>(m.count()), area, 0.05 * area) << "radius " << r;
    }
    // Same bound through the generator with one circle of fixed radius.
    SynthConfig cfg;
    cfg.count = 4;
    cfg.ellipses_min = cfg.ellipses_max = 1;
    cfg.radius_min = cfg.radius_max = 12.0;
    cfg.seed = 4;
    for (const auto& s : generate_synthetic(cfg)) {
        const double area = std::numbers::pi * 144.0;
        EXPECT_NEAR(static_cast<double>(s.mask.count()), area, 0.05 * area);
    }
}

TEST(Synthetic, ValuesInRangeAndForegroundBrighter) {
    SynthConfig cfg;
    cfg.count = 5;
    cfg.seed = 9;
    for (const auto& s : generate_synthetic(cfg)) {
        double fg = 0, bg = 0;
        std::size_t nf = 0, nb = 0;
        for (int y = 0; y < 128; ++y) {
            for (int x = 0; x < 128; ++x) {
                double lum = 0;
                for (int c = 0; c < 3; ++c) {
                    const float v = s.image(0, c, y, x);
                    ASSERT_GE(v, 0.0f);
                    ASSERT_LE(v, 1.0f);
                    lum += v;
                }
                if (s.mask.at(y, x)) {
                    fg += lum;
                    ++nf;
                } else {
                    bg += lum;
                    ++nb;
                }
            }
        }
        ASSERT_GT(nf, 0u);
        EXPECT_GT(fg / nf, bg / nb + 0.3);
    }
}

TEST(Synthetic, InvalidConfigRejected) {
    SynthConfig cfg;
    cfg.count = 0;
    EXPECT_THROW(generate_synthetic(cfg), DataError);
    cfg = {};
    cfg.image_size = 8;
    EXPECT_THROW(generate_synthetic(cfg), DataError);
    cfg = {};
    cfg.ellipses_min = 5;
    cfg.ellipses_max = 2;
    EXPECT_THROW(generate_synthetic(cfg), DataError);
}

TEST(EpochPatches, ReplayingSeedReproducesStream) {
    SynthConfig cfg;
    cfg.count = 3;
    cfg.image_size = 32;
    cfg.radius_min = 4;
    cfg.radius_max = 8;
    const auto subs = generate_synthetic(cfg);
    const auto a = epoch_patches(subs, 16, 2, 42, 3);
    const auto b = epoch_patches(subs, 16, 2, 42, 3);
    const auto c = epoch_patches(subs, 16, 2, 42, 4);
    ASSERT_EQ(a.size(), 6u);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].image, b[i].image);
        EXPECT_EQ(a[i].mask, b[i].mask);
        any_diff |= !(a[i].image == c[i].image);
    }
    EXPECT_TRUE(any_diff);
}

TEST(Manifest, LoadsMasksAndAnnotations) {
    const auto dir = temp_dir("manifest");
    SynthConfig cfg;
    cfg.count = 2;
    cfg.image_size = 16;
    cfg.radius_min = 3;
    cfg.radius_max = 5;
    const auto subs = generate_synthetic(cfg);
    save_rgb((dir / "a.png").string(), subs[0].image);
    save_mask((dir / "a_mask.png").string(), subs[0].mask);
    save_rgb((dir / "b.png").string(), subs[1].image);
    std::ofstream((dir / "b.json").string()) << R"({"polygons": [[[0,0],[8,0],[8,8],[0,8]]]})";
    std::ofstream((dir / "manifest.json").string())
        << R"({"items": [{"id": "a", "image_path": "a.png", "mask_path": "a_mask.png"},
                          {"id": "b", "image_path": "b.png", "annotation_path": "b.json"}]})";
    const auto loaded = load_dataset((dir / "manifest.json").string());
    ASSERT_EQ(loaded.size(), 2u);
    EXPECT_EQ(loaded[0].mask, subs[0].mask);
    for (std::size_t i = 0; i < loaded[0].image.size(); ++i) {
        EXPECT_NEAR(loaded[0].image[i], subs[0].image[i], 0.5 / 255.0 + 1e-6);
    }
    EXPECT_EQ(loaded[1].mask.count(), 64u);
    EXPECT_EQ(loaded[1].mask.at(7, 7), 1);
    EXPECT_EQ(loaded[1].mask.at(8, 8), 0);
}

TEST(Manifest, MissingLabelSourceRejected) {
    const auto dir = temp_dir("manifest_bad");
    std::ofstream((dir / "m.json").string()) << R"({"items": [{"id": "a", "image_path": "a.png"}]})";
    EXPECT_THROW(load_manifest((dir / "m.json").string()), DataError);
}

TEST(MaskPng, AnyNonzeroLoadsAsForeground) {
    const auto dir = temp_dir("maskpng");
    Image8 img{3, 1, 1, {0, 1, 200}};
    write_png((dir / "m.png").string(), img);
    const BinaryMask m = load_mask((dir / "m.png").string());
    EXPECT_EQ(m.pixels, (std::vector<std::uint8_t>{0, 1, 1}));
}
