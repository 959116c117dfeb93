#include "oracles/mask_oracle.hpp"

#include "splatw/robust_mask.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace splatw;

namespace {

Image<double> field(const std::vector<double>& v, int w, int h) {
    Image<double> img(w, h, 1);
    img.data = v;
    return img;
}

TEST(MaskStats, FirstUpdate) {
    MaskState s(1, MaskConfig{});
    s.update_stats(0, 0.3);
    EXPECT_EQ(s.stats(0).l1_min, 0.3);
    EXPECT_EQ(s.stats(0).l1_max, 0.3);
    EXPECT_EQ(s.stats(0).l1_current, 0.3);
}

TEST(MaskStats, Sequence) {
    MaskState s(1, MaskConfig{});
    for (double v : {0.3, 0.1, 0.5}) s.update_stats(0, v);
    EXPECT_EQ(s.stats(0).l1_min, 0.1);
    EXPECT_EQ(s.stats(0).l1_max, 0.5);
    EXPECT_EQ(s.stats(0).l1_current, 0.5);
}

TEST(MaskStats, RandomSequencesMatchAFold) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0, 1);
    MaskState s(3, MaskConfig{});
    double lo[3], hi[3], cur[3];
    bool init[3] = {false, false, false};
    for (int t = 0; t < 500; ++t) {
        const std::size_t j = static_cast<std::size_t>(u(rng) * 3);
        const double v = u(rng);
        s.update_stats(j, v);
        lo[j] = init[j] ? std::min(lo[j], v) : v;
        hi[j] = init[j] ? std::max(hi[j], v) : v;
        cur[j] = v;
        init[j] = true;
        EXPECT_EQ(s.stats(j).l1_min, lo[j]);
        EXPECT_EQ(s.stats(j).l1_max, hi[j]);
        EXPECT_EQ(s.stats(j).l1_current, cur[j]);
    }
}

TEST(MaskStats, RejectsInvalidLoss) {
    MaskState s(1, MaskConfig{});
    EXPECT_THROW(s.update_stats(0, -1.0), std::invalid_argument);
    EXPECT_THROW(s.update_stats(0, std::nan("")), std::invalid_argument);
    EXPECT_THROW(s.mask_fraction(0), std::logic_error);
}

TEST(MaskFraction, EndpointsMidpointAndDegenerate) {
    MaskConfig cfg;
    MaskState s(1, cfg);
    s.update_stats(0, 0.2);
    EXPECT_EQ(s.mask_fraction(0), cfg.per_min);  // max == min
    s.update_stats(0, 0.6);
    EXPECT_NEAR(s.mask_fraction(0), cfg.per_max, 1e-15);
    s.update_stats(0, 0.2);
    EXPECT_NEAR(s.mask_fraction(0), cfg.per_min, 1e-15);
    s.update_stats(0, 0.4);
    EXPECT_NEAR(s.mask_fraction(0), 0.5 * (cfg.per_min + cfg.per_max), 1e-15);
}

TEST(BuildMask, ZeroFractionMasksNothing) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<double> v(20 * 15);
    for (auto& x : v) x = u(rng);
    const auto m = build_mask<double>(field(v, 20, 15), 0.0);
    EXPECT_EQ(m.threshold, *std::max_element(v.begin(), v.end()));
    for (auto w : m.weights.data) EXPECT_EQ(w, 1);
}

TEST(BuildMask, IsolatedSpotIsReincludedByTheBlur) {
    const int w = 20, h = 20;
    std::vector<double> v(w * h, 0.01);
    v[15 * w + 10] = 1.0;  // below the upper band
    const auto m = build_mask<double>(field(v, w, h), 0.01);
    EXPECT_EQ(m.raw(10, 15), 0);
    EXPECT_EQ(m.weights(10, 15), 1);
    for (auto x : m.weights.data) EXPECT_EQ(x, 1);
}

TEST(BuildMask, HighResidualBlockInTheLowerHalf) {
    const int w = 64, h = 64;
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0, 0.05);
    std::vector<double> v(w * h);
    for (auto& x : v) x = u(rng);
    for (int y = 36; y < 56; ++y)
        for (int x = 20; x < 40; ++x) v[y * w + x] = 0.5 + u(rng);
    const auto m = build_mask<double>(field(v, w, h), 0.2);
    const auto o = oracle::robust_mask(v, w, h, 0.2);
    int core = 0, core_out = 0, far = 0, far_in = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int p = y * w + x;
            ASSERT_EQ(m.weights.data[p], o.weights[p]);
            if (x >= 22 && x < 38 && y >= 38 && y < 54) {
                ++core;
                core_out += m.weights.data[p] == 0;
            }
            if (x < 14 || x >= 46 || y < 30) {
                ++far;
                far_in += m.weights.data[p] == 1;
            }
        }
    EXPECT_GE(double(core_out) / core, 0.7);
    EXPECT_GE(double(far_in) / far, 0.99);
}

TEST(BuildMask, UpperBandIsAlwaysInlier) {
    const int w = 16, h = 20;
    std::vector<double> v(w * h, 0.0);
    for (int y = 0; y <= 8; ++y)
        for (int x = 0; x < w; ++x) v[y * w + x] = 1.0;  // rows 0..8 = 0.4 H
    const auto m = build_mask<double>(field(v, w, h), 0.4);
    for (int y = 0; y <= 8; ++y)
        for (int x = 0; x < w; ++x) EXPECT_EQ(m.raw(x, y), 1);
}

TEST(BuildMask, MatchesTranscriptionOracle) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0, 1);
    for (int t = 0; t < 30; ++t) {
        const int w = 5 + static_cast<int>(u(rng) * 40), h = 5 + static_cast<int>(u(rng) * 40);
        std::vector<double> v(w * h);
        for (auto& x : v) x = u(rng) * u(rng);
        const double k = u(rng) * 0.5;
        const auto m = build_mask<double>(field(v, w, h), k);
        const auto o = oracle::robust_mask(v, w, h, k);
        ASSERT_EQ(m.threshold, o.threshold);
        for (int p = 0; p < w * h; ++p) {
            ASSERT_EQ(m.raw.data[p], o.raw[p]);
            ASSERT_EQ(m.weights.data[p], o.weights[p]);
        }
    }
}

}  // namespace
