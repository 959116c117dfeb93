#include "oracles/naive_mlp.hpp"
#include "test_util.hpp"

#include "splatw/pipeline.hpp"

#include <gtest/gtest.h>

using namespace splatw;

namespace {

CameraView<double> orbit_camera(double az, double el, int size = 16) {
    const Vec3<double> eye(4 * std::cos(el) * std::sin(az), 4 * std::sin(el), 4 * std::cos(el) * std::cos(az));
    return look_at<double>(eye, Vec3<double>::Zero(), Vec3<double>(0, 1, 0), 1.2 * size, 1.2 * size, size, size);
}

/// A random model around the origin with every layer non-zero.
SceneModel<double> random_model(std::uint64_t seed, std::size_t n_gauss = 30, std::size_t n_img = 3) {
    std::mt19937_64 rng(seed);
    SceneModel<double> m;
    m.cloud = testutil::random_cloud<double>(rng, n_gauss, -0.5, 0.5, 0.5);
    m.appearance = AppearanceModel<double>(n_img, AppearanceConfig{});
    m.appearance.init(rng);
    m.appearance.mlp.init_he(rng, false);
    m.appearance.init_features(m.cloud, rng);
    m.background = BackgroundModel<double>(BackgroundConfig{});
    m.background.init(rng);
    m.background.mlp.init_he(rng, false);
    return m;
}

TEST(Mlp, ShapesAndZeroInit) {
    AppearanceModel<float> a(2, AppearanceConfig{});
    ASSERT_EQ(a.mlp.depth(), 3u);
    EXPECT_EQ(a.mlp.input_dim(), 120);
    EXPECT_EQ(a.mlp.layers()[0].out(), 256);
    EXPECT_EQ(a.mlp.layers()[1].out(), 256);
    EXPECT_EQ(a.mlp.output_dim(), 48);
    BackgroundModel<float> b{BackgroundConfig{}};
    EXPECT_EQ(b.mlp.input_dim(), 48);
    EXPECT_EQ(b.mlp.layers()[0].out(), 128);
    EXPECT_EQ(b.mlp.output_dim(), 27);
    // Init: output layer zero, hidden layers not.
    std::mt19937_64 rng(1);
    a.init(rng);
    EXPECT_EQ(a.mlp.layers()[2].weight.cwiseAbs().maxCoeff(), 0.f);
    EXPECT_GT(a.mlp.layers()[0].weight.cwiseAbs().maxCoeff(), 0.f);
}

TEST(Mlp, MatchesNaiveLoopOracle) {
    std::mt19937_64 rng(2);
    Mlp<double> mlp({120, 256, 256, 48});
    mlp.init_he(rng, false);
    for (auto& l : mlp.layers()) l.bias.setRandom();
    const auto x = testutil::random_image<double>(rng, 120, 5, 1);
    RowMatrix<double> xm(5, 120);
    for (int i = 0; i < 600; ++i) xm.data()[i] = x.data[i] - 0.5;
    const RowMatrix<double> y = mlp.forward(xm);
    for (int r = 0; r < 5; ++r) {
        std::vector<double> row(xm.row(r).data(), xm.row(r).data() + 120);
        const auto ref = oracle::mlp_forward(mlp, row);
        for (int c = 0; c < 48; ++c) EXPECT_NEAR(y(r, c), ref[c], 1e-6);
    }
}

TEST(Mlp, BackwardMatchesFiniteDifferences) {
    std::mt19937_64 rng(3);
    Mlp<double> mlp({6, 8, 8, 4});
    mlp.init_he(rng, false);
    for (auto& l : mlp.layers()) l.bias.setRandom();
    RowMatrix<double> x = RowMatrix<double>::Random(3, 6);
    const RowMatrix<double> up = RowMatrix<double>::Random(3, 4);
    auto loss = [&] { return (mlp.forward(x).array() * up.array()).sum(); };
    MlpTrace<double> tr;
    mlp.forward(x, &tr);
    Mlp<double> g = mlp.zeros_like();
    RowMatrix<double> gx;
    mlp.backward(tr, up, g, &gx);
    auto fd = [&](double& p) {
        const double h = 1e-6, o = p;
        p = o + h;
        const double a = loss();
        p = o - h;
        const double b = loss();
        p = o;
        return (a - b) / (2 * h);
    };
    for (std::size_t l = 0; l < mlp.depth(); ++l) {
        auto& L = mlp.layers()[l];
        for (Eigen::Index k = 0; k < L.weight.size(); ++k) {
            const double n = fd(L.weight.data()[k]), a = g.layers()[l].weight.data()[k];
            EXPECT_LT(std::abs(n - a) / std::max({std::abs(n), std::abs(a), 1e-6}), 1e-4);
        }
        for (Eigen::Index k = 0; k < L.bias.size(); ++k) {
            const double n = fd(L.bias.data()[k]), a = g.layers()[l].bias(k);
            EXPECT_LT(std::abs(n - a) / std::max({std::abs(n), std::abs(a), 1e-6}), 1e-4);
        }
    }
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        const double n = fd(x.data()[k]), a = gx.data()[k];
        EXPECT_LT(std::abs(n - a) / std::max({std::abs(n), std::abs(a), 1e-6}), 1e-4);
    }
}

TEST(Appearance, ZeroNetworkGivesGrey) {
    SceneModel<double> m = random_model(4);
    for (auto& l : m.appearance.mlp.layers()) {
        l.weight.setZero();
        l.bias.setZero();
    }
    const auto f = appearance_forward<double>(m.appearance, m.cloud, m.appearance.embedding(0), orbit_camera(0.3, 0.2));
    EXPECT_EQ(f.table.cwiseAbs().maxCoeff(), 0.0);
    for (Eigen::Index k = 0; k < f.view.colors.size(); ++k) EXPECT_EQ(f.view.colors.data()[k], 0.5);
}

TEST(Appearance, DcOnlyColorsIgnoreTheCamera) {
    SceneModel<double> m = random_model(5);
    auto& last = m.appearance.mlp.layers().back();
    for (int r = 0; r < last.out(); ++r) {
        if (r % 16 == 0) continue;
        last.weight.row(r).setZero();
        last.bias(r) = 0;
    }
    const auto a = appearance_forward<double>(m.appearance, m.cloud, m.appearance.embedding(1), orbit_camera(0.1, 0.0));
    const auto b = appearance_forward<double>(m.appearance, m.cloud, m.appearance.embedding(1), orbit_camera(2.0, 0.4));
    EXPECT_LT((a.view.colors - b.view.colors).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_GT((a.view.colors.array() - 0.5).abs().maxCoeff(), 1e-3);
}

TEST(Appearance, PermutingGaussiansPermutesColors) {
    SceneModel<double> m = random_model(6, 10);
    const auto cam = orbit_camera(0.7, 0.1);
    const auto a = appearance_forward<double>(m.appearance, m.cloud, m.appearance.embedding(0), cam);
    GaussianCloud<double> p = m.cloud;
    std::vector<int> perm{3, 1, 4, 0, 9, 2, 6, 5, 8, 7};
    for (int i = 0; i < 10; ++i) {
        p.means.row(i) = m.cloud.means.row(perm[i]);
        p.features.row(i) = m.cloud.features.row(perm[i]);
    }
    const auto b = appearance_forward<double>(m.appearance, p, m.appearance.embedding(0), cam);
    for (int i = 0; i < 10; ++i)
        for (int c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(b.view.colors(i, c), a.view.colors(perm[i], c));
}

TEST(Appearance, ComposesPredictShAndShToColor) {
    SceneModel<double> m = random_model(7, 12);
    const auto cam = orbit_camera(1.1, -0.2);
    const auto f = appearance_forward<double>(m.appearance, m.cloud, m.appearance.embedding(2), cam);
    const RowMatrix<double> table = predict_sh<double>(m.appearance, m.appearance.embedding(2), m.cloud.features);
    const Vec3<double> c = cam.center();
    for (int i = 0; i < 12; ++i) {
        const Vec3<double> d = m.cloud.means.row(i).transpose() - c;
        ShCoefficients<double> coeffs(3, std::vector<double>(table.row(i).data(), table.row(i).data() + 48));
        const auto col = sh_to_color(coeffs, Direction<double>(d.x(), d.y(), d.z()));
        for (int ch = 0; ch < 3; ++ch) EXPECT_NEAR(f.view.colors(i, ch), col[ch], 1e-12);
    }
}

TEST(Appearance, CoincidentWithCameraFallsBackToPlusZ) {
    SceneModel<double> m = random_model(8, 2);
    const auto cam = orbit_camera(0.5, 0.3);
    m.cloud.means.row(0) = cam.center().transpose();
    const auto f = appearance_forward<double>(m.appearance, m.cloud, m.appearance.embedding(0), cam);
    EXPECT_EQ(f.view.dirs(0, 2), 1.0);
    EXPECT_TRUE(f.view.colors.allFinite());
}

TEST(Appearance, WrongEmbeddingSizeIsRejected) {
    SceneModel<double> m = random_model(9, 2);
    std::vector<double> e(47, 0.0);
    EXPECT_THROW(predict_sh<double>(m.appearance, e, m.cloud.features), std::invalid_argument);
}

TEST(Appearance, StaleForwardRecordIsRefused) {
    SceneModel<double> m = random_model(10, 4);
    const auto f = appearance_forward<double>(m.appearance, m.cloud, m.appearance.embedding(0), orbit_camera(0, 0));
    m.appearance.bump_version();
    EXPECT_THROW(appearance_backward<double>(m.appearance, f, RowMatrix<double>::Zero(4, 3)), std::logic_error);
}

TEST(AppearanceBackward, ZeroUpstream) {
    SceneModel<double> m = random_model(11, 4);
    const auto f = appearance_forward<double>(m.appearance, m.cloud, m.appearance.embedding(0), orbit_camera(0, 0));
    const auto g = appearance_backward<double>(m.appearance, f, RowMatrix<double>::Zero(4, 3));
    for (double v : g.embedding) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(g.features.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(g.means.cwiseAbs().maxCoeff(), 0.0);
    for (const auto& l : g.mlp.layers()) EXPECT_EQ(l.weight.cwiseAbs().maxCoeff(), 0.0);
}

/// Three Gaussians: every appearance parameter (embedding, features, MLP,
/// and the mean through the view direction) against central differences.
TEST(AppearanceBackward, FiniteDifferences) {
    SceneModel<double> m = random_model(12, 3, 1);
    AppearanceConfig small;
    small.hidden_width = 16;
    std::mt19937_64 rng(12);
    m.appearance = AppearanceModel<double>(1, small);
    m.appearance.init(rng);
    m.appearance.mlp.init_he(rng, false);
    const auto cam = orbit_camera(0.4, 0.2);
    const RowMatrix<double> up = RowMatrix<double>::Random(3, 3);
    auto loss = [&] {
        const auto f = appearance_forward<double>(m.appearance, m.cloud, m.appearance.embedding(0), cam);
        return (f.view.colors.array() * up.array()).sum();
    };
    const auto f = appearance_forward<double>(m.appearance, m.cloud, m.appearance.embedding(0), cam);
    const auto g = appearance_backward<double>(m.appearance, f, up);
    auto check = [&](double& p, double a) {
        const double h = 1e-5, o = p;
        p = o + h;
        const double fp = loss();
        p = o - h;
        const double fm = loss();
        p = o;
        const double n = (fp - fm) / (2 * h);
        EXPECT_LT(std::abs(n - a) / std::max({std::abs(n), std::abs(a), 1e-7}), 1e-4) << a << " vs " << n;
    };
    for (int k = 0; k < 48; ++k) check(m.appearance.embeddings(0, k), g.embedding[k]);
    for (Eigen::Index k = 0; k < m.cloud.features.size(); ++k) check(m.cloud.features.data()[k], g.features.data()[k]);
    for (Eigen::Index k = 0; k < m.cloud.means.size(); ++k) check(m.cloud.means.data()[k], g.means.data()[k]);
    for (std::size_t l = 0; l < m.appearance.mlp.depth(); ++l) {
        auto& L = m.appearance.mlp.layers()[l];
        for (Eigen::Index k = 0; k < L.weight.size(); k += 7) check(L.weight.data()[k], g.mlp.layers()[l].weight.data()[k]);
        for (Eigen::Index k = 0; k < L.bias.size(); ++k) check(L.bias.data()[k], g.mlp.layers()[l].bias(k));
    }
}

/// The embedding gradient is the sum of per-Gaussian input gradients.
TEST(AppearanceBackward, EmbeddingGradientAccumulatesOverGaussians) {
    SceneModel<double> m = random_model(13, 6, 1);
    const auto cam = orbit_camera(0.9, 0.1);
    const RowMatrix<double> up = RowMatrix<double>::Random(6, 3);
    const auto f = appearance_forward<double>(m.appearance, m.cloud, m.appearance.embedding(0), cam);
    const auto all = appearance_backward<double>(m.appearance, f, up);
    std::vector<double> sum(48, 0.0);
    for (int i = 0; i < 6; ++i) {
        RowMatrix<double> one = RowMatrix<double>::Zero(6, 3);
        one.row(i) = up.row(i);
        const auto g = appearance_backward<double>(m.appearance, f, one);
        for (int k = 0; k < 48; ++k) sum[k] += g.embedding[k];
    }
    for (int k = 0; k < 48; ++k) EXPECT_NEAR(all.embedding[k], sum[k], 1e-12 * std::max(1.0, std::abs(sum[k])));
}

TEST(Cache, CachedRenderEqualsLiveRender) {
    SceneModel<double> m = random_model(14, 60);
    for (std::size_t j = 0; j < 3; ++j) {
        const auto cache = build_cache<double>(m.appearance, m.cloud, m.appearance.embedding(j));
        const auto bg = m.background.predict(m.appearance.embedding(j));
        for (int c = 0; c < 5; ++c) {
            const auto cam = orbit_camera(0.9 * c + 0.2 * j, 0.15 * (c % 3 - 1));
            const auto a = render_cached<double>(m, cache, bg, cam);
            const auto b = render_live<double>(m, m.appearance.embedding(j), cam);
            for (std::size_t i = 0; i < a.data.size(); ++i) ASSERT_NEAR(a.data[i], b.data[i], 1e-12);
        }
    }
}

TEST(Cache, OneMlpBatchPerEmbedding) {
    SceneModel<float> m = random_model(15, 40).cast<float>();
    const std::size_t before = m.appearance.mlp.batches_run();
    const auto cache = build_cache<float>(m.appearance, m.cloud, m.appearance.embedding(1));
    EXPECT_EQ(m.appearance.mlp.batches_run(), before + 1);
    for (int c = 0; c < 5; ++c) render_cached<float>(m, cache, std::nullopt, orbit_camera(c, 0.1).cast<float>());
    EXPECT_EQ(m.appearance.mlp.batches_run(), before + 1);
}

TEST(Cache, VersionBumpInvalidates) {
    SceneModel<double> m = random_model(16, 5);
    const auto cache = build_cache<double>(m.appearance, m.cloud, m.appearance.embedding(0));
    EXPECT_TRUE(cache.valid_for(m.appearance));
    const auto v = m.appearance.version();
    m.appearance.bump_version();
    EXPECT_EQ(m.appearance.version(), v + 1);
    EXPECT_FALSE(cache.valid_for(m.appearance));
    EXPECT_THROW(render_cached<double>(m, cache, std::nullopt, orbit_camera(0, 0)), std::logic_error);
}

TEST(Cache, InterpolatedEmbeddingBuildsAValidCache) {
    SceneModel<double> m = random_model(17, 20);
    std::vector<double> mid(48);
    for (int k = 0; k < 48; ++k) mid[k] = 0.5 * (m.appearance.embeddings(0, k) + m.appearance.embeddings(1, k));
    const auto cache = build_cache<double>(m.appearance, m.cloud, mid);
    const auto cam = orbit_camera(0.3, 0.0);
    const auto a = render_cached<double>(m, cache, m.background.predict(mid), cam);
    const auto b = render_live<double>(m, mid, cam);
    for (std::size_t i = 0; i < a.data.size(); ++i) ASSERT_NEAR(a.data[i], b.data[i], 1e-12);
}

}  // namespace
