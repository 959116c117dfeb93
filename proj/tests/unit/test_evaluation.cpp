#include "test_util.hpp"

#include "splatw/evaluation.hpp"
#include "splatw/synthetic.hpp"
#include "splatw/trainer.hpp"

#include <gtest/gtest.h>

using namespace splatw;

namespace {

/// One small trained model shared by the tests of this file.
struct Trained {
    SyntheticScene<float> scene;
    SceneModel<float> model;
};

const Trained& trained() {
    static const Trained t = [] {
        SyntheticConfig sc;
        sc.seed = 11;
        sc.n_gaussians = 300;
        sc.n_views = 8;
        sc.n_appearances = 2;
        sc.width = sc.height = 48;
        sc.n_test_views = 2;
        Trained out{generate_synthetic_scene<float>(sc), {}};
        TrainConfig c;
        c.iterations = 3000;
        c.seed = 3;
        c.densify_until = 0;  // fixed cloud keeps the fixture fast
        Trainer<float> tr(out.scene.bundle.images, out.scene.bundle.cloud, c);
        tr.run({});
        out.model = tr.model();
        return out;
    }();
    return t;
}

TEST(HalfProtocol, SplitColumns) {
    EXPECT_EQ(left_half_end(8), 4);
    EXPECT_EQ(left_half_end(7), 3);
    EXPECT_EQ(left_half_end(1), 0);
    std::mt19937_64 rng(1);
    const auto img = testutil::random_image<float>(rng, 7, 3);
    const auto l = crop_columns(img, 0, 3), r = crop_columns(img, 3, 7);
    EXPECT_EQ(l.width, 3);
    EXPECT_EQ(r.width, 4);
    EXPECT_EQ(r(0, 2, 1), img(3, 2, 1));
    EXPECT_THROW(crop_columns(img, 4, 4), std::invalid_argument);
}

TEST(HalfProtocol, ZeroIterationsReturnsTheMeanEmbedding) {
    const auto& t = trained();
    const auto& im = t.scene.bundle.images[0];
    const auto r = optimize_test_embedding<float>(t.model, im.rgb, im.camera, {0, 1e-2});
    EXPECT_EQ(r.embedding, t.model.appearance.mean_embedding());
    ASSERT_EQ(r.right_psnr.size(), 1u);
}

TEST(HalfProtocol, RightHalfPixelsNeverInfluenceTheEmbedding) {
    const auto& t = trained();
    const auto& im = t.scene.bundle.images[1];
    Image<float> altered = im.rgb;
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<float> u(0.f, 1.f);
    for (int y = 0; y < altered.height; ++y)
        for (int x = left_half_end(altered.width); x < altered.width; ++x)
            for (int c = 0; c < 3; ++c) altered(x, y, c) = u(rng);
    const TestEmbeddingConfig cfg{40, 1e-2};
    const auto a = optimize_test_embedding<float>(t.model, im.rgb, im.camera, cfg);
    const auto b = optimize_test_embedding<float>(t.model, altered, im.camera, cfg);
    EXPECT_EQ(a.embedding, b.embedding);
    EXPECT_EQ(a.left_psnr, b.left_psnr);
}

TEST(HalfProtocol, OddWidthImage) {
    const auto& t = trained();
    TrainImage<float> im = t.scene.bundle.images[0];
    im.rgb = crop_columns(im.rgb, 0, 47);
    im.camera.width = 47;
    const auto table = evaluate_half_protocol<float>(t.model, {im}, {5, 1e-2});
    ASSERT_EQ(table.rows.size(), 1u);
    EXPECT_TRUE(std::isfinite(table.rows[0].psnr_right));
}

TEST(HalfProtocol, RecoversATrainingAppearance) {
    // A training image treated as a test image: the embedding fitted on its
    // left half scores the right half about as well as the learned one.
    const auto& t = trained();
    for (std::size_t j = 0; j < t.scene.bundle.images.size(); ++j) {
        const auto& im = t.scene.bundle.images[j];
        const int split = left_half_end(im.rgb.width);
        const Image<float> learned = render_live<float>(t.model, t.model.appearance.embedding(j), im.camera);
        const double ref = psnr(crop_columns(learned, split, im.rgb.width), crop_columns(im.rgb, split, im.rgb.width));
        const auto r = optimize_test_embedding<float>(t.model, im.rgb, im.camera);
        EXPECT_GT(r.right_psnr.back(), ref - 0.5) << "image " << j;
        EXPECT_GE(r.left_psnr.back(), r.left_psnr.front() - 1e-9);
    }
}

TEST(HalfProtocol, TableIsDeterministicAndAveragesRows) {
    const auto& t = trained();
    const TestEmbeddingConfig cfg{30, 1e-2};
    const auto a = evaluate_half_protocol<float>(t.model, t.scene.test_images, cfg);
    const auto b = evaluate_half_protocol<float>(t.model, t.scene.test_images, cfg);
    ASSERT_EQ(a.rows.size(), t.scene.test_images.size());
    double mean = 0;
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        EXPECT_EQ(a.rows[i].psnr_right, b.rows[i].psnr_right);
        EXPECT_EQ(a.rows[i].ssim_right, b.rows[i].ssim_right);
        mean += a.rows[i].psnr_right / double(a.rows.size());
    }
    EXPECT_NEAR(a.mean.psnr_right, mean, 1e-12);
    EXPECT_THROW(evaluate_half_protocol<float>(t.model, {}, cfg), std::invalid_argument);
}

}  // namespace
