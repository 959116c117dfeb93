#pragma once

/// @file evaluation.hpp
/// @brief Held-out image evaluation: fit a fresh embedding on the left half
/// of a test image with every model parameter frozen, score the right half.

#include "splatw/adam.hpp"
#include "splatw/metrics.hpp"
#include "splatw/pipeline.hpp"
#include "splatw/scene.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace splatw {

/// Columns [x0, x1) of an image.
template <typename T>
Image<T> crop_columns(const Image<T>& img, int x0, int x1) {
    if (x0 < 0 || x1 > img.width || x0 >= x1) throw std::invalid_argument("crop_columns: bad range");
    Image<T> out(x1 - x0, img.height, img.channels);
    for (int y = 0; y < img.height; ++y)
        for (int x = x0; x < x1; ++x)
            for (int c = 0; c < img.channels; ++c) out(x - x0, y, c) = img(x, y, c);
    return out;
}

struct TestEmbeddingConfig {
    int iterations = 300;
    double lr = 1e-2;
};

template <typename T>
struct TestEmbeddingResult {
    std::vector<T> embedding;
    std::vector<double> left_psnr;   // entry 0 is the starting point
    std::vector<double> right_psnr;
};

/// Starts from the mean training embedding and runs Adam on the L1 loss of
/// the left-half pixels only.
template <typename T>
TestEmbeddingResult<T> optimize_test_embedding(const SceneModel<T>& model, const Image<T>& gt,
                                               const CameraView<T>& cam, const TestEmbeddingConfig& cfg = {}) {
    if (gt.width != cam.width || gt.height != cam.height || gt.channels != 3) {
        throw std::invalid_argument("optimize_test_embedding: image does not match camera");
    }
    const int split = left_half_end(gt.width);
    if (split < 1) throw std::invalid_argument("optimize_test_embedding: image too narrow to split");
    TestEmbeddingResult<T> res;
    res.embedding = model.appearance.mean_embedding();
    const Image<T> gt_left = crop_columns(gt, 0, split), gt_right = crop_columns(gt, split, gt.width);
    auto record = [&](const Image<T>& img) {
        res.left_psnr.push_back(psnr(crop_columns(img, 0, split), gt_left));
        res.right_psnr.push_back(psnr(crop_columns(img, split, gt.width), gt_right));
    };
    AdamState<T> adam(1, res.embedding.size());
    const AdamHyper hyper{cfg.lr, 0.9, 0.999, 1e-8};
    const double norm = 1.0 / (3.0 * split * gt.height);
    for (int it = 0; it < cfg.iterations; ++it) {
        const FrameForward<T> f = frame_forward<T>(model, res.embedding, cam);
        record(f.final);
        Image<T> grad(gt.width, gt.height, 3);
        for (int y = 0; y < gt.height; ++y)
            for (int x = 0; x < split; ++x)
                for (int c = 0; c < 3; ++c) {
                    const T d = f.final(x, y, c) - gt(x, y, c);
                    grad(x, y, c) = T(d > T(0) ? norm : (d < T(0) ? -norm : 0.0));
                }
        const FrameGradients<T> g = frame_backward<T>(model, f, grad, Image<T>{});
        adam.step(res.embedding, g.embedding, hyper);
    }
    record(render_live<T>(model, res.embedding, cam));
    return res;
}

struct EvalRow {
    std::size_t index = 0;
    double psnr_right = 0, ssim_right = 0;
    double psnr_right_mean_embedding = 0;
    double psnr_left = 0;
};

struct EvalTable {
    std::vector<EvalRow> rows;
    EvalRow mean;
};

/// Left-half protocol over a test set; the mean row averages every column.
template <typename T>
EvalTable evaluate_half_protocol(const SceneModel<T>& model, const std::vector<TrainImage<T>>& test,
                                 const TestEmbeddingConfig& cfg = {}) {
    if (test.empty()) throw std::invalid_argument("evaluate: empty test set");
    EvalTable table;
    for (const auto& im : test) {
        const auto r = optimize_test_embedding<T>(model, im.rgb, im.camera, cfg);
        const Image<T> out = render_live<T>(model, r.embedding, im.camera);
        const int split = left_half_end(im.rgb.width);
        EvalRow row;
        row.index = im.index;
        row.psnr_right = r.right_psnr.back();
        row.psnr_left = r.left_psnr.back();
        row.psnr_right_mean_embedding = r.right_psnr.front();
        row.ssim_right = ssim(crop_columns(out, split, out.width), crop_columns(im.rgb, split, im.rgb.width));
        table.rows.push_back(row);
    }
    const double n = double(table.rows.size());
    for (const auto& r : table.rows) {
        table.mean.psnr_right += r.psnr_right / n;
        table.mean.ssim_right += r.ssim_right / n;
        table.mean.psnr_right_mean_embedding += r.psnr_right_mean_embedding / n;
        table.mean.psnr_left += r.psnr_left / n;
    }
    return table;
}

}  // namespace splatw
