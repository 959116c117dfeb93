#pragma once

/// @file synthetic.hpp
/// @brief Seeded synthetic scenes: a Gaussian object in front of a smooth
/// sky, photographed under per-image affine color transforms, optionally
/// with opaque occluder rectangles pasted into some images.
///
/// Images are rendered by the module rasterizer and snapped to the 8-bit
/// sRGB grid, so writing them as PNG and reading them back is lossless.

#include "splatw/background.hpp"
#include "splatw/rasterizer.hpp"
#include "splatw/scene.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

namespace splatw {

/// c' = clamp(gain * c + bias) per channel.
struct AffineAppearance {
    std::array<double, 3> gain{1, 1, 1};
    std::array<double, 3> bias{0, 0, 0};

    double apply(int c, double v) const { return std::clamp(gain[c] * v + bias[c], 0.02, 0.98); }
};

struct SyntheticConfig {
    std::uint64_t seed = 1;
    int n_gaussians = 1000;
    int n_views = 24;
    int n_appearances = 4;
    double occluder_frac = 0.0;         // occluder area as a fraction of the image
    double occluded_image_frac = 0.3;   // fraction of images that get an occluder
    int width = 64, height = 64;
    double focal_factor = 1.2;          // fx = fy = focal_factor * width
    double camera_radius = 4.0;
    double object_radius = 0.9;
    bool sky = true;                    // false: black background
    int n_far_points = 0;               // distant initial points (sky points of an SfM cloud)
    double far_radius = 18.0;
    int n_test_views = 0;               // held-out views with a novel appearance
    double init_position_noise = 0.02;
    double init_opacity = 0.1;

    void validate() const {
        if (n_views < 1) throw std::invalid_argument("synthetic: need at least one view");
        if (n_views > 64) throw std::invalid_argument("synthetic: at most 64 views");
        if (n_gaussians < 0 || n_gaussians > 5000) throw std::invalid_argument("synthetic: 0..5000 Gaussians");
        if (n_appearances < 1) throw std::invalid_argument("synthetic: need at least one appearance");
        if (width < 8 || height < 8) throw std::invalid_argument("synthetic: images must be at least 8x8");
        if (!(occluder_frac >= 0 && occluder_frac < 0.5)) throw std::invalid_argument("synthetic: occluder_frac in [0,0.5)");
        if (!(occluded_image_frac >= 0 && occluded_image_frac <= 1)) {
            throw std::invalid_argument("synthetic: occluded_image_frac in [0,1]");
        }
        if (n_far_points < 0 || n_test_views < 0) throw std::invalid_argument("synthetic: negative count");
    }
};

template <typename T>
struct SyntheticScene {
    SceneBundle<T> bundle;                 // initial cloud + training images
    GaussianCloud<T> gt_cloud;
    RowMatrix<T> gt_colors;                // N x 3, before the appearance transform
    std::vector<AffineAppearance> appearances;
    std::vector<ShCoefficients<T>> skies;  // per appearance, degree 2
    std::vector<int> appearance_of_image;
    std::vector<Image<T>> clean_images;    // training images without occluders
    std::vector<Image<std::uint8_t>> occluder_masks;  // 1 where an occluder was pasted
    std::vector<bool> occluded;
    std::vector<TrainImage<T>> test_images;
    AffineAppearance test_appearance;
    ShCoefficients<T> test_sky;
    double scene_radius = 1.0;             // bounding radius of the ground-truth object
    bool sky = true;

    /// Ground truth of a camera under an appearance, before 8-bit snapping.
    Image<T> render_ground_truth(const CameraView<T>& cam, const AffineAppearance& app,
                                 const ShCoefficients<T>& sky_coeffs) const {
        RowMatrix<T> colors(gt_colors.rows(), 3);
        for (Eigen::Index i = 0; i < colors.rows(); ++i)
            for (int c = 0; c < 3; ++c) colors(i, c) = T(app.apply(c, double(gt_colors(i, c))));
        const RenderOutput<T> r = render<T>(gt_cloud, colors, cam);
        const Image<T> bg = sky ? background_image<T>(sky_coeffs, cam) : Image<T>(cam.width, cam.height, 3);
        return composite<T>(r.rgb, r.alpha, bg);
    }

    Image<T> render_ground_truth(const CameraView<T>& cam, int appearance) const {
        return render_ground_truth(cam, appearances.at(appearance), skies.at(appearance));
    }
};

namespace detail {

template <typename Rng>
AffineAppearance random_affine(Rng& rng) {
    std::uniform_real_distribution<double> g(0.75, 1.15), b(-0.08, 0.08);
    AffineAppearance a;
    for (int c = 0; c < 3; ++c) {
        a.gain[c] = g(rng);
        a.bias[c] = b(rng);
    }
    return a;
}

/// Mean absolute color difference two transforms produce on mid-gray.
inline double affine_distance(const AffineAppearance& a, const AffineAppearance& b) {
    double d = 0;
    for (int c = 0; c < 3; ++c) d += std::abs(a.apply(c, 0.5) - b.apply(c, 0.5));
    return d / 3.0;
}

template <typename T, typename Rng>
Eigen::Matrix<T, 4, 1> random_quaternion(Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::Matrix<double, 4, 1> q;
    do {
        for (int k = 0; k < 4; ++k) q(k) = n(rng);
    } while (q.norm() < 1e-6);
    return (q / q.norm()).template cast<T>();
}

}  // namespace detail

/// Generates a scene; identical configs give bit-identical output.
template <typename T>
SyntheticScene<T> generate_synthetic_scene(const SyntheticConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> n01(0.0, 1.0);
    SyntheticScene<T> s;
    s.sky = cfg.sky;

    // Ground-truth object: Gaussians in a ball, colors smooth in position.
    // The palette is warm and the sky light blue, so under every appearance
    // transform object colors stay more than 0.08 (channel-mean) from the sky.
    constexpr double kObjectMid[3] = {0.5, 0.45, 0.3}, kObjectAmp[3] = {0.3, 0.25, 0.2};
    const int n = cfg.n_gaussians;
    s.gt_cloud = GaussianCloud<T>(static_cast<std::size_t>(n));
    s.gt_colors.resize(n, 3);
    std::array<Vec3<double>, 3> freq;
    std::array<double, 3> phase{};
    for (int c = 0; c < 3; ++c) {
        freq[c] = Vec3<double>(n01(rng), n01(rng), n01(rng)) * 2.0;
        phase[c] = u01(rng) * 2 * std::numbers::pi;
    }
    double radius = 0;
    for (int i = 0; i < n; ++i) {
        Vec3<double> p;
        do {
            p = Vec3<double>(u01(rng), u01(rng), u01(rng)) * 2.0 - Vec3<double>::Ones();
        } while (p.norm() > 1.0);
        p *= cfg.object_radius;
        s.gt_cloud.means.row(i) = p.cast<T>().transpose();
        s.gt_cloud.quats.row(i) = detail::random_quaternion<T>(rng).transpose();
        for (int k = 0; k < 3; ++k) s.gt_cloud.log_scales(i, k) = T(std::log(0.04 + 0.05 * u01(rng)));
        s.gt_cloud.opacity_logits(i) = T(1.5 + 1.5 * u01(rng));
        for (int c = 0; c < 3; ++c)
            s.gt_colors(i, c) = T(kObjectMid[c] + kObjectAmp[c] * std::sin(freq[c].dot(p) + phase[c]));
        radius = std::max(radius, p.norm() + 3.0 * std::exp(double(s.gt_cloud.log_scales.row(i).maxCoeff())));
    }
    s.scene_radius = n > 0 ? radius : cfg.object_radius;

    // Appearance conditions, kept mutually distinguishable.
    for (int a = 0; a < cfg.n_appearances; ++a) {
        AffineAppearance cand = detail::random_affine(rng);
        for (int attempt = 0; attempt < 200; ++attempt) {
            bool ok = true;
            for (const auto& o : s.appearances) ok = ok && detail::affine_distance(cand, o) >= 0.05;
            if (ok) break;
            cand = detail::random_affine(rng);
        }
        s.appearances.push_back(cand);
    }
    // Sky: a blue gradient in sigmoid-SH form, shifted per appearance.
    ShCoefficients<T> base_sky(2);
    const std::array<double, 3> sky_dc{0.2, 1.1, 3.2};
    for (int c = 0; c < 3; ++c) {
        base_sky.at(c, 0) = T(sky_dc[c] / sh_const::C0);
        base_sky.at(c, 1) = T(-0.8 - 0.2 * u01(rng));  // Y_1^-1 ~ -y: brighter towards world up
        base_sky.at(c, 3) = T(0.3 * (u01(rng) - 0.5));
        base_sky.at(c, 4 + static_cast<int>(u01(rng) * 5)) = T(0.3 * (u01(rng) - 0.5));
    }
    auto sky_for = [&](const AffineAppearance& app) {
        ShCoefficients<T> sk = base_sky;
        for (int c = 0; c < 3; ++c) {
            const double shift = std::log(app.gain[c]) * 2.0 + app.bias[c] * 4.0;
            sk.at(c, 0) += T(shift / sh_const::C0);
        }
        return sk;
    };
    for (const auto& app : s.appearances) s.skies.push_back(sky_for(app));

    // Cameras on a ring around the object, alternating elevation.
    const double f = cfg.focal_factor * cfg.width;
    auto make_camera = [&](double azimuth, double elevation, double r) {
        const Vec3<T> eye(T(r * std::cos(elevation) * std::sin(azimuth)), T(r * std::sin(elevation)),
                          T(r * std::cos(elevation) * std::cos(azimuth)));
        return look_at<T>(eye, Vec3<T>::Zero(), Vec3<T>(0, 1, 0), T(f), T(f), cfg.width, cfg.height);
    };
    const double deg = std::numbers::pi / 180.0;
    std::vector<CameraView<T>> cams;
    for (int v = 0; v < cfg.n_views; ++v) {
        const double az = 2 * std::numbers::pi * (v + 0.2 * u01(rng)) / cfg.n_views;
        const double el = ((v % 3) - 1) * 20.0 * deg + 5.0 * deg * (u01(rng) - 0.5);
        const double r = cfg.camera_radius * (0.95 + 0.1 * u01(rng));
        cams.push_back(make_camera(az, el, r));
    }

    // Stratified around the ring: each run of n_appearances consecutive views
    // holds every condition once, in random order, so every condition is seen
    // from all sides.
    for (int v0 = 0; v0 < cfg.n_views; v0 += cfg.n_appearances) {
        std::vector<int> block(cfg.n_appearances);
        std::iota(block.begin(), block.end(), 0);
        std::shuffle(block.begin(), block.end(), rng);
        for (int k = 0; k < cfg.n_appearances && v0 + k < cfg.n_views; ++k) s.appearance_of_image.push_back(block[k]);
    }

    // Which images get an occluder.
    s.occluded.assign(cfg.n_views, false);
    if (cfg.occluder_frac > 0) {
        const int count = static_cast<int>(std::lround(cfg.occluded_image_frac * cfg.n_views));
        std::vector<int> idx(cfg.n_views);
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        for (int k = 0; k < count; ++k) s.occluded[idx[k]] = true;
    }

    const int upper_end = static_cast<int>(std::floor(0.4 * cfg.height)) + 1;  // first row below the band
    for (int v = 0; v < cfg.n_views; ++v) {
        TrainImage<T> im;
        im.index = static_cast<std::size_t>(v);
        im.camera = cams[v];
        Image<T> clean = s.render_ground_truth(cams[v], s.appearance_of_image[v]);
        quantize_to_srgb8(clean);
        im.rgb = clean;
        Image<std::uint8_t> mask(cfg.width, cfg.height, 1);
        if (s.occluded[v]) {
            // Rectangle of the requested area strictly below the upper band.
            const double area = cfg.occluder_frac * cfg.width * cfg.height;
            const int avail_h = cfg.height - upper_end;
            int rw = 0, rh = 0;
            for (int attempt = 0; attempt < 1000; ++attempt) {
                const double aspect = 0.6 + 1.0 * u01(rng);
                rh = std::clamp(static_cast<int>(std::lround(std::sqrt(area / aspect))), 1, avail_h);
                rw = std::clamp(static_cast<int>(std::lround(area / rh)), 1, cfg.width);
                if (std::abs(rw * rh - area) <= 0.01 * cfg.width * cfg.height) break;
            }
            const int x0 = static_cast<int>(u01(rng) * (cfg.width - rw + 1));
            const int y0 = upper_end + static_cast<int>(u01(rng) * (avail_h - rh + 1));
            std::array<T, 3> col;
            for (int c = 0; c < 3; ++c) col[c] = T(0.05 + 0.9 * u01(rng));
            for (int y = y0; y < y0 + rh; ++y)
                for (int x = x0; x < x0 + rw; ++x) {
                    mask(x, y) = 1;
                    for (int c = 0; c < 3; ++c) im.rgb(x, y, c) = col[c];
                }
            quantize_to_srgb8(im.rgb);
        }
        s.clean_images.push_back(std::move(clean));
        s.occluder_masks.push_back(std::move(mask));
        s.bundle.images.push_back(std::move(im));
    }

    // Held-out views under a novel transform between two training conditions.
    {
        const int a = static_cast<int>(u01(rng) * cfg.n_appearances);
        const int b = cfg.n_appearances > 1 ? (a + 1 + static_cast<int>(u01(rng) * (cfg.n_appearances - 1))) %
                                                  cfg.n_appearances
                                            : a;
        const AffineAppearance &pa = s.appearances[a], &pb = s.appearances[b];
        for (int c = 0; c < 3; ++c) {
            s.test_appearance.gain[c] = 0.7 * pa.gain[c] + 0.3 * pb.gain[c];
            s.test_appearance.bias[c] = 0.7 * pa.bias[c] + 0.3 * pb.bias[c];
        }
        s.test_sky = sky_for(s.test_appearance);
    }
    for (int t = 0; t < cfg.n_test_views; ++t) {
        const double az = 2 * std::numbers::pi * (t + 0.5) / std::max(cfg.n_test_views, 1) + 0.1;
        const double el = 10.0 * deg * (u01(rng) - 0.5);
        TrainImage<T> im;
        im.index = static_cast<std::size_t>(t);
        im.camera = make_camera(az, el, cfg.camera_radius);
        im.rgb = s.render_ground_truth(im.camera, s.test_appearance, s.test_sky);
        quantize_to_srgb8(im.rgb);
        s.test_images.push_back(std::move(im));
    }

    // Initial cloud: perturbed ground-truth positions plus optional far points.
    GaussianCloud<T>& init = s.bundle.cloud;
    init = GaussianCloud<T>(static_cast<std::size_t>(n + cfg.n_far_points));
    const double init_scale = std::log(0.06);
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < 3; ++k) {
            init.means(i, k) = s.gt_cloud.means(i, k) + T(cfg.init_position_noise * n01(rng));
            init.log_scales(i, k) = T(init_scale);
        }
    }
    const double far_scale = std::log(0.12 * cfg.far_radius);
    for (int i = n; i < n + cfg.n_far_points; ++i) {
        Vec3<double> d(n01(rng), n01(rng), n01(rng));
        d.normalize();
        init.means.row(i) = (d * cfg.far_radius).cast<T>().transpose();
        for (int k = 0; k < 3; ++k) init.log_scales(i, k) = T(far_scale);
    }
    const T logit = T(std::log(cfg.init_opacity / (1.0 - cfg.init_opacity)));
    init.opacity_logits.setConstant(logit);
    s.bundle.name = "synthetic-" + std::to_string(cfg.seed);
    s.bundle.units = "scene units (object radius " + std::to_string(cfg.object_radius) + ")";
    return s;
}

}  // namespace splatw
