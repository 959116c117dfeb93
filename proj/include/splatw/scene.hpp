#pragma once

/// @file scene.hpp
/// @brief Training images and the scene bundle (cloud + posed images).

#include "splatw/camera.hpp"
#include "splatw/gaussians.hpp"
#include "splatw/image.hpp"

#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace splatw {

template <typename T>
struct TrainImage {
    std::size_t index = 0;
    Image<T> rgb;  // linear [0,1], 3 channels
    CameraView<T> camera;
};

template <typename T>
struct SceneBundle {
    std::string name = "scene";
    std::string units = "scene units";
    GaussianCloud<T> cloud;
    std::vector<TrainImage<T>> images;

    std::size_t num_images() const { return images.size(); }

    /// Enforces every invariant; messages name the offending image index.
    void validate(int feature_dim = kFeatureDim) const {
        cloud.validate(feature_dim);
        const double rot_tol = std::is_same_v<T, double> ? 1e-9 : 1e-5;
        for (std::size_t j = 0; j < images.size(); ++j) {
            const auto& im = images[j];
            const std::string tag = "image " + std::to_string(j);
            if (im.index != j) throw std::invalid_argument(tag + ": index " + std::to_string(im.index) + " is not dense");
            try {
                im.camera.validate(rot_tol);
            } catch (const std::invalid_argument& e) {
                throw std::invalid_argument(tag + ": " + e.what());
            }
            if (im.rgb.width != im.camera.width || im.rgb.height != im.camera.height || im.rgb.channels != 3) {
                throw std::invalid_argument(tag + ": buffer " + std::to_string(im.rgb.width) + "x" +
                                            std::to_string(im.rgb.height) + " does not match camera " +
                                            std::to_string(im.camera.width) + "x" + std::to_string(im.camera.height));
            }
            if (!im.rgb.all_finite()) throw std::invalid_argument(tag + ": non-finite pixel");
        }
    }
};

/// Center and radius of the camera positions (radius scaled by 1.1), the
/// usual scene-extent heuristic for learning-rate and densification scales.
template <typename T>
std::pair<Vec3<T>, T> camera_extent(const std::vector<TrainImage<T>>& images) {
    if (images.empty()) return {Vec3<T>::Zero(), T(1)};
    Vec3<T> c = Vec3<T>::Zero();
    for (const auto& im : images) c += im.camera.center();
    c /= T(images.size());
    T r = 0;
    for (const auto& im : images) r = std::max(r, (im.camera.center() - c).norm());
    if (!(r > T(0))) r = T(1);
    return {c, r * T(1.1)};
}

}  // namespace splatw
