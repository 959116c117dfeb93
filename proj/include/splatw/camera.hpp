#pragma once

/// @file camera.hpp
/// @brief Pinhole camera with a world-to-camera rigid transform.
///
/// Camera axes follow the usual vision convention: +x right, +y down,
/// +z forward. Pixel (x, y) is sampled at its center (x + 0.5, y + 0.5).

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

namespace splatw {

template <typename T>
using Vec3 = Eigen::Matrix<T, 3, 1>;
template <typename T>
using Mat3 = Eigen::Matrix<T, 3, 3>;

template <typename T>
struct CameraView {
    Mat3<T> rotation = Mat3<T>::Identity();  // world -> camera
    Vec3<T> translation = Vec3<T>::Zero();
    T fx = 1, fy = 1, cx = 0, cy = 0;
    int width = 1, height = 1;

    Vec3<T> center() const { return -rotation.transpose() * translation; }

    Vec3<T> to_camera(const Vec3<T>& p) const { return rotation * p + translation; }

    /// World-space ray direction through the center of pixel (x, y), unnormalized.
    Vec3<T> pixel_ray(int x, int y) const {
        const Vec3<T> d((T(x) + T(0.5) - cx) / fx, (T(y) + T(0.5) - cy) / fy, T(1));
        return rotation.transpose() * d;
    }

    template <typename U>
    CameraView<U> cast() const {
        CameraView<U> c;
        c.rotation = rotation.template cast<U>();
        c.translation = translation.template cast<U>();
        c.fx = U(fx);
        c.fy = U(fy);
        c.cx = U(cx);
        c.cy = U(cy);
        c.width = width;
        c.height = height;
        return c;
    }

    /// Throws std::invalid_argument when an invariant is violated.
    void validate(double rot_tol = 1e-5) const {
        if (!(fx > 0) || !(fy > 0)) throw std::invalid_argument("camera: focal lengths must be positive");
        if (width <= 0 || height <= 0) throw std::invalid_argument("camera: size must be positive");
        if (!rotation.allFinite() || !translation.allFinite() || !std::isfinite(double(cx)) ||
            !std::isfinite(double(cy))) {
            throw std::invalid_argument("camera: non-finite parameters");
        }
        const double ortho = (rotation * rotation.transpose() - Mat3<T>::Identity())
                                 .template cast<double>()
                                 .cwiseAbs()
                                 .maxCoeff();
        const double det = double(rotation.determinant());
        if (ortho > rot_tol || std::abs(det - 1.0) > rot_tol) {
            throw std::invalid_argument("camera: rotation is not orthonormal with det +1 (err " +
                                        std::to_string(ortho) + ", det " + std::to_string(det) + ")");
        }
    }
};

/// Camera at `eye` looking at `target`. `up` is the world up direction; it
/// maps to camera -y so that up appears at the top of the image.
template <typename T>
CameraView<T> look_at(const Vec3<T>& eye, const Vec3<T>& target, const Vec3<T>& up, T fx, T fy,
                      int width, int height) {
    const Vec3<T> fwd = (target - eye).normalized();
    Vec3<T> right = fwd.cross(up);
    if (right.norm() < T(1e-9)) right = fwd.unitOrthogonal();
    right.normalize();
    const Vec3<T> down = fwd.cross(right);
    CameraView<T> cam;
    cam.rotation.row(0) = right.transpose();
    cam.rotation.row(1) = down.transpose();
    cam.rotation.row(2) = fwd.transpose();
    cam.translation = -cam.rotation * eye;
    cam.fx = fx;
    cam.fy = fy;
    cam.cx = T(width) / T(2);
    cam.cy = T(height) / T(2);
    cam.width = width;
    cam.height = height;
    return cam;
}

}  // namespace splatw
