#pragma once

/// @file scene_io.hpp
/// @brief Scene directory format.
///
///   DIR/scene.json                metadata, camera list, format version
///   DIR/gaussians/<name>.tensor   means [N,3], quats [N,4], log_scales [N,3],
///                                 opacity_logits [N], features [N,F]
///   DIR/images/NNNN.png           8-bit sRGB, decoded to linear on load

#include "splatw/io/image_codec.hpp"
#include "splatw/io/tensor_file.hpp"
#include "splatw/scene.hpp"
#include "splatw/sh.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

namespace splatw::io {

inline constexpr int kSceneFormatVersion = 1;

class SceneLoadError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

template <typename T>
nlohmann::json camera_to_json(const CameraView<T>& cam) {
    nlohmann::json j;
    std::vector<double> r(9), t(3);
    for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) r[a * 3 + b] = double(cam.rotation(a, b));
        t[a] = double(cam.translation(a));
    }
    j["rotation"] = r;
    j["translation"] = t;
    j["fx"] = double(cam.fx);
    j["fy"] = double(cam.fy);
    j["cx"] = double(cam.cx);
    j["cy"] = double(cam.cy);
    j["width"] = cam.width;
    j["height"] = cam.height;
    return j;
}

/// Parses the camera schema; throws std::invalid_argument on missing or malformed fields.
template <typename T>
CameraView<T> camera_from_json(const nlohmann::json& j) {
    try {
        CameraView<T> cam;
        const auto r = j.at("rotation").get<std::vector<double>>();
        const auto t = j.at("translation").get<std::vector<double>>();
        if (r.size() != 9 || t.size() != 3) throw std::invalid_argument("camera: rotation needs 9 and translation 3 values");
        for (int a = 0; a < 3; ++a) {
            for (int b = 0; b < 3; ++b) cam.rotation(a, b) = T(r[a * 3 + b]);
            cam.translation(a) = T(t[a]);
        }
        cam.fx = T(j.at("fx").get<double>());
        cam.fy = T(j.at("fy").get<double>());
        cam.cx = T(j.at("cx").get<double>());
        cam.cy = T(j.at("cy").get<double>());
        cam.width = j.at("width").get<int>();
        cam.height = j.at("height").get<int>();
        return cam;
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("camera: ") + e.what());
    }
}

template <typename T>
Tensor matrix_tensor(const RowMatrix<T>& m) {
    return Tensor::from(m.data(), {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())});
}

template <typename T>
RowMatrix<T> tensor_matrix(const Tensor& t, std::uint64_t rows, std::uint64_t cols, const std::string& what) {
    t.expect_shape({rows, cols}, what);
    const auto v = t.as<T>();
    RowMatrix<T> m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    if (!v.empty()) std::copy(v.begin(), v.end(), m.data());
    return m;
}

template <typename T>
void save_cloud(const std::filesystem::path& dir, const GaussianCloud<T>& cloud) {
    std::filesystem::create_directories(dir);
    write_tensor(dir / "means.tensor", matrix_tensor<T>(cloud.means));
    write_tensor(dir / "quats.tensor", matrix_tensor<T>(cloud.quats));
    write_tensor(dir / "log_scales.tensor", matrix_tensor<T>(cloud.log_scales));
    write_tensor(dir / "opacity_logits.tensor",
                 Tensor::from(cloud.opacity_logits.data(), {static_cast<std::uint64_t>(cloud.size())}));
    write_tensor(dir / "features.tensor", matrix_tensor<T>(cloud.features));
}

template <typename T>
GaussianCloud<T> load_cloud(const std::filesystem::path& dir, std::uint64_t n, std::uint64_t feature_dim) {
    GaussianCloud<T> c(0, static_cast<int>(feature_dim));
    c.means = tensor_matrix<T>(read_tensor(dir / "means.tensor"), n, 3, "means");
    c.quats = tensor_matrix<T>(read_tensor(dir / "quats.tensor"), n, 4, "quats");
    c.log_scales = tensor_matrix<T>(read_tensor(dir / "log_scales.tensor"), n, 3, "log_scales");
    const Tensor op = read_tensor(dir / "opacity_logits.tensor");
    op.expect_shape({n}, "opacity_logits");
    const auto ov = op.as<T>();
    c.opacity_logits.resize(static_cast<Eigen::Index>(n));
    std::copy(ov.begin(), ov.end(), c.opacity_logits.data());
    const Tensor ft = read_tensor(dir / "features.tensor");
    if (ft.shape.size() == 2 && ft.shape[0] == n && ft.shape[1] != feature_dim) {
        throw FormatError("features: dimension " + std::to_string(ft.shape[1]) + " does not match expected " +
                          std::to_string(feature_dim));
    }
    c.features = tensor_matrix<T>(ft, n, feature_dim, "features");
    return c;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw FormatError("cannot open " + path.string() + " for writing");
    os << j.dump(2) << "\n";
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("missing metadata file " + path.string());
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

template <typename T>
void save_scene(const std::filesystem::path& dir, const SceneBundle<T>& bundle) {
    std::filesystem::create_directories(dir / "images");
    nlohmann::json meta;
    meta["format"] = "splatw-scene";
    meta["format_version"] = kSceneFormatVersion;
    meta["name"] = bundle.name;
    meta["units"] = bundle.units;
    meta["num_gaussians"] = bundle.cloud.size();
    meta["num_images"] = bundle.images.size();
    meta["feature_dim"] = bundle.cloud.feature_dim();
    meta["sh_degree"] = kMaxShDegree;
    meta["background_sh_degree"] = 2;
    meta["dtype"] = std::is_same_v<T, float> ? "float32" : "float64";
    nlohmann::json imgs = nlohmann::json::array();
    for (const auto& im : bundle.images) {
        char name[32];
        std::snprintf(name, sizeof(name), "images/%04zu.png", im.index);
        write_png(dir / name, im.rgb);
        imgs.push_back({{"index", im.index}, {"file", name}, {"camera", camera_to_json(im.camera)}});
    }
    meta["images"] = imgs;
    save_cloud(dir / "gaussians", bundle.cloud);
    write_json(dir / "scene.json", meta);
}

/// Loads and validates a scene directory. Every failure is a SceneLoadError.
template <typename T>
SceneBundle<T> load_scene(const std::filesystem::path& dir, int expected_feature_dim = kFeatureDim) {
    try {
        const nlohmann::json meta = read_json(dir / "scene.json");
        if (meta.value("format_version", -1) != kSceneFormatVersion) {
            throw FormatError("unsupported scene format version " + meta.value("format_version", nlohmann::json()).dump());
        }
        SceneBundle<T> b;
        b.name = meta.value("name", "scene");
        b.units = meta.value("units", "scene units");
        const auto n = meta.at("num_gaussians").get<std::uint64_t>();
        const auto fd = meta.at("feature_dim").get<std::uint64_t>();
        if (fd != static_cast<std::uint64_t>(expected_feature_dim)) {
            throw FormatError("feature dimension " + std::to_string(fd) + " does not match expected " +
                              std::to_string(expected_feature_dim));
        }
        b.cloud = load_cloud<T>(dir / "gaussians", n, fd);
        const auto& imgs = meta.at("images");
        if (imgs.size() != meta.at("num_images").get<std::size_t>()) throw FormatError("image count mismatch");
        for (std::size_t j = 0; j < imgs.size(); ++j) {
            const auto& e = imgs[j];
            TrainImage<T> im;
            im.index = e.at("index").get<std::size_t>();
            im.camera = camera_from_json<T>(e.at("camera"));
            try {
                im.rgb = read_png<T>(dir / e.at("file").get<std::string>());
            } catch (const FormatError& err) {
                throw FormatError("image " + std::to_string(j) + ": " + err.what());
            }
            b.images.push_back(std::move(im));
        }
        b.validate(expected_feature_dim);
        return b;
    } catch (const SceneLoadError&) {
        throw;
    } catch (const std::exception& e) {
        throw SceneLoadError("load_scene(" + dir.string() + "): " + e.what());
    }
}

}  // namespace splatw::io
