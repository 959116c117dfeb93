#pragma once

/// @file checkpoint.hpp
/// @brief Checkpoint directory: a complete scene directory (trained cloud,
/// training images, cameras) plus the appearance and background models.
///
///   DIR/scene.json, gaussians/, images/   scene format (scene_io.hpp)
///   DIR/checkpoint.json                   model metadata and format version
///   DIR/appearance/embeddings.tensor      [N_img, 48]
///   DIR/appearance/layer<k>_{weight,bias}.tensor
///   DIR/background/layer<k>_{weight,bias}.tensor
///   DIR/trainer/...                       optional optimizer state for resuming

#include "splatw/io/scene_io.hpp"
#include "splatw/pipeline.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace splatw::io {

inline constexpr int kCheckpointFormatVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

template <typename T>
void save_mlp(const std::filesystem::path& dir, const Mlp<T>& mlp) {
    std::filesystem::create_directories(dir);
    for (std::size_t l = 0; l < mlp.depth(); ++l) {
        const auto& layer = mlp.layers()[l];
        write_tensor(dir / ("layer" + std::to_string(l) + "_weight.tensor"), matrix_tensor<T>(layer.weight));
        write_tensor(dir / ("layer" + std::to_string(l) + "_bias.tensor"),
                     Tensor::from(layer.bias.data(), {static_cast<std::uint64_t>(layer.bias.size())}));
    }
}

/// Loads weights into an already shaped network; shapes must match exactly.
template <typename T>
void load_mlp(const std::filesystem::path& dir, Mlp<T>& mlp) {
    for (std::size_t l = 0; l < mlp.depth(); ++l) {
        auto& layer = mlp.layers()[l];
        const std::string stem = "layer" + std::to_string(l);
        layer.weight = tensor_matrix<T>(read_tensor(dir / (stem + "_weight.tensor")),
                                        static_cast<std::uint64_t>(layer.weight.rows()),
                                        static_cast<std::uint64_t>(layer.weight.cols()), stem + " weight");
        const Tensor b = read_tensor(dir / (stem + "_bias.tensor"));
        b.expect_shape({static_cast<std::uint64_t>(layer.bias.size())}, stem + " bias");
        const auto v = b.as<T>();
        std::copy(v.begin(), v.end(), layer.bias.data());
    }
}

/// What a checkpoint holds besides optional trainer state.
template <typename T>
struct Checkpoint {
    SceneBundle<T> scene;  // scene.cloud is unused; the trained cloud lives in model
    SceneModel<T> model;
    std::uint64_t iteration = 0;
};

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const SceneModel<T>& model,
                     const std::vector<TrainImage<T>>& images, const std::string& name, std::uint64_t iteration) {
    SceneBundle<T> bundle;
    bundle.name = name;
    bundle.cloud = model.cloud;
    bundle.images = images;
    save_scene(dir, bundle);

    const auto& ac = model.appearance.config();
    const auto& bc = model.background.config();
    nlohmann::json meta;
    meta["format"] = "splatw-checkpoint";
    meta["format_version"] = kCheckpointFormatVersion;
    meta["dtype"] = std::is_same_v<T, float> ? "float32" : "float64";
    meta["iteration"] = iteration;
    meta["model_version"] = model.appearance.version();
    meta["use_background"] = model.use_background;
    meta["num_images"] = model.appearance.num_images();
    meta["feature_dim"] = ac.feature_dim;
    meta["embedding_dim"] = ac.embedding_dim;
    meta["appearance"] = {{"sh_degree", ac.sh_degree}, {"hidden_width", ac.hidden_width}, {"layers", ac.layers},
                          {"init_range", ac.init_range},
                          {"embedding_init_range", ac.embedding_init_range}};
    meta["background"] = {{"sh_degree", bc.sh_degree}, {"hidden_width", bc.hidden_width}, {"layers", bc.layers}};
    std::filesystem::create_directories(dir / "appearance");
    write_tensor(dir / "appearance" / "embeddings.tensor", matrix_tensor<T>(model.appearance.embeddings));
    save_mlp(dir / "appearance", model.appearance.mlp);
    save_mlp(dir / "background", model.background.mlp);
    write_json(dir / "checkpoint.json", meta);
}

/// Restores a checkpoint; any inconsistency is a CheckpointError.
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& dir, int expected_feature_dim = kFeatureDim) {
    try {
        const nlohmann::json meta = read_json(dir / "checkpoint.json");
        if (meta.value("format", "") != "splatw-checkpoint") throw FormatError("not a checkpoint directory");
        const int version = meta.value("format_version", -1);
        if (version != kCheckpointFormatVersion) {
            throw FormatError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(kCheckpointFormatVersion) + ")");
        }
        const int fd = meta.at("feature_dim").get<int>();
        if (fd != expected_feature_dim) {
            throw FormatError("feature dimension " + std::to_string(fd) + " does not match expected " +
                              std::to_string(expected_feature_dim));
        }
        Checkpoint<T> ck;
        ck.iteration = meta.at("iteration").get<std::uint64_t>();
        ck.scene = load_scene<T>(dir, expected_feature_dim);

        AppearanceConfig ac;
        ac.feature_dim = fd;
        ac.embedding_dim = meta.at("embedding_dim").get<int>();
        ac.sh_degree = meta.at("appearance").at("sh_degree").get<int>();
        ac.hidden_width = meta.at("appearance").at("hidden_width").get<int>();
        ac.layers = meta.at("appearance").at("layers").get<int>();
        ac.init_range = meta.at("appearance").value("init_range", ac.init_range);
        ac.embedding_init_range = meta.at("appearance").value("embedding_init_range", ac.embedding_init_range);
        BackgroundConfig bc;
        bc.embedding_dim = ac.embedding_dim;
        bc.sh_degree = meta.at("background").at("sh_degree").get<int>();
        bc.hidden_width = meta.at("background").at("hidden_width").get<int>();
        bc.layers = meta.at("background").at("layers").get<int>();

        const auto n_img = meta.at("num_images").get<std::size_t>();
        if (n_img != ck.scene.images.size()) throw FormatError("embedding count does not match image count");
        ck.model.cloud = std::move(ck.scene.cloud);
        ck.scene.cloud = GaussianCloud<T>(0, fd);
        ck.model.appearance = AppearanceModel<T>(n_img, ac);
        ck.model.appearance.embeddings =
            tensor_matrix<T>(read_tensor(dir / "appearance" / "embeddings.tensor"), n_img,
                             static_cast<std::uint64_t>(ac.embedding_dim), "embeddings");
        load_mlp(dir / "appearance", ck.model.appearance.mlp);
        ck.model.appearance.set_version(meta.at("model_version").get<std::uint64_t>());
        ck.model.background = BackgroundModel<T>(bc);
        load_mlp(dir / "background", ck.model.background.mlp);
        ck.model.use_background = meta.at("use_background").get<bool>();
        return ck;
    } catch (const CheckpointError&) {
        throw;
    } catch (const std::exception& e) {
        throw CheckpointError("load_checkpoint(" + dir.string() + "): " + e.what());
    }
}

}  // namespace splatw::io
