#pragma once

/// @file snapshot.hpp
/// @brief Immutable published scene state for serving, with an LRU store of
/// per-embedding appearance caches, and the single-request render path.

#include "splatw/io/checkpoint.hpp"
#include "splatw/io/image_codec.hpp"
#include "splatw/pipeline.hpp"
#include "splatw/scene.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstring>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

namespace splatw::service {

inline constexpr int kProtocolVersion = 1;
inline constexpr std::size_t kDefaultCacheCapacity = 16;
inline constexpr int kInterpSteps = 256;

/// Bad request content; the message is returned to the client.
class RequestError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct IndexSpec {
    std::size_t index = 0;
};
struct InterpSpec {
    std::size_t a = 0, b = 0;
    double t = 0;  // snapped to 1/256
};
struct RawSpec {
    std::vector<float> embedding;
};
using AppearanceSpec = std::variant<IndexSpec, InterpSpec, RawSpec>;

/// Interpolation parameter snapped to the cache key grid.
inline double quantize_t(double t) { return std::round(t * kInterpSteps) / kInterpSteps; }

enum class Encoding { png, jpeg };

inline Encoding parse_encoding(const std::string& s) {
    if (s == "png") return Encoding::png;
    if (s == "jpeg" || s == "jpg") return Encoding::jpeg;
    throw RequestError("unknown encoding '" + s + "' (png|jpeg)");
}
inline const char* encoding_name(Encoding e) { return e == Encoding::png ? "png" : "jpeg"; }
inline const char* encoding_mime(Encoding e) { return e == Encoding::png ? "image/png" : "image/jpeg"; }

struct RenderRequest {
    CameraView<float> camera;
    AppearanceSpec appearance = IndexSpec{};
    Encoding encoding = Encoding::png;
    int jpeg_quality = 90;
};

/// Parses {"index": j} | {"a", "b", "t"} | {"embedding": [...]}.
inline AppearanceSpec appearance_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw RequestError("appearance must be an object");
    try {
        if (j.contains("index")) return IndexSpec{j.at("index").get<std::size_t>()};
        if (j.contains("a") || j.contains("b") || j.contains("t")) {
            const double t = j.at("t").get<double>();
            if (!(t >= 0.0 && t <= 1.0)) throw RequestError("interpolation t must lie in [0, 1]");
            return InterpSpec{j.at("a").get<std::size_t>(), j.at("b").get<std::size_t>(), quantize_t(t)};
        }
        if (j.contains("embedding")) return RawSpec{j.at("embedding").get<std::vector<float>>()};
    } catch (const nlohmann::json::exception& e) {
        throw RequestError(std::string("appearance: ") + e.what());
    }
    throw RequestError("appearance needs one of: index | a,b,t | embedding");
}

inline nlohmann::json appearance_to_json(const AppearanceSpec& s) {
    if (const auto* i = std::get_if<IndexSpec>(&s)) return {{"index", i->index}};
    if (const auto* p = std::get_if<InterpSpec>(&s)) return {{"a", p->a}, {"b", p->b}, {"t", p->t}};
    return {{"embedding", std::get<RawSpec>(s).embedding}};
}

/// Schema:
///   {"camera": {rotation[9] row-major world->camera, translation[3], fx, fy, cx, cy, width, height},
///    "appearance": {...}, "encoding": "png"|"jpeg" (default png), "jpeg_quality": 1..100 (default 90)}
inline RenderRequest request_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw RequestError("request must be a JSON object");
    RenderRequest r;
    if (!j.contains("camera")) throw RequestError("request is missing 'camera'");
    try {
        r.camera = io::camera_from_json<float>(j.at("camera"));
        r.camera.validate(1e-4);
    } catch (const std::invalid_argument& e) {
        throw RequestError(e.what());
    }
    if (r.camera.width > 4096 || r.camera.height > 4096) throw RequestError("camera: output larger than 4096");
    if (j.contains("appearance")) r.appearance = appearance_from_json(j.at("appearance"));
    if (j.contains("encoding")) {
        if (!j.at("encoding").is_string()) throw RequestError("encoding must be a string");
        r.encoding = parse_encoding(j.at("encoding").get<std::string>());
    }
    if (j.contains("jpeg_quality")) {
        if (!j.at("jpeg_quality").is_number_integer()) throw RequestError("jpeg_quality must be an integer");
        r.jpeg_quality = j.at("jpeg_quality").get<int>();
        if (r.jpeg_quality < 1 || r.jpeg_quality > 100) throw RequestError("jpeg_quality must be in 1..100");
    }
    return r;
}

/// Foreground SH table plus background coefficients for one embedding.
struct CacheEntry {
    CachedAppearance<float> appearance;
    std::optional<ShCoefficients<float>> background;
};

/// Published, read-only model state. The cache store is the only mutable
/// part and is internally synchronized; its entries are pure functions of
/// (model version, embedding).
class SceneSnapshot {
public:
    SceneSnapshot(SceneModel<float> model, std::vector<TrainImage<float>> images, std::string name,
                  std::size_t cache_capacity = kDefaultCacheCapacity)
        : model_(std::move(model)), images_(std::move(images)), name_(std::move(name)),
          capacity_(cache_capacity ? cache_capacity : 1) {
        if (images_.size() != model_.num_images()) {
            throw std::invalid_argument("snapshot: image count does not match embedding count");
        }
    }

    const SceneModel<float>& model() const { return model_; }
    const std::vector<TrainImage<float>>& images() const { return images_; }
    const std::string& name() const { return name_; }
    std::uint64_t version() const { return model_.appearance.version(); }
    std::size_t cache_capacity() const { return capacity_; }

    std::size_t cache_size() const {
        std::lock_guard lock(mu_);
        return lru_.size();
    }

    /// Embedding for a spec; RequestError for out-of-range indices or a wrong length.
    std::vector<float> resolve(const AppearanceSpec& spec) const {
        const std::size_t n = model_.num_images();
        auto check = [&](std::size_t j) {
            if (j >= n) throw RequestError("appearance index " + std::to_string(j) + " out of range (" +
                                           std::to_string(n) + " images)");
        };
        if (const auto* i = std::get_if<IndexSpec>(&spec)) {
            check(i->index);
            const auto e = model_.appearance.embedding(i->index);
            return {e.begin(), e.end()};
        }
        if (const auto* p = std::get_if<InterpSpec>(&spec)) {
            check(p->a);
            check(p->b);
            if (!(p->t >= 0.0 && p->t <= 1.0)) throw RequestError("interpolation t must lie in [0, 1]");
            const auto ea = model_.appearance.embedding(p->a), eb = model_.appearance.embedding(p->b);
            const float t = static_cast<float>(quantize_t(p->t));
            std::vector<float> e(ea.size());
            for (std::size_t k = 0; k < e.size(); ++k) e[k] = (1.0f - t) * ea[k] + t * eb[k];
            return e;
        }
        const auto& raw = std::get<RawSpec>(spec).embedding;
        if (static_cast<int>(raw.size()) != model_.appearance.embedding_dim()) {
            throw RequestError("raw embedding must have " + std::to_string(model_.appearance.embedding_dim()) +
                               " values, got " + std::to_string(raw.size()));
        }
        for (float v : raw)
            if (!std::isfinite(v)) throw RequestError("raw embedding contains non-finite values");
        return raw;
    }

    /// Cache lookup keyed on the exact embedding bits. Builds on a miss
    /// (outside the lock); `hit` reports which case occurred.
    std::shared_ptr<const CacheEntry> entry(const std::vector<float>& embedding, bool& hit) const {
        std::string key(reinterpret_cast<const char*>(embedding.data()), embedding.size() * sizeof(float));
        {
            std::lock_guard lock(mu_);
            if (auto it = index_.find(key); it != index_.end()) {
                lru_.splice(lru_.begin(), lru_, it->second);
                hit = true;
                return it->second->second;
            }
        }
        hit = false;
        auto e = std::make_shared<CacheEntry>();
        e->appearance = build_cache<float>(model_.appearance, model_.cloud, embedding);
        if (model_.use_background) e->background = model_.background.predict(embedding);
        std::lock_guard lock(mu_);
        if (auto it = index_.find(key); it != index_.end()) return it->second->second;  // lost a race; reuse
        lru_.emplace_front(key, e);
        index_[key] = lru_.begin();
        while (lru_.size() > capacity_) {
            index_.erase(lru_.back().first);
            lru_.pop_back();
        }
        return e;
    }

private:
    SceneModel<float> model_;
    std::vector<TrainImage<float>> images_;
    std::string name_;
    std::size_t capacity_;
    using Item = std::pair<std::string, std::shared_ptr<const CacheEntry>>;
    mutable std::mutex mu_;
    mutable std::list<Item> lru_;
    mutable std::unordered_map<std::string, std::list<Item>::iterator> index_;
};

/// Holder of the current snapshot: many readers, one publisher. Readers keep
/// the snapshot they grabbed alive for the whole request.
class SnapshotStore {
public:
    explicit SnapshotStore(std::shared_ptr<const SceneSnapshot> s = nullptr) : current_(std::move(s)) {}

    std::shared_ptr<const SceneSnapshot> current() const {
        std::lock_guard lock(mu_);
        return current_;
    }
    void publish(std::shared_ptr<const SceneSnapshot> s) {
        std::lock_guard lock(mu_);
        current_ = std::move(s);
    }

private:
    mutable std::mutex mu_;
    std::shared_ptr<const SceneSnapshot> current_;
};

inline std::shared_ptr<const SceneSnapshot> snapshot_from_checkpoint(const io::Checkpoint<float>& ck,
                                                                     std::size_t cache_capacity = kDefaultCacheCapacity) {
    return std::make_shared<const SceneSnapshot>(ck.model, ck.scene.images, ck.scene.name, cache_capacity);
}

struct RenderResult {
    std::vector<std::uint8_t> bytes;
    Encoding encoding = Encoding::png;
    Image<float> linear;  // pre-quantization frame
    bool cache_hit = false;
    double cache_millis = 0, raster_millis = 0, encode_millis = 0, total_millis = 0;
    std::uint64_t snapshot_version = 0;
};

/// Renders one request from exactly one snapshot: cache lookup (one MLP
/// batch per embedding on a miss, none on a hit), rasterize, encode.
inline RenderResult render_once(const SceneSnapshot& snap, const RenderRequest& req) {
    using clock = std::chrono::steady_clock;
    auto ms = [](clock::duration d) { return std::chrono::duration<double, std::milli>(d).count(); };
    const auto t0 = clock::now();
    RenderResult r;
    r.encoding = req.encoding;
    r.snapshot_version = snap.version();
    const std::vector<float> emb = snap.resolve(req.appearance);
    const auto entry = snap.entry(emb, r.cache_hit);
    const auto t1 = clock::now();
    r.linear = render_cached<float>(snap.model(), entry->appearance, entry->background, req.camera);
    const auto t2 = clock::now();
    const io::Pixels8 px = io::to_srgb8(r.linear);
    r.bytes = req.encoding == Encoding::png ? io::encode_png(px) : io::encode_jpeg(px, req.jpeg_quality);
    const auto t3 = clock::now();
    r.cache_millis = ms(t1 - t0);
    r.raster_millis = ms(t2 - t1);
    r.encode_millis = ms(t3 - t2);
    r.total_millis = ms(t3 - t0);
    return r;
}

/// Box-downscaled (in linear space) training image, PNG encoded, longest side <= max_side.
inline std::vector<std::uint8_t> thumbnail_png(const Image<float>& img, int max_side = 128) {
    const int f = std::max(1, (std::max(img.width, img.height) + max_side - 1) / max_side);
    const int w = std::max(1, img.width / f), h = std::max(1, img.height / f);
    Image<float> out(w, h, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                float s = 0;
                for (int dy = 0; dy < f; ++dy)
                    for (int dx = 0; dx < f; ++dx) s += img(x * f + dx, y * f + dy, c);
                out(x, y, c) = s / float(f * f);
            }
    return io::encode_png(io::to_srgb8(out));
}

/// Catalog document served at /api/scene.
inline nlohmann::json scene_info(const SceneSnapshot& snap) {
    const auto& m = snap.model();
    nlohmann::json j;
    j["v"] = kProtocolVersion;
    j["name"] = snap.name();
    j["version"] = snap.version();
    j["num_gaussians"] = m.cloud.size();
    j["num_images"] = m.num_images();
    j["sh_degree"] = m.appearance.sh_degree();
    j["background_sh_degree"] = m.use_background ? m.background.sh_degree() : -1;
    j["use_background"] = m.use_background;
    j["feature_dim"] = m.appearance.feature_dim();
    j["embedding_dim"] = m.appearance.embedding_dim();
    j["cache_capacity"] = snap.cache_capacity();
    j["interp_steps"] = kInterpSteps;
    nlohmann::json imgs = nlohmann::json::array();
    for (std::size_t k = 0; k < snap.images().size(); ++k) {
        const auto& im = snap.images()[k];
        imgs.push_back({{"index", k},
                        {"width", im.rgb.width},
                        {"height", im.rgb.height},
                        {"camera", io::camera_to_json(im.camera)},
                        {"thumbnail", "/api/thumb/" + std::to_string(k)}});
    }
    j["images"] = imgs;
    return j;
}

}  // namespace splatw::service
