#pragma once

/// @file trainer.hpp
/// @brief Training loop: one image per step in shuffled epochs, masked L1 +
/// D-SSIM + alpha loss, Adam per parameter group, densification and
/// pruning, and checkpoint/resume of the complete optimizer state.

#include "splatw/adam.hpp"
#include "splatw/io/checkpoint.hpp"
#include "splatw/loss.hpp"
#include "splatw/pipeline.hpp"
#include "splatw/robust_mask.hpp"
#include "splatw/scene.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace splatw {

struct LearningRates {
    double means = 1.6e-4;        // times scene extent, decays exponentially to means_final
    double means_final = 1.6e-6;
    double scales = 5e-3;
    double rotations = 1e-3;
    double opacities = 5e-2;
    double features = 2.5e-3;
    double embeddings = 1e-3;
    double appearance_mlp = 1e-3;
    double background_mlp = 1e-3;
};

struct TrainConfig {
    int iterations = 65000;
    std::uint64_t seed = 0;
    double lambda_ssim = 0.2;
    double lambda_alpha = 0.01;
    double bg_threshold = 0.08;
    int alpha_warmup = 1500;
    int mask_warmup = 500;
    bool use_background = true;
    bool use_mask = true;
    MaskConfig mask;
    LearningRates lr;
    double gaussian_eps = 1e-15;
    double network_eps = 1e-8;    // MLPs and embeddings
    int densify_interval = 100;
    int densify_from = 500;
    double densify_until = 0.5;   // fraction of iterations
    double densify_grad_threshold = 2e-4;
    double prune_opacity = 0.005;
    std::size_t max_gaussians = 200000;
    double percent_dense = 0.01;  // clone when max scale <= percent_dense * extent, else split
    AppearanceConfig appearance;
    BackgroundConfig background;

    void validate() const {
        if (iterations < 0) throw std::invalid_argument("train config: iterations must be >= 0");
        if (densify_interval < 1) throw std::invalid_argument("train config: densify interval must be >= 1");
        if (!(lambda_ssim >= 0 && lambda_ssim <= 1)) throw std::invalid_argument("train config: lambda_ssim in [0,1]");
        if (!(lambda_alpha >= 0)) throw std::invalid_argument("train config: lambda_alpha must be >= 0");
        if (max_gaussians < 1) throw std::invalid_argument("train config: max_gaussians must be >= 1");
        const double rates[] = {lr.means, lr.means_final, lr.scales, lr.rotations, lr.opacities,
                                lr.features, lr.embeddings, lr.appearance_mlp, lr.background_mlp};
        for (double r : rates)
            if (!(r >= 0)) throw std::invalid_argument("train config: learning rates must be >= 0");
        mask.validate();
    }
};

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"iterations", c.iterations},
            {"seed", c.seed},
            {"lambda_ssim", c.lambda_ssim},
            {"lambda_alpha", c.lambda_alpha},
            {"bg_threshold", c.bg_threshold},
            {"alpha_warmup", c.alpha_warmup},
            {"mask_warmup", c.mask_warmup},
            {"use_background", c.use_background},
            {"use_mask", c.use_mask},
            {"per_min", c.mask.per_min},
            {"per_max", c.mask.per_max},
            {"lr",
             {{"means", c.lr.means},
              {"means_final", c.lr.means_final},
              {"scales", c.lr.scales},
              {"rotations", c.lr.rotations},
              {"opacities", c.lr.opacities},
              {"features", c.lr.features},
              {"embeddings", c.lr.embeddings},
              {"appearance_mlp", c.lr.appearance_mlp},
              {"background_mlp", c.lr.background_mlp}}},
            {"densify_interval", c.densify_interval},
            {"densify_from", c.densify_from},
            {"densify_until", c.densify_until},
            {"densify_grad_threshold", c.densify_grad_threshold},
            {"prune_opacity", c.prune_opacity},
            {"max_gaussians", c.max_gaussians},
            {"percent_dense", c.percent_dense}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.iterations = j.at("iterations").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.lambda_ssim = j.at("lambda_ssim").get<double>();
    c.lambda_alpha = j.at("lambda_alpha").get<double>();
    c.bg_threshold = j.at("bg_threshold").get<double>();
    c.alpha_warmup = j.at("alpha_warmup").get<int>();
    c.mask_warmup = j.at("mask_warmup").get<int>();
    c.use_background = j.at("use_background").get<bool>();
    c.use_mask = j.at("use_mask").get<bool>();
    c.mask.per_min = j.at("per_min").get<double>();
    c.mask.per_max = j.at("per_max").get<double>();
    const auto& lr = j.at("lr");
    c.lr.means = lr.at("means").get<double>();
    c.lr.means_final = lr.at("means_final").get<double>();
    c.lr.scales = lr.at("scales").get<double>();
    c.lr.rotations = lr.at("rotations").get<double>();
    c.lr.opacities = lr.at("opacities").get<double>();
    c.lr.features = lr.at("features").get<double>();
    c.lr.embeddings = lr.at("embeddings").get<double>();
    c.lr.appearance_mlp = lr.at("appearance_mlp").get<double>();
    c.lr.background_mlp = lr.at("background_mlp").get<double>();
    c.densify_interval = j.at("densify_interval").get<int>();
    c.densify_from = j.at("densify_from").get<int>();
    c.densify_until = j.at("densify_until").get<double>();
    c.densify_grad_threshold = j.at("densify_grad_threshold").get<double>();
    c.prune_opacity = j.at("prune_opacity").get<double>();
    c.max_gaussians = j.at("max_gaussians").get<std::size_t>();
    c.percent_dense = j.at("percent_dense").get<double>();
    return c;
}

/// One line of the training log.
struct StepReport {
    std::uint64_t iteration = 0;  // 1-based index of the step just taken
    std::size_t image = 0;
    double loss = 0;
    double l1 = 0;                // masked
    double l1_premask = 0;
    double dssim = 0;
    double alpha_loss = 0;
    double k = 0;                 // mask fraction used for this image
    double outlier_fraction = 0;  // fraction of pixels with W = 0
    std::size_t bg_selected = 0;  // pixels under the alpha loss
    std::size_t n_gaussians = 0;
    double psnr = 0;              // composite vs target, unmasked

    nlohmann::json to_json() const {
        return {{"iteration", iteration}, {"image", image},       {"loss", loss},
                {"l1", l1},               {"l1_premask", l1_premask}, {"dssim", dssim},
                {"alpha_loss", alpha_loss}, {"k", k},              {"outlier_fraction", outlier_fraction},
                {"bg_selected", bg_selected}, {"n_gaussians", n_gaussians}, {"psnr", psnr}};
    }
    std::string to_line() const { return to_json().dump(); }
};

class NonFiniteLossError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DensifyReport {
    std::size_t pruned = 0, cloned = 0, split = 0;
    bool capped = false;
};

namespace detail {

template <typename T>
struct MlpAdam {
    std::vector<AdamState<T>> weight, bias;

    void reset(const Mlp<T>& mlp) {
        weight.clear();
        bias.clear();
        for (const auto& l : mlp.layers()) {
            weight.emplace_back(1, static_cast<std::size_t>(l.weight.size()));
            bias.emplace_back(1, static_cast<std::size_t>(l.bias.size()));
        }
    }

    void step(Mlp<T>& mlp, const Mlp<T>& grad, const AdamHyper& h) {
        for (std::size_t l = 0; l < mlp.depth(); ++l) {
            auto& p = mlp.layers()[l];
            const auto& g = grad.layers()[l];
            weight[l].step(std::span<T>(p.weight.data(), p.weight.size()),
                           std::span<const T>(g.weight.data(), g.weight.size()), h);
            bias[l].step(std::span<T>(p.bias.data(), p.bias.size()), std::span<const T>(g.bias.data(), g.bias.size()), h);
        }
    }
};

template <typename Derived>
auto flat(Eigen::PlainObjectBase<Derived>& m) {
    return std::span<typename Derived::Scalar>(m.data(), static_cast<std::size_t>(m.size()));
}
template <typename Derived>
auto flat(const Eigen::PlainObjectBase<Derived>& m) {
    return std::span<const typename Derived::Scalar>(m.data(), static_cast<std::size_t>(m.size()));
}

}  // namespace detail

/// Training objective of one view with the masks held fixed:
/// (1 - lambda_ssim) L1_W + lambda_ssim DSSIM_W + lambda_alpha * sum of alpha over
/// `bg_selected` (no alpha term when null). Gradients are with respect to the
/// composite image and the accumulated alpha.
template <typename T>
struct CompositeLoss {
    double value = 0, l1 = 0, dssim = 0, alpha = 0;
    Image<T> grad_final;
    Image<T> grad_alpha;  // empty without the alpha term
};

template <typename T>
CompositeLoss<T> composite_loss(const Image<T>& final, const Image<T>& alpha, const Image<T>& gt,
                                const Image<std::uint8_t>& w, const Image<std::uint8_t>* bg_selected,
                                double lambda_ssim, double lambda_alpha) {
    CompositeLoss<T> out;
    const LossValue<T> l1 = masked_l1<T>(final, gt, w);
    out.l1 = l1.value;
    const T ws = T(lambda_ssim);
    out.grad_final = l1.grad;
    for (auto& g : out.grad_final.data) g *= (T(1) - ws);
    if (lambda_ssim > 0) {
        const LossValue<T> ds = masked_dssim<T>(final, gt, w);
        out.dssim = ds.value;
        for (std::size_t i = 0; i < out.grad_final.data.size(); ++i) out.grad_final.data[i] += ws * ds.grad.data[i];
    }
    if (bg_selected) {
        const AlphaLoss<T> al = alpha_loss<T>(alpha, *bg_selected, T(lambda_alpha));
        out.alpha = double(al.loss);
        out.grad_alpha = al.grad;
    }
    out.value = (1 - lambda_ssim) * out.l1 + lambda_ssim * out.dssim + out.alpha;
    return out;
}

template <typename T>
class Trainer {
public:
    using ReportSink = std::function<void(const StepReport&)>;

    /// Fresh run. Appearance features of `initial` are re-initialized from the seed.
    Trainer(std::vector<TrainImage<T>> images, GaussianCloud<T> initial, const TrainConfig& cfg)
        : images_(std::move(images)), cfg_(cfg), rng_(cfg.seed) {
        cfg_.validate();
        if (images_.empty()) throw std::invalid_argument("trainer: no training images");
        for (std::size_t j = 0; j < images_.size(); ++j)
            if (images_[j].index != j) throw std::invalid_argument("trainer: image indices must be dense");
        extent_ = double(camera_extent(images_).second);
        model_.cloud = std::move(initial);
        model_.appearance = AppearanceModel<T>(images_.size(), cfg_.appearance);
        BackgroundConfig bc = cfg_.background;
        bc.embedding_dim = cfg_.appearance.embedding_dim;
        model_.background = BackgroundModel<T>(bc);
        model_.use_background = cfg_.use_background;
        model_.appearance.init(rng_);
        model_.appearance.init_features(model_.cloud, rng_);
        model_.background.init(rng_);
        model_.cloud.validate(cfg_.appearance.feature_dim);
        mask_ = MaskState(images_.size(), cfg_.mask);
        reset_optimizers();
        reset_accumulators();
    }

    const TrainConfig& config() const { return cfg_; }
    TrainConfig& mutable_config() { return cfg_; }
    const SceneModel<T>& model() const { return model_; }
    SceneModel<T>& mutable_model() { return model_; }
    const std::vector<TrainImage<T>>& images() const { return images_; }
    const MaskState& mask_state() const { return mask_; }
    std::uint64_t iteration() const { return iteration_; }
    double extent() const { return extent_; }

    /// Runs until `cfg.iterations` steps have been taken in total.
    void run(const ReportSink& sink = {}) {
        while (iteration_ < static_cast<std::uint64_t>(cfg_.iterations)) {
            const StepReport r = step();
            if (sink) sink(r);
        }
    }

    /// One optimization step on the next image of the shuffled epoch.
    StepReport step() {
        if (order_pos_ >= order_.size()) {
            order_.resize(images_.size());
            std::iota(order_.begin(), order_.end(), std::size_t{0});
            std::shuffle(order_.begin(), order_.end(), rng_);
            order_pos_ = 0;
        }
        return step_on(order_[order_pos_++]);
    }

    /// One optimization step on image j.
    StepReport step_on(std::size_t j) {
        const TrainImage<T>& im = images_.at(j);
        const std::vector<T> emb(model_.appearance.embedding(j).begin(), model_.appearance.embedding(j).end());
        const FrameForward<T> f = frame_forward<T>(model_, emb, im.camera);

        StepReport rep;
        rep.iteration = iteration_ + 1;
        rep.image = j;
        rep.l1_premask = mean_l1(f.final, im.rgb);
        rep.psnr = psnr(f.final, im.rgb);
        if (std::isfinite(rep.l1_premask)) mask_.update_stats(j, rep.l1_premask);

        const RobustMask<T> m = mask_for(j, f.final);
        rep.k = m.k;
        rep.outlier_fraction = m.outlier_fraction();

        std::optional<BackgroundResidualMask<T>> rm;
        if (alpha_loss_active()) {
            rm = residual_mask<T>(im.rgb, f.background, T(cfg_.bg_threshold));
            rep.bg_selected = rm->selected_count;
        }
        const CompositeLoss<T> loss = composite_loss<T>(f.final, f.raster.alpha, im.rgb, m.weights,
                                                         rm ? &rm->selected : nullptr, cfg_.lambda_ssim,
                                                         cfg_.lambda_alpha);
        rep.l1 = loss.l1;
        rep.dssim = loss.dssim;
        rep.alpha_loss = loss.alpha;
        rep.loss = loss.value;
        if (!std::isfinite(rep.loss)) throw NonFiniteLossError(diagnostic_dump(rep, f));

        const FrameGradients<T> g = frame_backward<T>(model_, f, loss.grad_final, loss.grad_alpha);
        apply_gradients(j, g);

        ++iteration_;
        rep.n_gaussians = model_.cloud.size();
        const auto until = static_cast<std::uint64_t>(cfg_.densify_until * cfg_.iterations);
        if (iteration_ < until) {
            for (std::size_t i = 0; i < g.visible.size(); ++i) {
                if (!g.visible[i]) continue;
                grad_accum_[i] += double(g.mean2d_ndc[i]);
                grad_count_[i] += 1;
            }
            if (iteration_ >= static_cast<std::uint64_t>(cfg_.densify_from) &&
                iteration_ % static_cast<std::uint64_t>(cfg_.densify_interval) == 0) {
                densify_and_prune();
                rep.n_gaussians = model_.cloud.size();
            }
        }
        return rep;
    }

    /// The robust mask W image j would get for a given composite render.
    RobustMask<T> mask_for(std::size_t j, const Image<T>& rendered) const {
        RobustMask<T> m;
        const TrainImage<T>& im = images_.at(j);
        const bool active = cfg_.use_mask && iteration_ >= static_cast<std::uint64_t>(cfg_.mask_warmup) &&
                            mask_.stats(j).initialized;
        if (!active) {
            m.weights = Image<std::uint8_t>(im.rgb.width, im.rgb.height, 1, 1);
            m.raw = m.weights;
            m.k = 0;
            return m;
        }
        return build_mask<T>(mean_abs_residual<T>(rendered, im.rgb), mask_.mask_fraction(j), cfg_.mask);
    }

    /// Mask for image j under the current parameters (renders the image).
    RobustMask<T> current_mask(std::size_t j) const {
        return mask_for(j, render_image(j));
    }

    /// Composite render of training view j with its own embedding.
    Image<T> render_image(std::size_t j) const {
        return render_live<T>(model_, model_.appearance.embedding(j), images_.at(j).camera);
    }

    /// Clones or splits Gaussians with a large mean screen-space gradient,
    /// prunes transparent ones, resets the accumulators.
    DensifyReport densify_and_prune() {
        DensifyReport rep;
        GaussianCloud<T>& c = model_.cloud;
        const std::size_t n = c.size();
        std::vector<bool> keep(n, true);
        for (std::size_t i = 0; i < n; ++i) {
            if (double(c.opacity(i)) < cfg_.prune_opacity) {
                keep[i] = false;
                ++rep.pruned;
            }
        }
        struct Candidate {
            double grad;
            std::size_t index;
        };
        std::vector<Candidate> cand;
        for (std::size_t i = 0; i < n; ++i) {
            if (!keep[i] || grad_count_[i] == 0) continue;
            const double avg = grad_accum_[i] / double(grad_count_[i]);
            if (avg >= cfg_.densify_grad_threshold) cand.push_back({avg, i});
        }
        // Highest gradients first, so a cap keeps the most urgent growth.
        std::stable_sort(cand.begin(), cand.end(), [](const Candidate& a, const Candidate& b) { return a.grad > b.grad; });
        std::size_t count = n - rep.pruned;
        std::vector<std::size_t> clones, splits;
        for (const auto& cd : cand) {
            if (count + 1 > cfg_.max_gaussians) {
                rep.capped = true;
                break;
            }
            const double max_scale = std::exp(double(c.log_scales.row(static_cast<Eigen::Index>(cd.index)).maxCoeff()));
            if (max_scale <= cfg_.percent_dense * extent_) clones.push_back(cd.index);
            else splits.push_back(cd.index);
            ++count;
        }
        std::sort(clones.begin(), clones.end());
        std::sort(splits.begin(), splits.end());
        if (rep.capped) {
            std::cerr << "warning: densification capped at " << cfg_.max_gaussians << " Gaussians\n";
        }

        // New rows: one copy per clone, two children per split (parent removed).
        GaussianCloud<T> added(clones.size() + 2 * splits.size(), c.feature_dim());
        std::size_t r = 0;
        auto copy_into = [&](std::size_t src, std::size_t dst) {
            const auto s = static_cast<Eigen::Index>(src), d = static_cast<Eigen::Index>(dst);
            added.means.row(d) = c.means.row(s);
            added.quats.row(d) = c.quats.row(s);
            added.log_scales.row(d) = c.log_scales.row(s);
            added.opacity_logits(d) = c.opacity_logits(s);
            added.features.row(d) = c.features.row(s);
        };
        for (std::size_t i : clones) copy_into(i, r++);
        std::normal_distribution<double> n01(0.0, 1.0);
        const T shrink = T(std::log(1.6));
        for (std::size_t i : splits) {
            const auto s = static_cast<Eigen::Index>(i);
            Eigen::Matrix<T, 4, 1> q = c.quats.row(s).transpose();
            const Mat3<T> rot = quat_to_rotation<T>(q / q.norm());
            const Vec3<T> scale = c.log_scales.row(s).transpose().array().exp().matrix();
            for (int child = 0; child < 2; ++child) {
                copy_into(i, r);
                const Vec3<T> z(T(n01(rng_)), T(n01(rng_)), T(n01(rng_)));
                const Vec3<T> offset = rot * scale.cwiseProduct(z);
                added.means.row(static_cast<Eigen::Index>(r)) += offset.transpose();
                added.log_scales.row(static_cast<Eigen::Index>(r)).array() -= shrink;
                ++r;
            }
            keep[i] = false;
        }
        rep.cloned = clones.size();
        rep.split = splits.size();

        c.keep_rows(keep);
        const std::size_t base = c.append_rows(added.size());
        for (std::size_t k = 0; k < added.size(); ++k) {
            const auto d = static_cast<Eigen::Index>(base + k), s = static_cast<Eigen::Index>(k);
            c.means.row(d) = added.means.row(s);
            c.quats.row(d) = added.quats.row(s);
            c.log_scales.row(d) = added.log_scales.row(s);
            c.opacity_logits(d) = added.opacity_logits(s);
            c.features.row(d) = added.features.row(s);
        }
        for (AdamState<T>* a : gaussian_optimizers()) a->remap_rows(keep, added.size());
        model_.appearance.bump_version();
        reset_accumulators();
        return rep;
    }

    /// Writes a checkpoint; with `with_state` the optimizer state is included
    /// so that `resume` continues bit-identically.
    void save(const std::filesystem::path& dir, bool with_state = true) const {
        io::save_checkpoint<T>(dir, model_, images_, "trained", iteration_);
        nlohmann::json j;
        j["config"] = to_json(cfg_);
        if (!with_state) {
            io::write_json(dir / "train_config.json", j);
            return;
        }
        const auto sd = dir / "trainer";
        std::filesystem::create_directories(sd);
        std::ostringstream rs;
        rs << rng_;
        j["rng"] = rs.str();
        j["iteration"] = iteration_;
        j["extent"] = extent_;
        j["order"] = order_;
        j["order_pos"] = order_pos_;
        nlohmann::json stats = nlohmann::json::array();
        for (const auto& s : mask_.all_stats())
            stats.push_back({{"min", s.l1_min}, {"max", s.l1_max}, {"cur", s.l1_current}, {"init", s.initialized}});
        j["mask_stats"] = stats;
        io::write_json(sd / "state.json", j);
        io::write_tensor(sd / "grad_accum.tensor", io::Tensor::from(grad_accum_));
        io::write_tensor(sd / "grad_count.tensor", io::Tensor::from(grad_count_));
        auto save_adam = [&](const std::string& name, const AdamState<T>& a) {
            io::write_tensor(sd / (name + "_m.tensor"), io::Tensor::from(a.first_moment()));
            io::write_tensor(sd / (name + "_v.tensor"), io::Tensor::from(a.second_moment()));
            io::write_tensor(sd / (name + "_t.tensor"), io::Tensor::from(a.steps()));
        };
        for_each_optimizer([&](const std::string& name, const AdamState<T>& a) { save_adam(name, a); });
    }

    /// Restores a run written by `save(dir, true)`.
    static Trainer resume(const std::filesystem::path& dir) {
        io::Checkpoint<T> ck = io::load_checkpoint<T>(dir);
        const auto sd = dir / "trainer";
        const nlohmann::json j = io::read_json(sd / "state.json");
        TrainConfig cfg = train_config_from_json(j.at("config"));
        Trainer t(std::move(ck), cfg);
        std::istringstream rs(j.at("rng").get<std::string>());
        rs >> t.rng_;
        t.iteration_ = j.at("iteration").get<std::uint64_t>();
        t.extent_ = j.at("extent").get<double>();
        t.order_ = j.at("order").get<std::vector<std::size_t>>();
        t.order_pos_ = j.at("order_pos").get<std::size_t>();
        auto& stats = t.mask_.all_stats();
        const auto& js = j.at("mask_stats");
        if (js.size() != stats.size()) throw io::CheckpointError("resume: mask statistics count mismatch");
        for (std::size_t k = 0; k < stats.size(); ++k) {
            stats[k].l1_min = js[k].at("min").get<double>();
            stats[k].l1_max = js[k].at("max").get<double>();
            stats[k].l1_current = js[k].at("cur").get<double>();
            stats[k].initialized = js[k].at("init").get<bool>();
        }
        t.grad_accum_ = io::read_tensor(sd / "grad_accum.tensor").as<double>();
        t.grad_count_ = io::read_tensor(sd / "grad_count.tensor").as<std::uint64_t>();
        if (t.grad_accum_.size() != t.model_.cloud.size() || t.grad_count_.size() != t.model_.cloud.size()) {
            throw io::CheckpointError("resume: accumulator size does not match the cloud");
        }
        t.for_each_optimizer([&](const std::string& name, AdamState<T>& a) {
            auto m = io::read_tensor(sd / (name + "_m.tensor")).as<T>();
            auto v = io::read_tensor(sd / (name + "_v.tensor")).as<T>();
            auto s = io::read_tensor(sd / (name + "_t.tensor")).as<std::uint64_t>();
            if (m.size() != a.first_moment().size() || v.size() != a.second_moment().size() ||
                s.size() != a.steps().size()) {
                throw io::CheckpointError("resume: optimizer state '" + name + "' has the wrong shape");
            }
            a.first_moment() = std::move(m);
            a.second_moment() = std::move(v);
            a.steps() = std::move(s);
        });
        return t;
    }

private:
    Trainer(io::Checkpoint<T>&& ck, const TrainConfig& cfg)
        : images_(std::move(ck.scene.images)), cfg_(cfg), rng_(cfg.seed) {
        model_ = std::move(ck.model);
        cfg_.appearance = model_.appearance.config();
        cfg_.background = model_.background.config();
        cfg_.use_background = model_.use_background;
        extent_ = double(camera_extent(images_).second);
        mask_ = MaskState(images_.size(), cfg_.mask);
        reset_optimizers();
        reset_accumulators();
    }

    bool alpha_loss_active() const {
        return cfg_.use_background && cfg_.lambda_alpha > 0 &&
               iteration_ >= static_cast<std::uint64_t>(cfg_.alpha_warmup);
    }

    double means_lr() const {
        const double t = cfg_.iterations > 0 ? std::clamp(double(iteration_) / cfg_.iterations, 0.0, 1.0) : 0.0;
        if (cfg_.lr.means <= 0 || cfg_.lr.means_final <= 0) return cfg_.lr.means * extent_;
        return std::exp(std::log(cfg_.lr.means) * (1 - t) + std::log(cfg_.lr.means_final) * t) * extent_;
    }

    void apply_gradients(std::size_t j, const FrameGradients<T>& g) {
        using detail::flat;
        auto& c = model_.cloud;
        const double ge = cfg_.gaussian_eps, ne = cfg_.network_eps;
        adam_means_.step(flat(c.means), flat(g.cloud.means), {means_lr(), 0.9, 0.999, ge});
        adam_quats_.step(flat(c.quats), flat(g.cloud.quats), {cfg_.lr.rotations, 0.9, 0.999, ge});
        adam_scales_.step(flat(c.log_scales), flat(g.cloud.log_scales), {cfg_.lr.scales, 0.9, 0.999, ge});
        adam_opacity_.step(flat(c.opacity_logits), flat(g.cloud.opacity_logits), {cfg_.lr.opacities, 0.9, 0.999, ge});
        adam_features_.step(flat(c.features), flat(g.cloud.features), {cfg_.lr.features, 0.9, 0.999, ge});
        adam_app_mlp_.step(model_.appearance.mlp, g.appearance_mlp, {cfg_.lr.appearance_mlp, 0.9, 0.999, ne});
        if (model_.use_background) {
            adam_bg_mlp_.step(model_.background.mlp, g.background_mlp, {cfg_.lr.background_mlp, 0.9, 0.999, ne});
        }
        std::vector<T> ge_full(static_cast<std::size_t>(model_.appearance.embeddings.size()), T(0));
        std::copy(g.embedding.begin(), g.embedding.end(), ge_full.begin() + j * g.embedding.size());
        adam_embeddings_.step_row(flat(model_.appearance.embeddings), ge_full, j, {cfg_.lr.embeddings, 0.9, 0.999, ne});
        model_.appearance.bump_version();
    }

    void reset_optimizers() {
        const std::size_t n = model_.cloud.size();
        adam_means_.reset(n, 3);
        adam_quats_.reset(n, 4);
        adam_scales_.reset(n, 3);
        adam_opacity_.reset(n, 1);
        adam_features_.reset(n, static_cast<std::size_t>(model_.cloud.feature_dim()));
        adam_embeddings_.reset(model_.appearance.num_images(), static_cast<std::size_t>(model_.appearance.embedding_dim()));
        adam_app_mlp_.reset(model_.appearance.mlp);
        adam_bg_mlp_.reset(model_.background.mlp);
    }

    void reset_accumulators() {
        grad_accum_.assign(model_.cloud.size(), 0.0);
        grad_count_.assign(model_.cloud.size(), 0);
    }

    std::vector<AdamState<T>*> gaussian_optimizers() {
        return {&adam_means_, &adam_quats_, &adam_scales_, &adam_opacity_, &adam_features_};
    }

    template <typename F>
    void for_each_optimizer(F&& f) {
        f("means", adam_means_);
        f("quats", adam_quats_);
        f("log_scales", adam_scales_);
        f("opacity", adam_opacity_);
        f("features", adam_features_);
        f("embeddings", adam_embeddings_);
        for (std::size_t l = 0; l < adam_app_mlp_.weight.size(); ++l) {
            f("app_mlp" + std::to_string(l) + "_w", adam_app_mlp_.weight[l]);
            f("app_mlp" + std::to_string(l) + "_b", adam_app_mlp_.bias[l]);
        }
        for (std::size_t l = 0; l < adam_bg_mlp_.weight.size(); ++l) {
            f("bg_mlp" + std::to_string(l) + "_w", adam_bg_mlp_.weight[l]);
            f("bg_mlp" + std::to_string(l) + "_b", adam_bg_mlp_.bias[l]);
        }
    }
    template <typename F>
    void for_each_optimizer(F&& f) const {
        const_cast<Trainer*>(this)->for_each_optimizer(
            [&](const std::string& name, AdamState<T>& a) { f(name, static_cast<const AdamState<T>&>(a)); });
    }

    std::string diagnostic_dump(const StepReport& rep, const FrameForward<T>& f) const {
        std::ostringstream os;
        os << "non-finite loss at iteration " << rep.iteration << " on image " << rep.image << ": "
           << rep.to_line() << "\n";
        auto count_bad = [](const std::vector<T>& v) {
            return std::count_if(v.begin(), v.end(), [](T x) { return !std::isfinite(x); });
        };
        os << "  non-finite: rgb " << count_bad(f.raster.rgb.data) << ", alpha " << count_bad(f.raster.alpha.data)
           << ", background " << count_bad(f.background.data) << ", final " << count_bad(f.final.data) << "\n";
        os << "  cloud finite: " << (model_.cloud.all_finite() ? "yes" : "no")
           << ", appearance table finite: " << (f.appearance.table.allFinite() ? "yes" : "no") << "\n";
        return os.str();
    }

    std::vector<TrainImage<T>> images_;
    TrainConfig cfg_;
    std::mt19937_64 rng_;
    SceneModel<T> model_;
    MaskState mask_;
    double extent_ = 1;
    std::uint64_t iteration_ = 0;
    std::vector<std::size_t> order_;
    std::size_t order_pos_ = 0;
    std::vector<double> grad_accum_;
    std::vector<std::uint64_t> grad_count_;
    AdamState<T> adam_means_, adam_quats_, adam_scales_, adam_opacity_, adam_features_, adam_embeddings_;
    detail::MlpAdam<T> adam_app_mlp_, adam_bg_mlp_;
};

}  // namespace splatw
