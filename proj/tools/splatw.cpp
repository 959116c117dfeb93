/// splatw: scene generation, training, evaluation, rendering and serving.

#include "splatw/evaluation.hpp"
#include "splatw/io/checkpoint.hpp"
#include "splatw/service/server.hpp"
#include "splatw/synthetic.hpp"
#include "splatw/trainer.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace splatw;

namespace {

/// Writes the synthetic bundle plus side data: held-out views in test/,
/// occluder masks in occluders/, and a truth.json describing appearances.
int cmd_scene_gen(const SyntheticConfig& cfg, const fs::path& out) {
    const SyntheticScene<float> s = generate_synthetic_scene<float>(cfg);
    io::save_scene(out, s.bundle);
    nlohmann::json truth;
    truth["seed"] = cfg.seed;
    truth["scene_radius"] = s.scene_radius;
    truth["appearance_of_image"] = s.appearance_of_image;
    nlohmann::json apps = nlohmann::json::array();
    for (const auto& a : s.appearances) apps.push_back({{"gain", a.gain}, {"bias", a.bias}});
    truth["appearances"] = apps;
    truth["occluded"] = s.occluded;
    io::write_json(out / "truth.json", truth);
    for (std::size_t j = 0; j < s.occluded.size(); ++j) {
        if (!s.occluded[j]) continue;
        char name[32];
        std::snprintf(name, sizeof name, "%04zu.png", j);
        fs::create_directories(out / "occluders");
        io::write_mask_png(out / "occluders" / name, s.occluder_masks[j]);
    }
    if (!s.test_images.empty()) {
        SceneBundle<float> test;
        test.name = s.bundle.name + "-test";
        test.cloud = GaussianCloud<float>(0, kFeatureDim);
        test.images = s.test_images;
        io::save_scene(out / "test", test);
    }
    std::cout << "wrote " << out << ": " << s.bundle.cloud.size() << " Gaussians, " << s.bundle.images.size()
              << " images, " << s.test_images.size() << " held-out\n";
    return 0;
}

int cmd_scene_validate(const fs::path& dir) {
    const SceneBundle<float> b = io::load_scene<float>(dir);
    std::cout << "ok: " << b.name << ", " << b.cloud.size() << " Gaussians, " << b.images.size() << " images\n";
    return 0;
}

struct TrainArgs {
    fs::path scene, out, resume, dump_masks;
    int iters = 30000;
    std::uint64_t seed = 0;
    double per_min = -1, per_max = -1, lambda_alpha = -1, lambda_ssim = -1;
    bool no_bg = false, no_mask = false, quiet = false;
    int report_every = 1, checkpoint_every = 0, dump_every = 1000;
};

int cmd_train(const TrainArgs& a) {
    auto apply = [&](TrainConfig& c) {
        c.iterations = a.iters;
        if (a.per_min >= 0) c.mask.per_min = a.per_min;
        if (a.per_max >= 0) c.mask.per_max = a.per_max;
        if (a.lambda_alpha >= 0) c.lambda_alpha = a.lambda_alpha;
        if (a.lambda_ssim >= 0) c.lambda_ssim = a.lambda_ssim;
        if (a.no_mask) c.use_mask = false;
    };
    std::optional<Trainer<float>> trainer;
    if (!a.resume.empty()) {
        trainer.emplace(Trainer<float>::resume(a.resume));
        apply(trainer->mutable_config());
        trainer->mutable_config().validate();
    } else {
        const SceneBundle<float> b = io::load_scene<float>(a.scene);
        TrainConfig cfg;
        cfg.seed = a.seed;
        cfg.use_background = !a.no_bg;
        apply(cfg);
        trainer.emplace(b.images, b.cloud, cfg);
    }
    auto& t = *trainer;
    std::cerr << "training " << t.images().size() << " images, " << t.model().cloud.size() << " Gaussians, to iteration "
              << t.config().iterations << "\n";
    t.run([&](const StepReport& r) {
        if (!a.quiet && (r.iteration % std::uint64_t(a.report_every) == 0)) std::cout << r.to_line() << "\n";
        if (!a.dump_masks.empty() && r.iteration % std::uint64_t(a.dump_every) == 0) {
            const fs::path d = a.dump_masks / std::to_string(r.iteration);
            fs::create_directories(d);
            for (std::size_t j = 0; j < t.images().size(); ++j) {
                const RobustMask<float> m = t.current_mask(j);
                char name[32];
                std::snprintf(name, sizeof name, "%04zu.png", j);
                io::write_mask_png(d / name, m.weights);
            }
        }
        if (a.checkpoint_every > 0 && r.iteration % std::uint64_t(a.checkpoint_every) == 0) t.save(a.out, true);
    });
    t.save(a.out, true);
    std::cerr << "saved " << a.out << " at iteration " << t.iteration() << " (" << t.model().cloud.size()
              << " Gaussians)\n";
    return 0;
}

void print_table(const EvalTable& table, const std::string& title) {
    std::printf("%s\n%6s %10s %10s %12s %10s\n", title.c_str(), "image", "psnr_R", "ssim_R", "psnr_R_mean", "psnr_L");
    for (const auto& r : table.rows)
        std::printf("%6zu %10.3f %10.4f %12.3f %10.3f\n", r.index, r.psnr_right, r.ssim_right,
                    r.psnr_right_mean_embedding, r.psnr_left);
    std::printf("%6s %10.3f %10.4f %12.3f %10.3f\n", "mean", table.mean.psnr_right, table.mean.ssim_right,
                table.mean.psnr_right_mean_embedding, table.mean.psnr_left);
}

nlohmann::json table_json(const EvalTable& table) {
    auto row = [](const EvalRow& r) {
        return nlohmann::json{{"index", r.index},
                              {"psnr_right", r.psnr_right},
                              {"ssim_right", r.ssim_right},
                              {"psnr_right_mean_embedding", r.psnr_right_mean_embedding},
                              {"psnr_left", r.psnr_left}};
    };
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : table.rows) rows.push_back(row(r));
    return {{"protocol", "left-half"}, {"rows", rows}, {"mean", row(table.mean)}};
}

int cmd_eval(const fs::path& ckpt, const fs::path& scene, bool half, int iters, const fs::path& json_out) {
    const io::Checkpoint<float> ck = io::load_checkpoint<float>(ckpt);
    nlohmann::json doc;
    if (half) {
        if (scene.empty()) throw std::invalid_argument("--half-protocol needs --scene with held-out images");
        const SceneBundle<float> test = io::load_scene<float>(scene);
        TestEmbeddingConfig tc;
        tc.iterations = iters;
        const EvalTable t = evaluate_half_protocol<float>(ck.model, test.images, tc);
        print_table(t, "left-half protocol (" + std::to_string(test.images.size()) + " held-out images)");
        doc = table_json(t);
    } else {
        // Training views with their own embeddings.
        const auto& imgs = scene.empty() ? ck.scene.images : io::load_scene<float>(scene).images;
        if (imgs.size() != ck.model.num_images()) throw std::invalid_argument("scene image count does not match checkpoint");
        double mp = 0, ms = 0;
        nlohmann::json rows = nlohmann::json::array();
        std::printf("training views\n%6s %10s %10s\n", "image", "psnr", "ssim");
        for (std::size_t j = 0; j < imgs.size(); ++j) {
            const Image<float> out = render_live<float>(ck.model, ck.model.appearance.embedding(j), imgs[j].camera);
            const double p = psnr(out, imgs[j].rgb), s = ssim(out, imgs[j].rgb);
            std::printf("%6zu %10.3f %10.4f\n", j, p, s);
            rows.push_back({{"index", j}, {"psnr", p}, {"ssim", s}});
            mp += p / double(imgs.size());
            ms += s / double(imgs.size());
        }
        std::printf("%6s %10.3f %10.4f\n", "mean", mp, ms);
        doc = {{"protocol", "train"}, {"rows", rows}, {"mean", {{"psnr", mp}, {"ssim", ms}}}};
    }
    const std::string text = doc.dump(2);
    if (json_out.empty()) {
        std::printf("%s\n", text.c_str());
    } else {
        std::ofstream(json_out) << text << "\n";
    }
    return 0;
}

struct RenderArgs {
    fs::path ckpt, out, camera;
    std::size_t appearance = 0;
    long view = -1;
    std::vector<double> interp;
    std::string encoding = "png";
};

int cmd_render(const RenderArgs& a) {
    const io::Checkpoint<float> ck = io::load_checkpoint<float>(a.ckpt);
    const auto snap = service::snapshot_from_checkpoint(ck);
    service::RenderRequest req;
    if (!a.camera.empty()) {
        req.camera = io::camera_from_json<float>(io::read_json(a.camera));
        req.camera.validate(1e-4);
    } else {
        const std::size_t v = a.view >= 0 ? std::size_t(a.view) : a.appearance;
        if (v >= ck.scene.images.size()) throw std::invalid_argument("view index out of range");
        req.camera = ck.scene.images[v].camera;
    }
    if (!a.interp.empty()) {
        if (a.interp.size() != 3) throw std::invalid_argument("--interp takes a,b,t");
        req.appearance = service::InterpSpec{std::size_t(a.interp[0]), std::size_t(a.interp[1]),
                                             service::quantize_t(a.interp[2])};
    } else {
        req.appearance = service::IndexSpec{a.appearance};
    }
    req.encoding = service::parse_encoding(a.encoding);
    const service::RenderResult r = service::render_once(*snap, req);
    io::write_file_bytes(a.out, r.bytes);
    std::cerr << "wrote " << a.out << " (" << r.linear.width << "x" << r.linear.height << ", "
              << r.total_millis << " ms)\n";
    return 0;
}

int cmd_serve(const fs::path& ckpt, const std::string& bind, const fs::path& static_dir, std::size_t cache,
              int workers) {
    const auto colon = bind.rfind(':');
    if (colon == std::string::npos) throw std::invalid_argument("--bind expects host:port");
    service::ServerConfig cfg;
    cfg.address = bind.substr(0, colon);
    cfg.port = static_cast<unsigned short>(std::stoi(bind.substr(colon + 1)));
    cfg.static_dir = static_dir;
    if (workers > 0) cfg.render_workers = workers;
    const io::Checkpoint<float> ck = io::load_checkpoint<float>(ckpt);
    service::SnapshotStore store(service::snapshot_from_checkpoint(ck, cache));
    service::Server server(store, cfg);
    server.start();
    std::cerr << "serving " << ckpt << " on http://" << cfg.address << ":" << server.port() << "\n";
    // Block SIGINT/SIGTERM and wait for one, then shut down cleanly.
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);
    int sig = 0;
    sigwait(&set, &sig);
    std::cerr << "stopping\n";
    server.stop();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"splatw: in-the-wild Gaussian splatting"};
    app.require_subcommand(1);

    auto* scene = app.add_subcommand("scene", "scene utilities");
    scene->require_subcommand(1);
    SyntheticConfig gen;
    fs::path gen_out;
    auto* sg = scene->add_subcommand("gen", "generate a synthetic scene");
    sg->add_option("--seed", gen.seed, "random seed")->capture_default_str();
    sg->add_option("--gaussians", gen.n_gaussians, "ground-truth Gaussians")->capture_default_str();
    sg->add_option("--views", gen.n_views, "training views")->capture_default_str();
    sg->add_option("--appearances", gen.n_appearances, "appearance conditions")->capture_default_str();
    sg->add_option("--occluder-frac", gen.occluder_frac, "occluder area fraction")->capture_default_str();
    sg->add_option("--occluded-images", gen.occluded_image_frac, "fraction of images with an occluder")
        ->capture_default_str();
    sg->add_option("--width", gen.width)->capture_default_str();
    sg->add_option("--height", gen.height)->capture_default_str();
    sg->add_option("--far-points", gen.n_far_points, "distant initial points")->capture_default_str();
    sg->add_option("--test-views", gen.n_test_views, "held-out views with a novel appearance")->capture_default_str();
    bool no_sky = false;
    sg->add_flag("--no-sky", no_sky, "black background instead of a sky");
    sg->add_option("--out", gen_out, "output directory")->required();

    fs::path validate_dir;
    auto* sv = scene->add_subcommand("validate", "load and validate a scene directory");
    sv->add_option("dir", validate_dir)->required();

    TrainArgs ta;
    auto* tr = app.add_subcommand("train", "train a model");
    auto* scene_opt = tr->add_option("--scene", ta.scene, "scene directory");
    tr->add_option("--out", ta.out, "checkpoint directory")->required();
    tr->add_option("--iters", ta.iters, "total iterations")->capture_default_str();
    tr->add_option("--seed", ta.seed)->capture_default_str();
    tr->add_option("--per-min", ta.per_min, "robust mask Per_min");
    tr->add_option("--per-max", ta.per_max, "robust mask Per_max");
    tr->add_option("--lambda-alpha", ta.lambda_alpha, "alpha loss weight");
    tr->add_option("--lambda-ssim", ta.lambda_ssim, "D-SSIM weight");
    tr->add_flag("--no-bg", ta.no_bg, "disable the background model (black background)");
    tr->add_flag("--no-mask", ta.no_mask, "disable the robust mask");
    auto* resume_opt = tr->add_option("--resume", ta.resume, "continue from a checkpoint with trainer state");
    scene_opt->excludes(resume_opt);
    tr->add_option("--report-every", ta.report_every, "print every n-th step report")->check(CLI::PositiveNumber);
    tr->add_flag("--quiet", ta.quiet, "no step reports");
    tr->add_option("--checkpoint-every", ta.checkpoint_every, "also save every n iterations");
    tr->add_option("--dump-masks", ta.dump_masks, "write robust masks as PNGs under this directory");
    tr->add_option("--dump-every", ta.dump_every, "mask dump interval")->check(CLI::PositiveNumber);

    fs::path ev_ckpt, ev_scene, ev_json;
    bool ev_half = false;
    int ev_iters = TestEmbeddingConfig{}.iterations;
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    ev->add_option("--ckpt", ev_ckpt)->required();
    ev->add_option("--scene", ev_scene, "scene with evaluation images");
    ev->add_flag("--half-protocol", ev_half, "fit an embedding on the left half, score the right half");
    ev->add_option("--embedding-iters", ev_iters)->capture_default_str();
    ev->add_option("--json", ev_json, "write the machine-readable table here instead of stdout");

    RenderArgs ra;
    auto* rd = app.add_subcommand("render", "render one frame");
    rd->add_option("--ckpt", ra.ckpt)->required();
    rd->add_option("--appearance", ra.appearance, "training embedding index")->capture_default_str();
    rd->add_option("--interp", ra.interp, "a,b,t interpolation between embeddings")->delimiter(',');
    rd->add_option("--view", ra.view, "training camera (default: the appearance index)");
    rd->add_option("--camera", ra.camera, "camera JSON file");
    rd->add_option("--encoding", ra.encoding)->capture_default_str();
    rd->add_option("--out", ra.out)->required();

    fs::path sv_ckpt, sv_static;
    std::string sv_bind = "127.0.0.1:8080";
    std::size_t sv_cache = service::kDefaultCacheCapacity;
    int sv_workers = 0;
    auto* se = app.add_subcommand("serve", "run the render service");
    se->add_option("--ckpt", sv_ckpt)->required();
    se->add_option("--bind", sv_bind)->capture_default_str();
    se->add_option("--static", sv_static, "viewer bundle directory");
    se->add_option("--cache", sv_cache, "appearance cache entries")->capture_default_str();
    se->add_option("--workers", sv_workers, "render workers (0: half the cores)");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*sg) {
            gen.sky = !no_sky;
            return cmd_scene_gen(gen, gen_out);
        }
        if (*sv) return cmd_scene_validate(validate_dir);
        if (*tr) {
            if (ta.scene.empty() && ta.resume.empty()) throw std::invalid_argument("train needs --scene or --resume");
            return cmd_train(ta);
        }
        if (*ev) return cmd_eval(ev_ckpt, ev_scene, ev_half, ev_iters, ev_json);
        if (*rd) return cmd_render(ra);
        if (*se) return cmd_serve(sv_ckpt, sv_bind, sv_static, sv_cache, sv_workers);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
