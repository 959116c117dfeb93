#pragma once

/// @file server.hpp
/// @brief HTTP + WebSocket render service on one port (Boost.Beast).
///
/// HTTP
///   GET  /api/scene        catalog JSON (see scene_info)
///   GET  /api/thumb/{j}    PNG thumbnail of training image j
///   POST /api/render       RenderRequest JSON -> image bytes;
///                          headers X-Render-Millis, X-Cache-Hit, X-Cache-Millis,
///                          X-Raster-Millis, X-Snapshot-Version
///   GET  /ws               WebSocket upgrade, stream protocol below
///   GET  /*                static files from the configured directory
///
/// Stream protocol, version 1 (text frames, one JSON object each).
/// Client -> server; every message may carry "v" (must be 1 when present),
/// "seq" (integer, echoed in the frame that reflects it; server counts
/// messages when absent) and "encoding" ("jpeg" default | "png"):
///   {"type":"set_camera", "camera":{rotation[9], translation[3], fx, fy, cx, cy, width, height}}
///   {"type":"set_appearance", "index":j}  or  {"type":"set_appearance", "embedding":[48 floats]}
///   {"type":"interp", "a":j, "b":k, "t":0..1}           (t snapped to 1/256)
/// Server -> client:
///   {"v":1, "type":"frame", "seq", "encoding", "width", "height", "cache_hit",
///    "render_ms", "snapshot_version", "data":base64}
///   {"v":1, "type":"error", "seq", "message"}
/// Until the first set_camera the camera of training image 0 is used; the
/// initial appearance is index 0. At most one render per connection is in
/// flight; messages arriving meanwhile are merged and only the newest state
/// is rendered next (latest wins). Queued frames not yet sent are replaced
/// by newer ones.

#include "splatw/service/snapshot.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/core/detail/base64.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <algorithm>
#include <charconv>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <thread>

namespace splatw::service {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

struct ServerConfig {
    std::string address = "127.0.0.1";
    unsigned short port = 8080;  // 0 picks a free port
    std::filesystem::path static_dir;  // empty: no static serving
    int io_threads = 2;
    int render_workers = std::max(1, static_cast<int>(std::thread::hardware_concurrency()) / 2);
};

inline std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
    std::string out(beast::detail::base64::encoded_size(bytes.size()), '\0');
    out.resize(beast::detail::base64::encode(out.data(), bytes.data(), bytes.size()));
    return out;
}

inline std::string mime_type(const std::filesystem::path& p) {
    const std::string e = p.extension().string();
    if (e == ".html" || e == ".htm") return "text/html; charset=utf-8";
    if (e == ".js" || e == ".mjs") return "text/javascript";
    if (e == ".css") return "text/css";
    if (e == ".json") return "application/json";
    if (e == ".png") return "image/png";
    if (e == ".jpg" || e == ".jpeg") return "image/jpeg";
    if (e == ".svg") return "image/svg+xml";
    if (e == ".wasm") return "application/wasm";
    if (e == ".map" || e == ".txt") return "text/plain";
    return "application/octet-stream";
}

namespace detail {

using Response = http::response<http::string_body>;

struct Context {
    SnapshotStore* store = nullptr;
    ServerConfig config;
    net::thread_pool* pool = nullptr;
};

inline Response make_response(http::status s, unsigned version, bool keep_alive, std::string body,
                              const std::string& type) {
    Response res{s, version};
    res.set(http::field::server, "splatw");
    res.set(http::field::content_type, type);
    res.keep_alive(keep_alive);
    res.body() = std::move(body);
    res.prepare_payload();
    return res;
}

inline Response json_error(http::status s, unsigned version, bool keep_alive, const std::string& msg) {
    return make_response(s, version, keep_alive, nlohmann::json{{"error", msg}}.dump(), "application/json");
}

/// Maps a URL path under the static root, refusing traversal.
inline std::optional<std::filesystem::path> static_path(const std::filesystem::path& root, std::string_view target) {
    if (root.empty()) return std::nullopt;
    std::string path(target.substr(0, target.find('?')));
    if (path.empty() || path.front() != '/') return std::nullopt;
    if (path.back() == '/') path += "index.html";
    std::filesystem::path rel = std::filesystem::path(path.substr(1)).lexically_normal();
    for (const auto& part : rel)
        if (part == "..") return std::nullopt;
    std::filesystem::path full = root / rel;
    if (!std::filesystem::is_regular_file(full)) return std::nullopt;
    return full;
}

/// Synchronous part of request handling; /api/render is dispatched separately.
inline Response handle_simple(const Context& ctx, const http::request<http::string_body>& req) {
    const unsigned v = req.version();
    const bool ka = req.keep_alive();
    const std::string_view target(req.target().data(), req.target().size());
    if (req.method() != http::verb::get && req.method() != http::verb::head) {
        return json_error(http::status::method_not_allowed, v, ka, "method not allowed");
    }
    const auto snap = ctx.store->current();
    if (target == "/api/scene") {
        if (!snap) return json_error(http::status::service_unavailable, v, ka, "no scene published");
        return make_response(http::status::ok, v, ka, scene_info(*snap).dump(), "application/json");
    }
    if (target.starts_with("/api/thumb/")) {
        if (!snap) return json_error(http::status::service_unavailable, v, ka, "no scene published");
        const std::string idx(target.substr(11));
        std::size_t j = 0;
        const auto [ptr, ec] = std::from_chars(idx.data(), idx.data() + idx.size(), j);
        if (ec != std::errc() || ptr != idx.data() + idx.size()) {
            return json_error(http::status::bad_request, v, ka, "thumbnail index must be an integer");
        }
        if (j >= snap->images().size()) return json_error(http::status::not_found, v, ka, "no such image");
        const auto png = thumbnail_png(snap->images()[j].rgb);
        return make_response(http::status::ok, v, ka, std::string(png.begin(), png.end()), "image/png");
    }
    if (target.starts_with("/api/")) return json_error(http::status::not_found, v, ka, "unknown endpoint");
    if (auto p = static_path(ctx.config.static_dir, target)) {
        std::ifstream in(*p, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        return make_response(http::status::ok, v, ka, ss.str(), mime_type(*p));
    }
    return json_error(http::status::not_found, v, ka, "not found");
}

inline Response handle_render(const Context& ctx, const http::request<http::string_body>& req) {
    const unsigned v = req.version();
    const bool ka = req.keep_alive();
    const auto snap = ctx.store->current();
    if (!snap) return json_error(http::status::service_unavailable, v, ka, "no scene published");
    try {
        const nlohmann::json body = nlohmann::json::parse(req.body());
        const RenderRequest rr = request_from_json(body);
        const RenderResult r = render_once(*snap, rr);
        Response res = make_response(http::status::ok, v, ka, std::string(r.bytes.begin(), r.bytes.end()),
                                     encoding_mime(r.encoding));
        res.set("X-Render-Millis", std::to_string(r.total_millis));
        res.set("X-Cache-Millis", std::to_string(r.cache_millis));
        res.set("X-Raster-Millis", std::to_string(r.raster_millis));
        res.set("X-Cache-Hit", r.cache_hit ? "true" : "false");
        res.set("X-Snapshot-Version", std::to_string(r.snapshot_version));
        return res;
    } catch (const nlohmann::json::parse_error& e) {
        return json_error(http::status::bad_request, v, ka, std::string("invalid JSON: ") + e.what());
    } catch (const RequestError& e) {
        return json_error(http::status::bad_request, v, ka, e.what());
    } catch (const std::exception& e) {
        return json_error(http::status::internal_server_error, v, ka, e.what());
    }
}

class WsSession : public std::enable_shared_from_this<WsSession> {
public:
    WsSession(tcp::socket&& socket, const Context& ctx) : ws_(std::move(socket)), ctx_(ctx) {}

    void run(http::request<http::string_body> req) {
        net::dispatch(ws_.get_executor(), [self = shared_from_this(), req = std::move(req)]() mutable {
            self->ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
            self->ws_.async_accept(req, [self](beast::error_code ec) {
                if (!ec) self->do_read();
            });
        });
    }

private:
    void do_read() {
        ws_.async_read(in_, [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_read(ec); });
    }

    void on_read(beast::error_code ec) {
        if (ec) {
            closed_ = true;
            return;
        }
        const std::string text = beast::buffers_to_string(in_.data());
        in_.consume(in_.size());
        std::int64_t seq = ++counter_;
        try {
            const nlohmann::json m = nlohmann::json::parse(text);
            if (!m.is_object()) throw RequestError("message must be a JSON object");
            if (m.contains("seq")) {
                if (!m.at("seq").is_number_integer()) throw RequestError("seq must be an integer");
                seq = m.at("seq").get<std::int64_t>();
            }
            if (m.contains("v") && m.at("v") != kProtocolVersion) {
                throw RequestError("unsupported protocol version " + m.at("v").dump());
            }
            apply(m);
            latest_seq_ = seq;
            dirty_ = true;
            maybe_render();
        } catch (const std::exception& e) {
            enqueue(nlohmann::json{{"v", kProtocolVersion}, {"type", "error"}, {"seq", seq}, {"message", e.what()}}
                        .dump(),
                    false);
        }
        do_read();
    }

    void apply(const nlohmann::json& m) {
        const std::string type = m.value("type", "");
        if (m.contains("encoding")) {
            if (!m.at("encoding").is_string()) throw RequestError("encoding must be a string");
            encoding_ = parse_encoding(m.at("encoding").get<std::string>());
        }
        if (type == "set_camera") {
            if (!m.contains("camera")) throw RequestError("set_camera needs 'camera'");
            try {
                camera_ = io::camera_from_json<float>(m.at("camera"));
                camera_->validate(1e-4);
            } catch (const std::invalid_argument& e) {
                camera_.reset();
                throw RequestError(e.what());
            }
        } else if (type == "set_appearance") {
            if (m.contains("index")) {
                if (!m.at("index").is_number_unsigned()) throw RequestError("index must be a non-negative integer");
                appearance_ = IndexSpec{m.at("index").get<std::size_t>()};
            } else if (m.contains("embedding")) {
                appearance_ = appearance_from_json(nlohmann::json{{"embedding", m.at("embedding")}});
            } else {
                throw RequestError("set_appearance needs 'index' or 'embedding'");
            }
        } else if (type == "interp") {
            appearance_ = appearance_from_json(nlohmann::json{{"a", m.value("a", nlohmann::json())},
                                                              {"b", m.value("b", nlohmann::json())},
                                                              {"t", m.value("t", nlohmann::json())}});
        } else {
            throw RequestError("unknown message type '" + type + "'");
        }
    }

    void maybe_render() {
        if (rendering_ || !dirty_ || closed_) return;
        const auto snap = ctx_.store->current();
        if (!snap) {
            dirty_ = false;
            enqueue(error_text(latest_seq_, "no scene published"), false);
            return;
        }
        RenderRequest req;
        req.camera = camera_ ? *camera_ : snap->images().at(0).camera;
        req.appearance = appearance_;
        req.encoding = encoding_;
        const std::int64_t seq = latest_seq_;
        dirty_ = false;
        rendering_ = true;
        net::post(*ctx_.pool, [self = shared_from_this(), snap, req, seq] {
            std::string text;
            try {
                const RenderResult r = render_once(*snap, req);
                text = nlohmann::json{{"v", kProtocolVersion},
                                      {"type", "frame"},
                                      {"seq", seq},
                                      {"encoding", encoding_name(r.encoding)},
                                      {"width", r.linear.width},
                                      {"height", r.linear.height},
                                      {"cache_hit", r.cache_hit},
                                      {"render_ms", r.total_millis},
                                      {"snapshot_version", r.snapshot_version},
                                      {"data", base64_encode(r.bytes)}}
                           .dump();
            } catch (const std::exception& e) {
                text = error_text(seq, e.what());
            }
            net::post(self->ws_.get_executor(), [self, text = std::move(text)]() mutable {
                self->rendering_ = false;
                self->enqueue(std::move(text), true);
                self->maybe_render();
            });
        });
    }

    static std::string error_text(std::int64_t seq, const std::string& msg) {
        return nlohmann::json{{"v", kProtocolVersion}, {"type", "error"}, {"seq", seq}, {"message", msg}}.dump();
    }

    void enqueue(std::string text, bool is_frame) {
        if (closed_) return;
        if (is_frame) {
            // Drop frames that are queued but not yet on the wire.
            auto first = outbox_.begin() + (writing_ ? 1 : 0);
            outbox_.erase(std::remove_if(first, outbox_.end(), [](const auto& m) { return m.second; }), outbox_.end());
        }
        outbox_.emplace_back(std::move(text), is_frame);
        if (!writing_) do_write();
    }

    void do_write() {
        writing_ = true;
        ws_.text(true);
        ws_.async_write(net::buffer(outbox_.front().first),
                        [self = shared_from_this()](beast::error_code ec, std::size_t) {
                            self->outbox_.pop_front();
                            self->writing_ = false;
                            if (ec) {
                                self->closed_ = true;
                                self->outbox_.clear();
                                return;
                            }
                            if (!self->outbox_.empty()) self->do_write();
                        });
    }

    websocket::stream<beast::tcp_stream> ws_;
    const Context& ctx_;
    beast::flat_buffer in_;
    std::deque<std::pair<std::string, bool>> outbox_;
    bool writing_ = false, rendering_ = false, dirty_ = false, closed_ = false;
    std::int64_t counter_ = 0, latest_seq_ = 0;
    std::optional<CameraView<float>> camera_;
    AppearanceSpec appearance_ = IndexSpec{0};
    Encoding encoding_ = Encoding::jpeg;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
public:
    HttpSession(tcp::socket&& socket, const Context& ctx) : stream_(std::move(socket)), ctx_(ctx) {}

    void run() {
        net::dispatch(stream_.get_executor(), [self = shared_from_this()] { self->do_read(); });
    }

private:
    void do_read() {
        req_ = {};
        stream_.expires_after(std::chrono::seconds(60));
        http::async_read(stream_, buffer_, req_,
                         [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_read(ec); });
    }

    void on_read(beast::error_code ec) {
        if (ec == http::error::end_of_stream) {
            stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
            return;
        }
        if (ec) return;
        const std::string_view target(req_.target().data(), req_.target().size());
        if (websocket::is_upgrade(req_)) {
            if (target == "/ws") {
                stream_.expires_never();
                std::make_shared<WsSession>(stream_.release_socket(), ctx_)->run(std::move(req_));
                return;
            }
            send(json_error(http::status::not_found, req_.version(), false, "websocket endpoint is /ws"));
            return;
        }
        if (target == "/api/render") {
            if (req_.method() != http::verb::post) {
                send(json_error(http::status::method_not_allowed, req_.version(), req_.keep_alive(), "use POST"));
                return;
            }
            net::post(*ctx_.pool, [self = shared_from_this()] {
                Response res = handle_render(self->ctx_, self->req_);
                net::post(self->stream_.get_executor(),
                          [self, res = std::move(res)]() mutable { self->send(std::move(res)); });
            });
            return;
        }
        Response res = handle_simple(ctx_, req_);
        if (req_.method() == http::verb::head) res.body().clear();
        send(std::move(res));
    }

    void send(Response res) {
        res_ = std::make_shared<Response>(std::move(res));
        http::async_write(stream_, *res_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
            if (ec) return;
            if (!self->res_->keep_alive()) {
                self->stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
                return;
            }
            self->res_.reset();
            self->do_read();
        });
    }

    beast::tcp_stream stream_;
    const Context& ctx_;
    beast::flat_buffer buffer_;
    http::request<http::string_body> req_;
    std::shared_ptr<Response> res_;
};

}  // namespace detail

/// The running service. start() binds (throwing on failure, e.g. port in
/// use) and returns; stop() or destruction shuts everything down.
class Server {
public:
    Server(SnapshotStore& store, ServerConfig cfg)
        : pool_(static_cast<std::size_t>(std::max(1, cfg.render_workers))), acceptor_(ioc_) {
        ctx_.store = &store;
        ctx_.config = std::move(cfg);
        ctx_.pool = &pool_;
    }
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;
    ~Server() { stop(); }

    void start() {
        beast::error_code ec;
        const auto addr = net::ip::make_address(ctx_.config.address, ec);
        if (ec) throw std::runtime_error("bad bind address '" + ctx_.config.address + "': " + ec.message());
        const tcp::endpoint ep(addr, ctx_.config.port);
        acceptor_.open(ep.protocol(), ec);
        if (!ec) acceptor_.set_option(net::socket_base::reuse_address(true), ec);
        if (!ec) acceptor_.bind(ep, ec);
        if (!ec) acceptor_.listen(net::socket_base::max_listen_connections, ec);
        if (ec) {
            throw std::runtime_error("cannot listen on " + ctx_.config.address + ":" +
                                     std::to_string(ctx_.config.port) + ": " + ec.message());
        }
        port_ = acceptor_.local_endpoint().port();
        do_accept();
        for (int i = 0; i < std::max(1, ctx_.config.io_threads); ++i) threads_.emplace_back([this] { ioc_.run(); });
    }

    unsigned short port() const { return port_; }

    void stop() {
        if (stopped_) return;
        stopped_ = true;
        ioc_.stop();
        for (auto& t : threads_)
            if (t.joinable()) t.join();
        pool_.join();
    }

    /// Blocks until stop() is called from another thread or a signal handler.
    void wait() {
        for (auto& t : threads_)
            if (t.joinable()) t.join();
    }

private:
    void do_accept() {
        acceptor_.async_accept(net::make_strand(ioc_), [this](beast::error_code ec, tcp::socket socket) {
            if (!ec) std::make_shared<detail::HttpSession>(std::move(socket), ctx_)->run();
            if (acceptor_.is_open()) do_accept();
        });
    }

    net::io_context ioc_;
    net::thread_pool pool_;
    tcp::acceptor acceptor_;
    detail::Context ctx_;
    std::vector<std::thread> threads_;
    unsigned short port_ = 0;
    bool stopped_ = false;
};

}  // namespace splatw::service
