#include "tgsr/service.hpp"

#include <chrono>

#include <httplib.h>

#include "tgsr/corpus.hpp"
#include "tgsr/errors.hpp"
#include "tgsr/image.hpp"
#include "tgsr/matching.hpp"

namespace tgsr {

namespace {

HttpReply error_reply(int status, const std::string& code, const std::string& message) {
    return {status, {{"error_code", code}, {"message", message}}};
}

std::string png_b64(const Image& image) {
    const auto bytes = image.channels == 1 ? encode_gray_png(image) : encode_png(image);
    return base64_encode(bytes);
}

}  // namespace

SrService::SrService(const Checkpoint& checkpoint, int max_pixels)
    : models_(std::make_shared<TgsrModels>(load_tgsr(checkpoint))), max_pixels_(max_pixels) {
    if (max_pixels < 1) throw ConfigError("serve.max_pixels must be positive");
}

HttpReply SrService::health() const {
    return {200, {{"status", "ok"}, {"scale", models_->config.scale}, {"vocab_size", models_->encoders.vocab.size()}}};
}

HttpReply SrService::vocab() const {
    nlohmann::json words = nlohmann::json::array();
    const auto& tokens = models_->encoders.vocab.tokens();
    for (std::size_t i = 2; i < tokens.size(); ++i) words.push_back(tokens[i]);
    return {200, {{"words", words}}};
}

HttpReply SrService::super_resolve(const std::string& request_body) const {
    const auto start = std::chrono::steady_clock::now();
    nlohmann::json req;
    try {
        req = nlohmann::json::parse(request_body);
    } catch (const nlohmann::json::exception&) {
        return error_reply(400, "bad_request", "request body is not valid JSON");
    }
    if (!req.is_object()) return error_reply(400, "bad_request", "request body must be a JSON object");

    const std::string caption = req.contains("caption") && req["caption"].is_string() ? req["caption"].get<std::string>() : "";
    const auto words = clean_words(caption);
    if (words.empty()) return error_reply(422, "empty_caption", "caption has no words");
    if (!req.contains("image_b64") || !req["image_b64"].is_string())
        return error_reply(400, "bad_request", "image_b64 is required");
    const bool want_attention = req.value("return_attention", false);
    const bool want_coarse = req.value("return_coarse", false);

    Image lr;
    try {
        lr = decode_png(base64_decode(req["image_b64"].get<std::string>()));
    } catch (const Error& e) {
        return error_reply(422, "bad_image", e.what());
    }
    const auto& cfg = models_->config;
    if (static_cast<long long>(lr.height) * lr.width > max_pixels_)
        return error_reply(413, "oversized_image",
                           "image has " + std::to_string(lr.height * lr.width) + " pixels, limit is " +
                               std::to_string(max_pixels_));
    if (lr.height < 2 || lr.width < 2) return error_reply(422, "bad_image_size", "image must be at least 2x2");

    const auto tok = tokenize(caption, models_->encoders.vocab, cfg.t_max);
    bool known = false;
    for (std::int64_t i = 0; i < tok.length; ++i) known |= tok.ids[static_cast<std::size_t>(i)] != Vocabulary::kUnk;
    if (!known) return error_reply(422, "no_known_words", "no caption word is in the vocabulary");

    torch::NoGradGuard no_grad;
    const std::vector<TokenizedCaption> one{tok};
    const auto tokens = make_token_batch(one);
    auto& models = *models_;
    const auto out = tgsr_forward(to_tensor(lr).unsqueeze(0), tokens, models.encoders.text, models.generator);
    const Image fine = clipped(from_tensor(out.fine[0]));

    // TIM is defined at the encoder's resolution.
    Image scored = fine;
    if (fine.height != cfg.image_size || fine.width != cfg.image_size)
        scored = clipped(bicubic_resize(fine, cfg.image_size, cfg.image_size));
    const auto text = models.encoders.text->forward(tokens);
    const double tim =
        match(text, models.encoders.image->forward(to_tensor(scored).unsqueeze(0)), cfg.matching).tim[0].item<double>();

    nlohmann::json body{{"fine_b64", png_b64(fine)}, {"tim", tim}};
    if (want_coarse) body["coarse_b64"] = png_b64(clipped(from_tensor(out.coarse[0])));
    nlohmann::json attention = nlohmann::json::array();
    if (want_attention && !out.attention.empty()) {
        const auto maps = out.attention.back().word_maps[0];
        for (std::int64_t k = 0; k < tok.length; ++k) {
            const auto m = maps[k].contiguous();
            const double lo = m.min().item<double>(), hi = m.max().item<double>();
            const auto norm = hi > lo ? (m - lo) / (hi - lo) : torch::zeros_like(m);
            attention.push_back({{"word", words[static_cast<std::size_t>(k)]},
                                 {"map_b64", png_b64(from_tensor(norm.unsqueeze(0)))},
                                 {"raw_min", lo},
                                 {"raw_max", hi}});
        }
    }
    body["attention"] = attention;
    body["latency_ms"] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return {200, body};
}

struct HttpServer::Impl {
    std::shared_ptr<const SrService> service;
    httplib::Server server;
};

HttpServer::HttpServer(std::shared_ptr<const SrService> service) : impl_(std::make_unique<Impl>()) {
    impl_->service = std::move(service);
    auto send = [](httplib::Response& res, const HttpReply& reply) {
        res.status = reply.status;
        res.set_content(reply.body.dump(), "application/json");
    };
    auto guarded = [send](httplib::Response& res, auto&& fn) {
        try {
            send(res, fn());
        } catch (const Error& e) {
            send(res, error_reply(422, e.code(), e.what()));
        } catch (const std::exception& e) {
            send(res, error_reply(500, "internal_error", e.what()));
        }
    };
    auto* svc = impl_->service.get();
    impl_->server.Get("/health", [=](const httplib::Request&, httplib::Response& res) {
        guarded(res, [&] { return svc->health(); });
    });
    impl_->server.Get("/vocab", [=](const httplib::Request&, httplib::Response& res) {
        guarded(res, [&] { return svc->vocab(); });
    });
    impl_->server.Post("/sr", [=](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { return svc->super_resolve(req.body); });
    });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
    const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
    return bound;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
    if (impl_) impl_->server.stop();
}

}  // namespace tgsr
