#pragma once

#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "tgsr/checkpoint.hpp"
#include "tgsr/trainer.hpp"

namespace tgsr {

struct HttpReply {
    int status = 200;
    nlohmann::json body;
};

/// Caption-conditioned SR over one immutable checkpoint. Handlers only read
/// the model, so they may run concurrently.
class SrService {
public:
    SrService(const Checkpoint& checkpoint, int max_pixels);

    HttpReply health() const;
    HttpReply vocab() const;
    /// Body: {"image_b64","caption","return_attention","return_coarse"}.
    HttpReply super_resolve(const std::string& request_body) const;

    const TgsrModels& models() const { return *models_; }

private:
    std::shared_ptr<TgsrModels> models_;
    int max_pixels_;
};

/// cpp-httplib front end for SrService.
class HttpServer {
public:
    explicit HttpServer(std::shared_ptr<const SrService> service);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    /// Binds (port 0 picks a free port) and returns the bound port; IoError when binding fails.
    int bind(const std::string& host, int port);
    /// Serves until stop() is called.
    void listen();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace tgsr
