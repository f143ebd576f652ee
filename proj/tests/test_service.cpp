#include <gtest/gtest.h>

#include <fstream>
#include <thread>

#include <httplib.h>

#include "support.hpp"
#include "tgsr/errors.hpp"
#include "tgsr/image.hpp"
#include "tgsr/service.hpp"

using namespace tgsr;

namespace {

std::shared_ptr<const SrService> service() {
    static const auto svc = std::make_shared<const SrService>(fixtures::tiny_tgsr(), 4096);
    return svc;
}

Image solid(int h, int w, float value) {
    Image im(3, h, w);
    for (auto& v : im.data) v = value;
    return im;
}

std::string request(const Image& lr, const std::string& caption, bool attention = true) {
    return nlohmann::json{{"image_b64", base64_encode(encode_png(lr))},
                          {"caption", caption},
                          {"return_attention", attention},
                          {"return_coarse", true}}
        .dump();
}

std::string known_caption() {
    const auto scene = generate_scene(5, service()->models().config.dataset_config().grammar);
    return scene.caption;
}

}  // namespace

TEST(Service, HealthAndVocab) {
    const auto h = service()->health();
    EXPECT_EQ(h.status, 200);
    EXPECT_EQ(h.body.at("status"), "ok");
    EXPECT_EQ(h.body.at("scale"), 8);
    const auto v = service()->vocab();
    const auto& words = v.body.at("words");
    EXPECT_EQ(words.size() + 2, h.body.at("vocab_size").get<std::size_t>());
    for (const auto& w : words) EXPECT_NE(w.get<std::string>().front(), '<');
}

TEST(Service, SuperResolveReturnsImagesAndOneMapPerWord) {
    const auto caption = known_caption();
    const auto reply = service()->super_resolve(request(solid(8, 8, 0.4f), caption));
    ASSERT_EQ(reply.status, 200) << reply.body.dump();
    const auto fine = decode_png(base64_decode(reply.body.at("fine_b64").get<std::string>()));
    EXPECT_EQ(fine.height, 64);
    EXPECT_EQ(fine.width, 64);
    const auto coarse = decode_png(base64_decode(reply.body.at("coarse_b64").get<std::string>()));
    EXPECT_EQ(coarse.height, 64);
    const auto& maps = reply.body.at("attention");
    const auto words = clean_words(caption);
    ASSERT_EQ(maps.size(), words.size());
    for (std::size_t k = 0; k < words.size(); ++k) {
        EXPECT_EQ(maps[k].at("word"), words[k]);
        const auto m = decode_png(base64_decode(maps[k].at("map_b64").get<std::string>()));
        EXPECT_EQ(m.height, 64);
        EXPECT_LE(maps[k].at("raw_min").get<double>(), maps[k].at("raw_max").get<double>());
    }
    EXPECT_TRUE(std::isfinite(reply.body.at("tim").get<double>()));
    EXPECT_GE(reply.body.at("latency_ms").get<double>(), 0.0);
}

TEST(Service, NonSquareInputScalesByTheFactor) {
    const auto reply = service()->super_resolve(request(solid(4, 6, 0.7f), known_caption(), false));
    ASSERT_EQ(reply.status, 200) << reply.body.dump();
    const auto fine = decode_png(base64_decode(reply.body.at("fine_b64").get<std::string>()));
    EXPECT_EQ(fine.height, 32);
    EXPECT_EQ(fine.width, 48);
    EXPECT_TRUE(reply.body.at("attention").empty());
}

TEST(Service, RepeatedRequestsAreIdentical) {
    const auto body = request(solid(8, 8, 0.2f), known_caption());
    auto a = service()->super_resolve(body).body, b = service()->super_resolve(body).body;
    a.erase("latency_ms");
    b.erase("latency_ms");
    EXPECT_EQ(a.dump(), b.dump());
}

TEST(Service, ErrorsAreTyped) {
    const auto caption = known_caption();
    auto code = [](const HttpReply& r) { return r.body.at("error_code").get<std::string>(); };
    auto r = service()->super_resolve(request(solid(8, 8, 0.5f), "  "));
    EXPECT_EQ(r.status, 422);
    EXPECT_EQ(code(r), "empty_caption");
    r = service()->super_resolve(request(solid(8, 8, 0.5f), "zzz qqq"));
    EXPECT_EQ(r.status, 422);
    EXPECT_EQ(code(r), "no_known_words");
    r = service()->super_resolve(request(solid(65, 64, 0.5f), caption));
    EXPECT_EQ(r.status, 413);
    EXPECT_EQ(code(r), "oversized_image");
    r = service()->super_resolve(nlohmann::json{{"image_b64", "bm90IGEgcG5n"}, {"caption", caption}}.dump());
    EXPECT_EQ(r.status, 422);
    EXPECT_EQ(code(r), "bad_image");
    r = service()->super_resolve("{not json");
    EXPECT_EQ(r.status, 400);
    r = service()->super_resolve(nlohmann::json{{"caption", caption}}.dump());
    EXPECT_EQ(r.status, 400);
    r = service()->super_resolve(request(solid(1, 8, 0.5f), caption));
    EXPECT_EQ(r.status, 422);
    EXPECT_EQ(code(r), "bad_image_size");
}

TEST(Service, RejectsNonPositivePixelLimit) {
    EXPECT_THROW(SrService(fixtures::tiny_tgsr(), 0), ConfigError);
}

TEST(HttpServer, ServesTheEndpointsOverHttp) {
    HttpServer server(service());
    const int port = server.bind("127.0.0.1", 0);
    ASSERT_GT(port, 0);
    std::thread t([&] { server.listen(); });
    httplib::Client client("127.0.0.1", port);
    client.set_read_timeout(60, 0);

    auto health = client.Get("/health");
    ASSERT_TRUE(health);
    EXPECT_EQ(health->status, 200);
    EXPECT_EQ(nlohmann::json::parse(health->body).at("status"), "ok");

    auto vocab = client.Get("/vocab");
    ASSERT_TRUE(vocab);
    EXPECT_FALSE(nlohmann::json::parse(vocab->body).at("words").empty());

    auto sr = client.Post("/sr", request(solid(8, 8, 0.3f), known_caption()), "application/json");
    ASSERT_TRUE(sr);
    EXPECT_EQ(sr->status, 200);
    EXPECT_TRUE(nlohmann::json::parse(sr->body).contains("fine_b64"));

    auto big = client.Post("/sr", request(solid(80, 80, 0.3f), known_caption()), "application/json");
    ASSERT_TRUE(big);
    EXPECT_EQ(big->status, 413);

    auto empty = client.Post("/sr", request(solid(8, 8, 0.3f), ""), "application/json");
    ASSERT_TRUE(empty);
    EXPECT_EQ(empty->status, 422);
    EXPECT_EQ(nlohmann::json::parse(empty->body).at("error_code"), "empty_caption");

    server.stop();
    t.join();
}

TEST(HttpServer, RecordedFixturesReplay) {
    std::ifstream in(std::filesystem::path(TGSR_FIXTURE_DIR) / "service_cases.json");
    ASSERT_TRUE(in);
    const auto cases = nlohmann::json::parse(in);
    HttpServer server(service());
    const int port = server.bind("127.0.0.1", 0);
    std::thread t([&] { server.listen(); });
    httplib::Client client("127.0.0.1", port);
    client.set_read_timeout(60, 0);

    for (const auto& c : cases) {
        const auto name = c.at("name").get<std::string>();
        std::string body;
        if (c.contains("raw_body")) {
            body = c.at("raw_body");
        } else if (c.contains("body")) {
            auto j = c.at("body");
            if (c.contains("image")) {
                const auto& im = c.at("image");
                j["image_b64"] = base64_encode(encode_png(solid(im.at("height"), im.at("width"), im.at("value"))));
            } else if (c.contains("raw_image_b64")) {
                j["image_b64"] = c.at("raw_image_b64");
            }
            body = j.dump();
        }
        auto send = [&] {
            return c.at("method") == "GET" ? client.Get(c.at("path").get<std::string>())
                                           : client.Post(c.at("path").get<std::string>(), body, "application/json");
        };
        auto res = send();
        ASSERT_TRUE(res) << name;
        EXPECT_EQ(res->status, c.at("status").get<int>()) << name << ": " << res->body;
        const auto reply = nlohmann::json::parse(res->body);
        if (c.contains("error_code")) {
            EXPECT_EQ(reply.at("error_code"), c.at("error_code")) << name;
            EXPECT_TRUE(reply.contains("message")) << name;
        }
        if (c.contains("keys"))
            for (const auto& k : c.at("keys")) EXPECT_TRUE(reply.contains(k.get<std::string>())) << name << " " << k;
        if (c.contains("attention_maps")) {
            ASSERT_EQ(reply.at("attention").size(), c.at("attention_maps").get<std::size_t>()) << name;
            for (const auto& m : reply.at("attention"))
                for (const char* k : {"word", "map_b64", "raw_min", "raw_max"}) EXPECT_TRUE(m.contains(k)) << name;
        }
        if (res->status == 200 && c.at("method") == "POST") {
            auto again = send();
            ASSERT_TRUE(again);
            auto a = reply, b = nlohmann::json::parse(again->body);
            a.erase("latency_ms");
            b.erase("latency_ms");
            EXPECT_EQ(a.dump(), b.dump()) << name;
        }
    }
    server.stop();
    t.join();
}
