#include "doctest.h"

#include "ddn/io.hpp"
#include "ddn/latent.hpp"
#include "ddn/service.hpp"

#include <httplib.h>

#include <thread>

using namespace ddn;
using nlohmann::json;

namespace {

ModelConfig tiny() {
    ModelConfig c;
    c.K = 4;
    c.L = 3;
    c.height = 8;
    c.width = 8;
    c.widths = {4, 6, 8};
    return c;
}

std::string decoded_png(Network& net, const LatentPath& path) {
    const std::vector<LatentPath> paths{path};
    const auto bytes = io::encode_png(take0(net.decode(paths).outputs.back().value(), 0));
    return httplib::detail::base64_encode(std::string(bytes.begin(), bytes.end()));
}

// Serves the routes on an ephemeral local port for the lifetime of the object.
struct LocalServer {
    httplib::Server server;
    std::thread thread;
    int port = 0;
    explicit LocalServer(SessionService& service) {
        service.mount(server);
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~LocalServer() {
        server.stop();
        thread.join();
    }
};

json parse(const httplib::Result& r) {
    REQUIRE(r);
    return json::parse(r->body);
}

}  // namespace

TEST_CASE("choosing index 0 at every layer gives decode of the zero path") {
    Network net(tiny(), 3);
    SessionService service(net);
    const auto created = service.create({{"seed", 7}});
    REQUIRE(created.status == 201);
    CHECK(created.body["K"] == 4);
    CHECK(created.body["L"] == 3);
    CHECK(created.body["seed"] == 7);
    CHECK(created.body["images"].size() == 4);
    const std::string id = created.body["id"];

    Reply r;
    for (int l = 0; l < 3; ++l) {
        CHECK(service.candidates(id).body["layer"] == l);
        r = service.choose(id, {{"index", 0}});
        REQUIRE(r.status == 200);
    }
    CHECK(r.body["complete"] == true);
    CHECK(r.body["final"] == decoded_png(net, {0, 0, 0}));
    CHECK(r.body["hex"] == to_hex(pack_bits(LatentCode{4, {0, 0, 0}})));
    CHECK(service.latent(id).body["prefix"] == json::array({0, 0, 0}));
    CHECK(service.choose(id, {{"index", 0}}).status == 409);
}

TEST_CASE("candidates match the network's candidates after the prefix") {
    Network net(tiny(), 4);
    SessionService service(net);
    const std::string id = service.create({{"seed", 1}}).body["id"];
    service.choose(id, {{"index", 2}});
    const auto r = service.candidates(id);
    const Array cands = net.candidates_after({2}).images;
    for (Index k = 0; k < 4; ++k) {
        const auto bytes = io::encode_png(take0(cands, k));
        CHECK(r.body["images"][static_cast<std::size_t>(k)] ==
              httplib::detail::base64_encode(std::string(bytes.begin(), bytes.end())));
    }
}

TEST_CASE("backtrack then repeat reproduces the final image") {
    Network net(tiny(), 5);
    SessionService service(net);
    const std::string id = service.create({{"seed", 2}}).body["id"];
    auto run = [&] {
        Reply r;
        for (int k : {3, 1, 2}) r = service.choose(id, {{"index", k}});
        return r.body;
    };
    const json first = run();
    const auto back = service.backtrack(id, {{"layer", 0}});
    CHECK(back.status == 200);
    CHECK(back.body["layer"] == 0);
    CHECK(back.body["complete"] == false);
    CHECK(run()["final"] == first["final"]);
    CHECK(first["final"] == decoded_png(net, {3, 1, 2}));

    service.backtrack(id, {{"layer", 2}});
    CHECK(service.latent(id).body["prefix"] == json::array({3, 1}));
    CHECK(service.backtrack(id, {{"layer", 3}}).status == 400);
    CHECK(service.backtrack(id, {{"layer", -1}}).status == 400);
}

TEST_CASE("request validation") {
    Network net(tiny(), 6);
    SessionService service(net);
    CHECK(service.create(json::object()).status == 400);
    CHECK(service.create({{"seed", 1}, {"label", 0}}).status == 400);
    const std::string id = service.create({{"seed", 1}}).body["id"];
    CHECK(service.choose(id, {{"index", 4}}).status == 400);
    CHECK(service.choose(id, {{"index", -1}}).status == 400);
    CHECK(service.choose(id, {{"index", "0"}}).status == 400);
    CHECK(service.candidates("nope").status == 404);
    CHECK(service.choose("nope", {{"index", 0}}).status == 404);
    CHECK(service.latent("nope").body.contains("error"));
}

TEST_CASE("random choice is seeded per session") {
    Network net(tiny(), 7);
    SessionService service(net);
    const std::string a = service.create({{"seed", 11}}).body["id"];
    const std::string b = service.create({{"seed", 11}}).body["id"];
    for (int l = 0; l < 3; ++l) {
        service.choose(a, {{"random", true}});
        service.choose(b, {{"random", true}});
    }
    CHECK(service.latent(a).body["prefix"] == service.latent(b).body["prefix"]);
}

TEST_CASE("idle sessions expire") {
    Network net(tiny(), 8);
    auto now = std::chrono::steady_clock::time_point{};
    SessionService service(net, {.idle_ttl = std::chrono::minutes(30)}, [&] { return now; });
    const std::string id = service.create({{"seed", 1}}).body["id"];
    now += std::chrono::minutes(20);
    CHECK(service.candidates(id).status == 200);
    now += std::chrono::minutes(20);
    CHECK(service.session_count() == 1);
    now += std::chrono::minutes(11);
    CHECK(service.candidates(id).status == 404);
    CHECK(service.session_count() == 0);
}

TEST_CASE("http api with two interleaved sessions") {
    Network net(tiny(), 9);
    SessionService service(net);
    LocalServer srv(service);
    httplib::Client cli("127.0.0.1", srv.port);

    const auto a = parse(cli.Post("/sessions", R"({"seed": 1})", "application/json"));
    const auto b = parse(cli.Post("/sessions", R"({"seed": 2})", "application/json"));
    const std::string ida = a["id"], idb = b["id"];
    CHECK(ida != idb);
    CHECK(a["images"].size() == 4);

    const std::vector<int> pa{1, 2, 3}, pb{3, 0, 0};
    json last_a, last_b;
    for (std::size_t l = 0; l < 3; ++l) {
        last_a = parse(cli.Post("/sessions/" + ida + "/choose", json{{"index", pa[l]}}.dump(), "application/json"));
        last_b = parse(cli.Post("/sessions/" + idb + "/choose", json{{"index", pb[l]}}.dump(), "application/json"));
    }
    CHECK(parse(cli.Get("/sessions/" + ida + "/latent"))["prefix"] == json(pa));
    CHECK(parse(cli.Get("/sessions/" + idb + "/latent"))["prefix"] == json(pb));
    CHECK(last_a["final"] == decoded_png(net, pa));
    CHECK(last_b["final"] == decoded_png(net, pb));

    CHECK(cli.Post("/sessions/" + ida + "/choose", R"({"index": 0})", "application/json")->status == 409);
    CHECK(cli.Get("/sessions/ffff/candidates")->status == 404);
    CHECK(cli.Post("/sessions/" + idb + "/backtrack", R"({"layer": 1})", "application/json")->status == 200);
    CHECK(cli.Post("/sessions/" + idb + "/choose", R"({"index": 4})", "application/json")->status == 400);
    CHECK(cli.Post("/sessions/" + idb + "/choose", "{", "application/json")->status == 400);
    const auto missing = cli.Get("/nowhere");
    CHECK(missing->status == 404);
    CHECK(json::parse(missing->body).contains("error"));
}
