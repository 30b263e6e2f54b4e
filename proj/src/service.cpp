#include "ddn/service.hpp"

#include "ddn/io.hpp"
#include "ddn/latent.hpp"

#include <fmt/format.h>
#include <httplib.h>

namespace ddn {

namespace {

using nlohmann::json;

Reply error(int status, std::string message) { return {status, {{"error", std::move(message)}}}; }

std::string png_base64(const Array& image) {
    const auto bytes = io::encode_png(image);
    return httplib::detail::base64_encode(std::string(bytes.begin(), bytes.end()));
}

// Reads an integer field, rejecting anything that is not one.
std::optional<std::int64_t> int_field(const json& j, const char* key) {
    if (!j.is_object() || !j.contains(key) || !j[key].is_number_integer()) return std::nullopt;
    return j[key].get<std::int64_t>();
}

}  // namespace

SessionService::SessionService(Network& net, ServiceOptions options, Clock clock)
    : net_(net), options_(options), clock_(std::move(clock)), id_rng_(std::random_device{}()) {}

void SessionService::sweep() {
    const auto now = clock_();
    for (auto it = sessions_.begin(); it != sessions_.end();) {
        if (now - it->second->last_used > options_.idle_ttl) {
            it = sessions_.erase(it);
        } else {
            ++it;
        }
    }
}

std::shared_ptr<SessionService::Session> SessionService::find(const std::string& id) {
    std::lock_guard lock(sessions_mutex_);
    sweep();
    auto it = sessions_.find(id);
    if (it == sessions_.end()) return nullptr;
    it->second->last_used = clock_();
    return it->second;
}

std::size_t SessionService::session_count() {
    std::lock_guard lock(sessions_mutex_);
    sweep();
    return sessions_.size();
}

const Array& SessionService::current_candidates(Session& s) {
    const std::size_t depth = s.prefix.size();
    s.cache.resize(std::min(s.cache.size(), depth + 1));
    if (s.cache.size() <= depth) {
        std::vector<int> labels;
        if (s.label) labels.push_back(*s.label);
        s.cache.push_back(net_.candidates_after(s.prefix, labels).images);
    }
    return s.cache[depth];
}

json SessionService::view(Session& s) {
    const auto& c = net_.config();
    json out{{"id", s.id}, {"K", c.K}, {"L", c.L}, {"seed", s.seed}, {"layer", s.prefix.size()}, {"prefix", s.prefix}};
    if (static_cast<int>(s.prefix.size()) == c.L) {
        std::vector<int> labels;
        if (s.label) labels.push_back(*s.label);
        const std::vector<LatentPath> paths{s.prefix};
        const Array final_image = take0(net_.decode(paths, labels).outputs.back().value(), 0);
        out["complete"] = true;
        out["images"] = json::array();
        out["final"] = png_base64(final_image);
        out["hex"] = to_hex(pack_bits(LatentCode{c.K, s.prefix}));
        return out;
    }
    const Array& cands = current_candidates(s);
    json images = json::array();
    for (Index k = 0; k < cands.dim(0); ++k) images.push_back(png_base64(take0(cands, k)));
    out["complete"] = false;
    out["images"] = std::move(images);
    return out;
}

Reply SessionService::create(const json& request) {
    if (!request.is_object()) return error(400, "body must be a JSON object");
    const auto seed = int_field(request, "seed");
    if (!seed || *seed < 0) return error(400, "'seed' must be a non-negative integer");
    auto s = std::make_shared<Session>();
    s->seed = static_cast<std::uint64_t>(*seed);
    s->rng.seed(s->seed);
    if (request.contains("label") && !request["label"].is_null()) {
        const auto label = int_field(request, "label");
        const int classes = net_.config().class_count;
        if (classes == 0) return error(400, "model is not class-conditional");
        if (!label || *label < 0 || *label >= classes) return error(400, fmt::format("'label' must be in [0,{})", classes));
        s->label = static_cast<int>(*label);
    } else if (net_.config().class_count > 0) {
        return error(400, "class-conditional model needs 'label'");
    }
    {
        std::lock_guard lock(sessions_mutex_);
        sweep();
        do {
            s->id = fmt::format("{:016x}", id_rng_());
        } while (sessions_.contains(s->id));
        s->last_used = clock_();
        sessions_[s->id] = s;
    }
    std::lock_guard lock(s->mutex);
    Reply r{201, view(*s)};
    if (s->label) r.body["label"] = *s->label;
    return r;
}

Reply SessionService::candidates(const std::string& id) {
    auto s = find(id);
    if (!s) return error(404, fmt::format("unknown session '{}'", id));
    std::lock_guard lock(s->mutex);
    return {200, view(*s)};
}

Reply SessionService::choose(const std::string& id, const json& request) {
    auto s = find(id);
    if (!s) return error(404, fmt::format("unknown session '{}'", id));
    std::lock_guard lock(s->mutex);
    const int K = net_.config().K;
    if (static_cast<int>(s->prefix.size()) == net_.config().L) return error(409, "session is complete; backtrack first");
    int index;
    if (request.is_object() && request.value("random", false)) {
        index = std::uniform_int_distribution<int>(0, K - 1)(s->rng);
    } else {
        const auto k = int_field(request, "index");
        if (!k) return error(400, "'index' must be an integer");
        if (*k < 0 || *k >= K) return error(400, fmt::format("index {} outside [0,{})", *k, K));
        index = static_cast<int>(*k);
    }
    current_candidates(*s);
    s->prefix.push_back(index);
    return {200, view(*s)};
}

Reply SessionService::backtrack(const std::string& id, const json& request) {
    auto s = find(id);
    if (!s) return error(404, fmt::format("unknown session '{}'", id));
    std::lock_guard lock(s->mutex);
    const auto layer = int_field(request, "layer");
    if (!layer) return error(400, "'layer' must be an integer");
    if (*layer < 0 || *layer > static_cast<std::int64_t>(s->prefix.size())) {
        return error(400, fmt::format("layer {} outside [0,{}]", *layer, s->prefix.size()));
    }
    s->prefix.resize(static_cast<std::size_t>(*layer));
    return {200, view(*s)};
}

Reply SessionService::latent(const std::string& id) {
    auto s = find(id);
    if (!s) return error(404, fmt::format("unknown session '{}'", id));
    std::lock_guard lock(s->mutex);
    const auto& c = net_.config();
    return {200, {{"id", s->id}, {"K", c.K}, {"L", c.L}, {"prefix", s->prefix},
                  {"complete", static_cast<int>(s->prefix.size()) == c.L}}};
}

void SessionService::mount(httplib::Server& server) {
    auto send = [](httplib::Response& res, const Reply& r) {
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    };
    auto with_body = [send](const httplib::Request& req, httplib::Response& res, auto&& handler) {
        json body = json::object();
        if (!req.body.empty()) {
            body = json::parse(req.body, nullptr, false);
            if (body.is_discarded()) return send(res, error(400, "body is not valid JSON"));
        }
        send(res, handler(body));
    };
    server.Post("/sessions", [this, with_body](const httplib::Request& req, httplib::Response& res) {
        with_body(req, res, [&](const json& b) { return create(b); });
    });
    server.Get(R"(/sessions/([^/]+)/candidates)", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, candidates(req.matches[1]));
    });
    server.Get(R"(/sessions/([^/]+)/latent)", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, latent(req.matches[1]));
    });
    server.Post(R"(/sessions/([^/]+)/choose)", [this, with_body](const httplib::Request& req, httplib::Response& res) {
        with_body(req, res, [&](const json& b) { return choose(req.matches[1], b); });
    });
    server.Post(R"(/sessions/([^/]+)/backtrack)", [this, with_body](const httplib::Request& req, httplib::Response& res) {
        with_body(req, res, [&](const json& b) { return backtrack(req.matches[1], b); });
    });
    server.set_error_handler([send](const httplib::Request&, httplib::Response& res) {
        if (res.body.empty()) send(res, error(res.status, httplib::status_message(res.status)));
    });
    server.set_exception_handler([send](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        try {
            std::rethrow_exception(ep);
        } catch (const std::exception& e) {
            send(res, error(500, e.what()));
        }
    });
}

}  // namespace ddn
