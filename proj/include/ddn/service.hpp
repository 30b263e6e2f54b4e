#pragma once

#include "ddn/network.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>

namespace httplib {
class Server;
}

namespace ddn {

struct ServiceOptions {
    std::chrono::milliseconds idle_ttl = std::chrono::minutes(30);
};

struct Reply {
    int status = 200;
    nlohmann::json body;
};

/// In-memory guided sampling sessions over one read-only network. Each
/// session walks the latent tree one layer at a time, with a human (or any
/// client) picking among the K candidates.
class SessionService {
public:
    using Clock = std::function<std::chrono::steady_clock::time_point()>;

    SessionService(Network& net, ServiceOptions options = {}, Clock clock = std::chrono::steady_clock::now);

    Reply create(const nlohmann::json& request);
    Reply candidates(const std::string& id);
    Reply choose(const std::string& id, const nlohmann::json& request);
    Reply backtrack(const std::string& id, const nlohmann::json& request);
    Reply latent(const std::string& id);

    /// Registers the JSON routes on `server`.
    void mount(httplib::Server& server);
    std::size_t session_count();

private:
    struct Session {
        std::mutex mutex;
        std::string id;
        std::uint64_t seed = 0;
        std::optional<int> label;
        LatentPath prefix;
        std::vector<Array> cache;  // cache[d]: candidates after prefix[0..d)
        std::mt19937_64 rng;
        std::chrono::steady_clock::time_point last_used;
    };

    std::shared_ptr<Session> find(const std::string& id);
    void sweep();
    const Array& current_candidates(Session& s);
    nlohmann::json view(Session& s);

    Network& net_;
    ServiceOptions options_;
    Clock clock_;
    std::mutex sessions_mutex_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::mt19937_64 id_rng_;
};

}  // namespace ddn
