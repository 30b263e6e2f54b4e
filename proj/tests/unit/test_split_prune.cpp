#include "doctest.h"
#include "gradcheck.hpp"

#include "ddn/split_prune.hpp"

#include <numeric>
#include <sstream>

using namespace ddn;

namespace {

SplitPruneState with_counts(std::vector<double> c) {
    SplitPruneState s(static_cast<int>(c.size()));
    s.total = std::accumulate(c.begin(), c.end(), 0.0);
    s.counters = std::move(c);
    return s;
}

struct CloneLog {
    std::vector<std::pair<int, int>> calls;
    SlotCloneFn fn() {
        return [this](int s, int d) { calls.emplace_back(s, d); };
    }
};

}  // namespace

TEST_CASE("overloaded node splits into the least matched slot") {
    auto s = with_counts({6, 1, 1, 1, 1});
    CloneLog log;
    auto ev = check_and_apply(s, log.fn(), 17);
    REQUIRE(ev);
    CHECK(ev->split_src == 0);
    CHECK(ev->pruned == 1);
    CHECK(ev->step == 17);
    CHECK(s.counters == std::vector<double>{3, 3, 1, 1, 1});
    CHECK(s.total == 9.0);
    CHECK(log.calls == std::vector<std::pair<int, int>>{{0, 1}});
}

TEST_CASE("shares inside both thresholds leave everything alone") {
    auto s = with_counts({3, 2, 2, 2, 1});  // 1/10 sits exactly on the prune threshold
    CloneLog log;
    CHECK_FALSE(check_and_apply(s, log.fn()));
    CHECK(log.calls.empty());
    CHECK(s.counters == std::vector<double>{3, 2, 2, 2, 1});
    CHECK(s.total == 10.0);
}

TEST_CASE("starved node of two is pruned") {
    auto s = with_counts({5, 0});
    CloneLog log;
    auto ev = check_and_apply(s, log.fn());
    REQUIRE(ev);
    CHECK(ev->split_src == 0);
    CHECK(ev->pruned == 1);
    CHECK(s.counters == std::vector<double>{2.5, 2.5});
    CHECK(s.total == 5.0);
}

TEST_CASE("warmup blocks decisions") {
    auto s = with_counts({3, 0, 0, 0});
    CloneLog log;
    CHECK_FALSE(check_and_apply(s, log.fn()));
    record_match(s, 0);
    CHECK(check_and_apply(s, log.fn()));
}

TEST_CASE("total stays equal to the counter sum over random match sequences") {
    std::mt19937_64 rng(42);
    for (int K : {2, 3, 8, 17}) {
        SplitPruneState s(K);
        std::vector<double> w(static_cast<std::size_t>(K));
        for (int k = 0; k < K; ++k) w[static_cast<std::size_t>(k)] = 1.0 + k * k;
        std::discrete_distribution<int> skew(w.begin(), w.end());
        int events = 0;
        for (int i = 0; i < 2000; ++i) {
            record_match(s, skew(rng));
            if (check_and_apply(s, [](int, int) {})) ++events;
            const double sum = std::accumulate(s.counters.begin(), s.counters.end(), 0.0);
            REQUIRE(s.total == doctest::Approx(sum).epsilon(1e-12));
            for (double c : s.counters) REQUIRE(c >= 0.0);
        }
        CHECK(events > 0);
    }
}

TEST_CASE("record_match rejects out of range nodes") {
    SplitPruneState s(4);
    CHECK_THROWS_AS(record_match(s, 4), std::out_of_range);
    CHECK_THROWS_AS(record_match(s, -1), std::out_of_range);
    CHECK_THROWS_AS(SplitPruneState(1), std::invalid_argument);
}

TEST_CASE("reset clears counts and re-arms warmup") {
    auto s = with_counts({6, 1, 1, 1, 1});
    reset(s);
    CHECK(s.total == 0.0);
    CHECK(s.counters == std::vector<double>(5, 0.0));
    CHECK_FALSE(check_and_apply(s, [](int, int) {}));
}

TEST_CASE("bank clone keeps parameters and optimizer moments coherent") {
    std::mt19937_64 rng(3);
    Parameter w("bank.w", testing::random_array({4, 2, 3}, rng), 0);
    Parameter b("bank.b", testing::random_array({4, 2}, rng), 0);
    AdamState sw = make_adam_state(w), sb = make_adam_state(b);
    sw.m = testing::random_array({4, 2, 3}, rng);
    sb.v = testing::random_array({4, 2}, rng, 0.0f, 1.0f);
    const SlotBinding bank[] = {{&w, &sw}, {&b, &sb}};

    auto s = with_counts({1, 9, 1, 1});
    auto ev = check_and_apply(s, bank);
    REQUIRE(ev);
    CHECK(ev->split_src == 1);
    CHECK(ev->pruned == 0);
    for (const Array* a : {&w.value, &sw.m, &sw.v, &b.value, &sb.m, &sb.v}) {
        auto src = a->slice0(1), dst = a->slice0(0);
        CHECK(std::equal(src.begin(), src.end(), dst.begin()));
    }

    Parameter wrong("wrong", Array({3, 2}), 0);
    AdamState sw2 = make_adam_state(wrong);
    const SlotBinding bad[] = {{&wrong, &sw2}};
    CHECK_THROWS_AS(check_and_apply(s, bad), std::invalid_argument);
}

TEST_CASE("json round trip and event log line") {
    auto s = with_counts({2.5, 0.5, 4});
    auto back = split_prune_from_json(to_json(s));
    CHECK(back.counters == s.counters);
    CHECK(back.total == s.total);
    CHECK(back.p_split == s.p_split);
    CHECK(back.warmup_min_total == s.warmup_min_total);

    std::ostringstream out;
    append_event_log(out, {2, 5, 300}, 1);
    auto line = nlohmann::json::parse(out.str());
    CHECK(line["step"] == 300);
    CHECK(line["layer"] == 1);
    CHECK(line["split_src"] == 2);
    CHECK(line["pruned"] == 5);
}
