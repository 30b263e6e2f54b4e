#include "doctest.h"
#include "gradcheck.hpp"

#include "ddn/tensor/adam.hpp"
#include "ddn/tensor/checkpoint.hpp"
#include "ddn/tensor/ops.hpp"

#include <cstring>
#include <sstream>

using namespace ddn;
using ddn::testing::gradient_relative_error;
using ddn::testing::random_array;

namespace {

constexpr double kGradTol = 1e-3;

// Scalarizes an op output against a fixed random target.
Var against_target(Tape& tape, const Var& out, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return mse(out, tape.constant(random_array(out.shape(), rng)));
}

}  // namespace

TEST_CASE("relu and conv identity") {
    Tape tape;
    auto y = relu(tape.constant(Array({3}, {-1.0f, 0.0f, 2.0f})));
    CHECK(y.value() == Array({3}, {0.0f, 0.0f, 2.0f}));

    std::mt19937_64 rng(1);
    Array x = random_array({2, 3, 4, 4}, rng);
    Array w({3, 3, 1, 1});
    for (Index c = 0; c < 3; ++c) w[c * 3 + c] = 1.0f;
    auto out = conv2d(tape.constant(x), tape.constant(w), tape.constant(Array({3})));
    CHECK(out.value() == x);

    // 3x3 kernel with only the centre tap set is also the identity.
    Array w3({3, 3, 3, 3});
    for (Index c = 0; c < 3; ++c) w3[(c * 3 + c) * 9 + 4] = 1.0f;
    CHECK(conv2d(tape.constant(x), tape.constant(w3), tape.constant(Array({3}))).value() == x);
}

TEST_CASE("shape mismatch names the op and the shapes") {
    Tape tape;
    auto a = tape.constant(Array({2, 3}));
    auto b = tape.constant(Array({4, 2}));
    try {
        (void)matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[4,2]") != std::string::npos);
    }
    CHECK_THROWS_AS(mse(a, b), ShapeError);
    CHECK_THROWS_AS(avgpool2x2(tape.constant(Array({1, 1, 3, 3}))), ShapeError);
}

TEST_CASE("gradient check: every op kind against central differences") {
    std::mt19937_64 rng(7);

    SUBCASE("mse on random 4x4") {
        std::vector<Parameter> ps{{"a", random_array({4, 4}, rng)}, {"b", random_array({4, 4}, rng)}};
        CHECK(gradient_relative_error(ps, [](Tape&, std::vector<Var>& v) { return mse(v[0], v[1]); }) < kGradTol);
    }
    SUBCASE("flatten") {
        std::vector<Parameter> ps{{"x", random_array({2, 3, 2, 2}, rng)}};
        CHECK(gradient_relative_error(
                  ps, [](Tape& t, std::vector<Var>& v) { return against_target(t, flatten(v[0]), 12); }) < kGradTol);
    }
    SUBCASE("matmul") {
        std::vector<Parameter> ps{{"a", random_array({3, 4}, rng)}, {"b", random_array({4, 2}, rng)}};
        CHECK(gradient_relative_error(
                  ps, [](Tape& t, std::vector<Var>& v) { return against_target(t, matmul(v[0], v[1]), 11); }) <
              kGradTol);
    }
    SUBCASE("conv2d 1x1 and 3x3") {
        for (Index k : {1, 3}) {
            std::vector<Parameter> ps{{"x", random_array({2, 2, 4, 4}, rng)},
                                      {"w", random_array({3, 2, k, k}, rng)},
                                      {"b", random_array({3}, rng)}};
            CHECK(gradient_relative_error(ps, [](Tape& t, std::vector<Var>& v) {
                      return against_target(t, conv2d(v[0], v[1], v[2]), 12);
                  }) < kGradTol);
        }
    }
    SUBCASE("slot_conv2d") {
        std::vector<Parameter> ps{{"x", random_array({3, 2, 4, 4}, rng)},
                                  {"w", random_array({4, 2, 2, 3, 3}, rng)},
                                  {"b", random_array({4, 2}, rng)}};
        const std::vector<Index> slots{2, 0, 2};
        CHECK(gradient_relative_error(ps, [&](Tape& t, std::vector<Var>& v) {
                  return against_target(t, slot_conv2d(v[0], v[1], v[2], slots), 13);
              }) < kGradTol);
    }
    SUBCASE("add with and without broadcast") {
        std::vector<Parameter> ps{{"a", random_array({2, 3, 2, 2}, rng)},
                                  {"b", random_array({2, 3, 2, 2}, rng)},
                                  {"c", random_array({3, 2, 2}, rng)}};
        CHECK(gradient_relative_error(ps, [](Tape& t, std::vector<Var>& v) {
                  return against_target(t, add(add(v[0], v[1]), v[2]), 14);
              }) < kGradTol);
    }
    SUBCASE("concat_channels") {
        std::vector<Parameter> ps{{"a", random_array({2, 1, 2, 2}, rng)}, {"b", random_array({2, 3, 2, 2}, rng)}};
        CHECK(gradient_relative_error(ps, [](Tape& t, std::vector<Var>& v) {
                  const Var parts[] = {v[0], v[1]};
                  return against_target(t, concat_channels(parts), 15);
              }) < kGradTol);
    }
    SUBCASE("relu and leaky relu away from the kink") {
        std::vector<Parameter> ps{{"x", random_array({2, 2, 3, 3}, rng, -1.0f, 1.0f, 0.05f)}};
        CHECK(gradient_relative_error(ps, [](Tape& t, std::vector<Var>& v) { return against_target(t, relu(v[0]), 16); }) <
              kGradTol);
        CHECK(gradient_relative_error(
                  ps, [](Tape& t, std::vector<Var>& v) { return against_target(t, leaky_relu(v[0], 0.2f), 17); }) <
              kGradTol);
    }
    SUBCASE("avgpool and upsample") {
        std::vector<Parameter> ps{{"x", random_array({2, 2, 4, 4}, rng)}};
        CHECK(gradient_relative_error(
                  ps, [](Tape& t, std::vector<Var>& v) { return against_target(t, avgpool2x2(v[0]), 18); }) < kGradTol);
        CHECK(gradient_relative_error(ps, [](Tape& t, std::vector<Var>& v) {
                  return against_target(t, upsample_nearest2x2(v[0]), 19);
              }) < kGradTol);
    }
    SUBCASE("linear, gather, broadcast, cross-entropy") {
        std::vector<Parameter> ps{{"x", random_array({3, 4}, rng)},
                                  {"w", random_array({5, 4}, rng)},
                                  {"b", random_array({5}, rng)},
                                  {"e", random_array({4, 2}, rng)}};
        const std::vector<Index> labels{1, 4, 0};
        const std::vector<Index> rows{3, 0, 3};
        CHECK(gradient_relative_error(ps, [&](Tape& t, std::vector<Var>& v) {
                  Var spatial = broadcast_spatial(gather_rows(v[3], rows), 2, 2);
                  Var ce = softmax_cross_entropy(linear(v[0], v[1], v[2]), labels);
                  const Var parts[] = {ce, against_target(t, spatial, 20)};
                  return mean_of(parts);
              }) < kGradTol);
    }
}

TEST_CASE("two-layer linear chain matches finite differences") {
    std::mt19937_64 rng(3);
    std::vector<Parameter> ps{{"w1", random_array({4, 3}, rng)}, {"w2", random_array({3, 2}, rng)}};
    Array x = random_array({5, 4}, rng);
    CHECK(gradient_relative_error(ps, [&](Tape& t, std::vector<Var>& v) {
              return against_target(t, matmul(matmul(t.constant(x), v[0]), v[1]), 21);
          }) < kGradTol);
}

TEST_CASE("backward semantics") {
    Parameter p("p", Array::scalar(3.0f));
    Parameter unused("unused", Array({2}, {1.0f, 2.0f}));
    Tape tape;
    auto pv = tape.parameter(p);
    (void)tape.parameter(unused);
    auto loss = mse(pv, tape.constant(Array::scalar(0.0f)));
    tape.backward(loss);
    CHECK(p.grad[0] == doctest::Approx(6.0));
    CHECK(unused.grad[0] == 0.0f);
    CHECK(unused.grad[1] == 0.0f);

    CHECK_THROWS_AS(tape.backward(loss), std::logic_error);
    tape.reset();
    auto again = mse(tape.parameter(p), tape.constant(Array::scalar(0.0f)));
    CHECK_NOTHROW(tape.backward(again));
    CHECK(p.grad[0] == doctest::Approx(12.0));  // accumulates until cleared

    Tape other;
    CHECK_THROWS_AS(other.backward(other.constant(Array({2}))), ShapeError);
}

TEST_CASE("shared parameter bound twice accumulates one gradient") {
    Parameter w("w", Array({1, 1}, {2.0f}));
    Tape tape;
    auto x = tape.constant(Array({1, 1}, {3.0f}));
    auto y = matmul(matmul(x, tape.parameter(w)), tape.parameter(w));  // 3 w^2
    tape.backward(mse(y, tape.constant(Array({1, 1}))));
    // d/dw (3w^2)^2 = 36 w^3 = 288
    CHECK(w.grad[0] == doctest::Approx(288.0));
}

TEST_CASE("forward determinism") {
    std::mt19937_64 rng(5);
    Array x = random_array({2, 3, 8, 8}, rng);
    Parameter w("w", random_array({4, 3, 3, 3}, rng)), b("b", random_array({4}, rng));
    auto run = [&] {
        Tape tape;
        return leaky_relu(avgpool2x2(conv2d(tape.constant(x), tape.parameter(w), tape.parameter(b)))).value();
    };
    const Array first = run();
    const Array second = run();
    CHECK(std::memcmp(first.ptr(), second.ptr(), first.size() * sizeof(float)) == 0);
}

TEST_CASE("per-sample results do not depend on batch composition") {
    std::mt19937_64 rng(9);
    Array x = random_array({3, 4, 8, 8}, rng);
    Parameter w("w", random_array({6, 4, 3, 3}, rng)), b("b", random_array({6}, rng));
    Tape tape(false);
    auto full = conv2d(tape.constant(x), tape.parameter(w), tape.parameter(b)).value();
    auto single = conv2d(tape.constant(take0(x, 1).reshaped({1, 4, 8, 8})), tape.parameter(w), tape.parameter(b)).value();
    CHECK(std::memcmp(full.slice0(1).data(), single.ptr(), single.size() * sizeof(float)) == 0);
}

TEST_CASE("generic dispatcher") {
    Tape tape;
    const Var in[] = {tape.constant(Array({3}, {-1.0f, 0.5f, 2.0f}))};
    CHECK(op_forward(OpKind::relu, in).value() == Array({3}, {0.0f, 0.5f, 2.0f}));
    CHECK(op_forward(OpKind::leaky_relu, in, {.slope = 0.5f}).value() == Array({3}, {-0.5f, 0.5f, 2.0f}));
    CHECK_THROWS_AS(op_forward(OpKind::mse, in), std::invalid_argument);
}

TEST_CASE("adam_step") {
    SUBCASE("zero gradient leaves value and bumps t") {
        Parameter p("p", Array({2}, {1.0f, -2.0f}));
        std::vector<AdamState> st{make_adam_state(p)};
        Parameter* ps[] = {&p};
        adam_step(ps, st);
        CHECK(p.value == Array({2}, {1.0f, -2.0f}));
        CHECK(st[0].t == 1);
    }
    SUBCASE("single scalar step with lr 0.1, g 1") {
        // m = 0.1, v = 0.001, mhat = vhat = 1 -> step = 0.1 / (1 + 1e-8)
        Parameter p("p", Array::scalar(0.0f));
        std::vector<AdamState> st{make_adam_state(p, {.lr = 0.1f})};
        p.grad[0] = 1.0f;
        Parameter* ps[] = {&p};
        adam_step(ps, st);
        CHECK(p.value[0] == doctest::Approx(-0.1).epsilon(1e-6));
        CHECK(p.grad[0] == 0.0f);
    }
    SUBCASE("convex quadratic converges to its minimizer") {
        const Array target({3}, {3.0f, -1.5f, 0.25f});
        Parameter p("p", Array({3}));
        std::vector<AdamState> st{make_adam_state(p, {.lr = 0.05f})};
        Parameter* ps[] = {&p};
        for (int i = 0; i < 4000; ++i) {
            Tape tape;
            tape.backward(mse(tape.parameter(p), tape.constant(target)));
            adam_step(ps, st);
        }
        for (Index i = 0; i < 3; ++i) CHECK(std::abs(p.value[i] - target[i]) < 1e-3);
    }
}

TEST_CASE("slot_clone") {
    std::mt19937_64 rng(2);
    Parameter p("nodes", random_array({4, 2, 3}, rng), 0);
    AdamState st = make_adam_state(p);
    st.m = random_array({4, 2, 3}, rng);
    st.v = random_array({4, 2, 3}, rng, 0.0f, 1.0f);
    const Parameter before = p;
    const AdamState st_before = st;

    slot_clone(p, st, 1, 3);
    for (const auto* pair : {&p.value, &st.m, &st.v}) {
        auto src = pair->slice0(1);
        auto dst = pair->slice0(3);
        CHECK(std::memcmp(src.data(), dst.data(), src.size_bytes()) == 0);
    }
    for (Index k : {0, 1, 2}) {
        CHECK(std::memcmp(p.value.slice0(k).data(), before.value.slice0(k).data(), p.value.slice0(k).size_bytes()) == 0);
        CHECK(std::memcmp(st.m.slice0(k).data(), st_before.m.slice0(k).data(), st.m.slice0(k).size_bytes()) == 0);
    }

    // One update touching only the destination slot separates the twins.
    p.grad.slice0(3)[0] = 1.0f;
    Parameter* ps[] = {&p};
    std::vector<AdamState> sts{st};
    adam_step(ps, sts);
    CHECK(p.value.slice0(3)[0] != p.value.slice0(1)[0]);

    Parameter flat("flat", Array({4}));
    AdamState fst = make_adam_state(flat);
    CHECK_THROWS_AS(slot_clone(flat, fst, 0, 1), std::logic_error);
    CHECK_THROWS_AS(slot_clone(p, st, 0, 0), std::invalid_argument);
    CHECK_THROWS_AS(slot_clone(p, st, 0, 4), std::out_of_range);
}

TEST_CASE("slot_clone there and back is identity on both slots") {
    std::mt19937_64 rng(4);
    Parameter p("nodes", random_array({3, 5}, rng), 0);
    AdamState st = make_adam_state(p);
    slot_clone(p, st, 0, 2);
    const Array after = p.value;
    slot_clone(p, st, 2, 0);
    CHECK(p.value == after);
}

TEST_CASE("checkpoint round trip is byte exact") {
    std::mt19937_64 rng(8);
    CheckpointData data;
    data.meta = {{"K", 8}, {"L", 3}, {"paradigm", "recurrence"}, {"lr", 0.001}, {"counters", {0.5, 1.25}}};
    data.parameters.push_back({"trunk.w", random_array({4, 3, 3, 3}, rng)});
    data.parameters.push_back({"bank.b", random_array({8, 1}, rng)});
    data.optimizer.push_back({"trunk.w.m", random_array({4, 3, 3, 3}, rng)});

    std::stringstream first;
    write_checkpoint(first, data);
    const std::string bytes = first.str();
    CHECK(bytes.compare(0, 8, "DDNCKPT1") == 0);

    std::stringstream in(bytes);
    CheckpointData back = read_checkpoint(in);
    CHECK(back.meta == data.meta);
    REQUIRE(back.parameters.size() == 2);
    CHECK(back.parameters[0].data == data.parameters[0].data);
    std::stringstream second;
    write_checkpoint(second, back);
    CHECK(second.str() == bytes);

    std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(read_checkpoint(truncated), CheckpointError);
    std::stringstream bad("NOTACKPT");
    CHECK_THROWS_AS(read_checkpoint(bad), CheckpointError);
}
