#include <cmath>
#include <random>
#include <cstring>
#include <functional>
#include <sstream>

#include "doctest.h"
#include "ssmsnake/diffcore.hpp"
#include "ssmsnake/errors.hpp"
#include "op_cases.hpp"

using namespace ssmsnake;

using namespace opcases;

TEST_SUITE("diffcore") {

TEST_CASE("op examples") {
    Graph g;
    CHECK(sigmoid(g.constant(Tensor::scalar(0.0))).item() == 0.5);
    const Var sm = softmax(g.constant(Tensor({4}, 0.0)));
    for (double v : sm.value().data()) CHECK(v == 0.25);
    // taps at offsets -1, 0, +1 with weights 1, 2, 3
    const Var y = circular_conv1d(g.constant(Tensor({4, 1}, {1, 0, 0, 0})), g.constant(Tensor({1, 3}, {1, 2, 3})));
    CHECK(y.value().storage() == std::vector<double>{2, 1, 0, 3});
}

TEST_CASE("backward examples") {
    {
        Graph g;
        Var x = g.input(Tensor::scalar(3.0));
        g.backward(mul(x, x));
        CHECK(g.grad(x)[0] == 6.0);
    }
    {
        Graph g;
        Var x = g.input(Tensor::scalar(0.0));
        g.backward(sigmoid(x));
        CHECK(g.grad(x)[0] == 0.25);
    }
    {
        // mean l1 over N points: sum |diff| / N has gradient sign(diff)/N
        std::mt19937_64 rng(3);
        const std::size_t n = 6;
        Tensor pred = random_normal({n, 2}, 1.0, rng), target = random_normal({n, 2}, 1.0, rng);
        Graph g;
        Var p = g.input(pred);
        g.backward(scale(sum(abs(sub(p, g.constant(target)))), 1.0 / n));
        const Tensor gp = g.grad(p);
        for (std::size_t i = 0; i < 2 * n; ++i) {
            const double sign = pred[i] > target[i] ? 1.0 : -1.0;
            CHECK(gp[i] == doctest::Approx(sign / n).epsilon(1e-15));
            const double h = 1e-5;
            auto f = [&](double d) {
                double acc = 0;
                for (std::size_t k = 0; k < 2 * n; ++k) acc += std::abs((k == i ? pred[k] + d : pred[k]) - target[k]);
                return acc / n;
            };
            CHECK(std::abs((f(h) - f(-h)) / (2 * h) - gp[i]) < 1e-8);
        }
    }
}

TEST_CASE("backward requires a scalar") {
    Graph g;
    Var x = g.input(Tensor({2}, {1.0, 2.0}));
    CHECK_THROWS_AS(g.backward(mul(x, x)), Error);
}

TEST_CASE("unreachable parameters get zero gradient") {
    ParamStore s;
    s.add("used", Tensor({2}, {1.0, 2.0}));
    s.add("unused", Tensor({2}, {3.0, 4.0}));
    s.grad("unused").fill(7.0);
    Graph g;
    Var u = g.param(s, "used");
    g.param(s, "unused");
    g.backward(sum(mul(u, u)));
    CHECK(s.grad("used")[1] == 4.0);
    CHECK(s.grad("unused")[0] == 0.0);
    CHECK(s.grad("unused")[1] == 0.0);
}

TEST_CASE("check_gradients: linear layer, constant function") {
    GradFragment linear{[](ParamStore& s, std::uint64_t seed) {
                            std::mt19937_64 r(seed);
                            s.add("w", random_normal({4, 3}, 1.0, r));
                            s.add("b", random_normal({3}, 1.0, r));
                        },
                        [](Graph& g, ParamStore& s) {
                            std::mt19937_64 r(99);
                            Var x = g.constant(random_normal({5, 4}, 1.0, r));
                            return weighted_sum(g, add(matmul(x, g.param(s, "w")), g.param(s, "b")), 3);
                        }};
    const GradCheckResult lr = check_gradients(linear, 0);
    CHECK(lr.all_finite);
    CHECK(lr.max_rel_error < 1e-6);
    CHECK(lr.checked == 15);

    GradFragment constant{[](ParamStore& s, std::uint64_t seed) {
                              std::mt19937_64 r(seed);
                              s.add("w", random_normal({3}, 1.0, r));
                          },
                          [](Graph& g, ParamStore& s) {
                              g.param(s, "w");
                              return sum(g.constant(Tensor({2}, {1.0, 2.0})));
                          }};
    const GradCheckResult cr = check_gradients(constant, 0);
    CHECK(cr.max_abs_grad == 0.0);
    CHECK(cr.max_rel_error == 0.0);
}

TEST_CASE("check_gradients rejects oversize fragments") {
    GradFragment big{[](ParamStore& s, std::uint64_t) { s.add("w", Tensor({50001}, 0.0)); },
                     [](Graph& g, ParamStore& s) { return sum(g.param(s, "w")); }};
    CHECK_THROWS_AS(check_gradients(big, 0), Error);
}

TEST_CASE("every base op passes the gradient check on 10 seeds") {
    for (const OpCase& c : op_cases()) {
        double worst = 0;
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            const GradCheckResult r = check_gradients(fragment_for(c), seed);
            REQUIRE(r.all_finite);
            worst = std::max(worst, r.max_rel_error);
        }
        INFO(op_name(c.kind));
        CHECK(worst < 1e-5);
    }
}

TEST_CASE("extended ops pass the gradient check") {
    GradFragment f{[](ParamStore& s, std::uint64_t seed) {
                       std::mt19937_64 r(seed);
                       s.add("a", random_normal({3, 4}, 1.0, r));
                       s.add("b", random_normal({3, 4}, 1.0, r));
                       s.add("img", random_normal({2, 4, 4}, 1.0, r));
                       s.add("w", random_normal({2, 2, 3, 3}, 1.0, r));
                   },
                   [](Graph& g, ParamStore& s) {
                       Var a = g.param(s, "a"), b = g.param(s, "b");
                       Var t = add(tanh(a), scale(exp(scale(b, 0.3)), 0.5));
                       t = add(t, sub(log_softmax(a), add_scalar(b, 2.0)));
                       Var up = conv2d(upsample2x(g.param(s, "img")), g.param(s, "w"), Var{}, Conv2dSpec{2, 1, 1});
                       return add(weighted_sum(g, reshape(t, {12}), 5), weighted_sum(g, up, 6));
                   }};
    for (std::uint64_t seed = 0; seed < 5; ++seed) CHECK(check_gradients(f, seed).max_rel_error < 1e-5);
}

TEST_CASE("ssm_scan gradient check") {
    GradFragment f{[](ParamStore& s, std::uint64_t seed) {
                       std::mt19937_64 r(seed);
                       s.add("x", random_normal({6, 3}, 1.0, r));
                       s.add("b", random_normal({6, 2}, 1.0, r));
                       s.add("c", random_normal({6, 2}, 1.0, r));
                       s.add("g", random_uniform({6, 1}, 0.2, 0.9, r));
                       s.add("z", random_normal({2, 3}, 1.0, r));
                   },
                   [](Graph& g, ParamStore& s) {
                       return weighted_sum(g, ssm_scan(g.param(s, "x"), g.param(s, "b"), g.param(s, "c"),
                                                       g.param(s, "g"), g.param(s, "z")), 8);
                   }};
    for (std::uint64_t seed = 0; seed < 10; ++seed) CHECK(check_gradients(f, seed).max_rel_error < 1e-5);
}

TEST_CASE("circular_conv1d is exactly shift-equivariant") {
    std::mt19937_64 rng(2);
    const std::size_t n = 11, c = 3;
    const Tensor x = random_normal({n, c}, 1.0, rng), k = random_normal({c, 5}, 1.0, rng);
    Graph g;
    const Tensor y = circular_conv1d(g.constant(x), g.constant(k)).value();
    for (std::size_t s = 0; s < n; ++s) {
        Tensor xr({n, c});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t ch = 0; ch < c; ++ch) xr.at((i + s) % n, ch) = x.at(i, ch);
        const Tensor yr = circular_conv1d(g.constant(xr), g.constant(k)).value();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t ch = 0; ch < c; ++ch) REQUIRE(yr.at((i + s) % n, ch) == y.at(i, ch));
    }
}

TEST_CASE("circular_conv1d rejects N below kernel width") {
    Graph g;
    CHECK_THROWS_AS(circular_conv1d(g.constant(Tensor({3, 1}, 1.0)), g.constant(Tensor({1, 5}, 1.0))), ShapeError);
}

TEST_CASE("softmax sums to one and ignores constant shifts") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor l = random_normal({3, 7}, 5.0, rng);
        Graph g;
        const Tensor p = softmax(g.constant(l)).value();
        const Tensor q = softmax(add_scalar(g.constant(l), 123.456)).value();
        for (std::size_t r = 0; r < 3; ++r) {
            double s = 0;
            for (std::size_t c = 0; c < 7; ++c) {
                s += p.at(r, c);
                CHECK(std::abs(p.at(r, c) - q.at(r, c)) < 1e-9);
            }
            CHECK(std::abs(s - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("shape mismatch names the op and the shapes") {
    Graph g;
    try {
        matmul(g.constant(Tensor({2, 3})), g.constant(Tensor({4, 5})));
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find("(2,3)") != std::string::npos);
        CHECK(msg.find("(4,5)") != std::string::npos);
    }
}

TEST_CASE("non-finite values are rejected") {
    Graph g;
    CHECK_THROWS_AS(g.input(Tensor({1}, {std::nan("")})), NumericalError);
    CHECK_THROWS_AS(log(g.constant(Tensor({1}, {-1.0}))), Error);
    CHECK_THROWS_AS(exp(g.constant(Tensor({1}, {1e6}))), NumericalError);
}

TEST_CASE("forward and backward are bitwise deterministic") {
    auto run = [] {
        ParamStore s;
        std::mt19937_64 r(8);
        s.add("w", random_normal({2, 3, 3, 3}, 1.0, r));
        s.add("x", random_normal({3, 9, 9}, 1.0, r));
        Graph g;
        Var y = conv2d(g.param(s, "x"), g.param(s, "w"), Var{}, Conv2dSpec{1, 2, 2});
        Var loss = mean(mul(sigmoid(y), y));
        g.backward(loss);
        return std::make_pair(loss.item(), s.grad("w"));
    };
    const auto a = run(), b = run();
    CHECK(std::memcmp(&a.first, &b.first, sizeof(double)) == 0);
    CHECK(a.second == b.second);
}

TEST_CASE("optimizer schedule endpoints and zero-gradient step") {
    AdamWConfig cfg;
    cfg.total_steps = 50;
    AdamW opt(cfg);
    CHECK(opt.current_lr() == 1e-4);
    CHECK(cosine_lr(1e-4, 1e-6, 49, 50) == doctest::Approx(1e-6).epsilon(1e-12));
    for (std::int64_t t = 0; t < 50; ++t) {
        const double lr = cosine_lr(1e-4, 1e-6, t, 50);
        CHECK(lr <= 1e-4);
        CHECK(lr >= 1e-6 - 1e-18);
    }
    cfg.weight_decay = 0.0;
    AdamW plain(cfg);
    ParamStore s;
    s.add("w", Tensor({3}, {1.0, -2.0, 3.0}));
    const Tensor before = s.value("w");
    s.zero_grad();
    s.set_grads_fresh(true);
    plain.step(s);
    CHECK(s.value("w") == before);
}

TEST_CASE("optimizer rejects stale gradients") {
    AdamW opt(AdamWConfig{});
    ParamStore s;
    s.add("w", Tensor({1}, 1.0));
    CHECK_THROWS_AS(opt.step(s), Error);
    Graph g;
    g.backward(sum(mul(g.param(s, "w"), g.param(s, "w"))));
    opt.step(s);
    CHECK_THROWS_AS(opt.step(s), Error);
}

TEST_CASE("param store round-trips bit-exactly and rejects bad files") {
    std::mt19937_64 r(1);
    ParamStore s;
    s.add("b.second", random_normal({2, 3}, 1.0, r));
    s.add("a.first", random_normal({4}, 1.0, r));
    std::stringstream ss;
    s.write(ss);
    const std::string bytes = ss.str();
    CHECK(bytes.rfind("SSMSNAKE1\n", 0) == 0);
    // sorted: "a.first" comes first
    CHECK(bytes.substr(10 + 8, 7) == "a.first");
    std::stringstream in(bytes);
    CHECK(ParamStore::read(in) == s);
    std::stringstream bad("NOTMAGIC!!");
    CHECK_THROWS_AS(ParamStore::read(bad), FormatError);
    std::stringstream trunc(bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(ParamStore::read(trunc), FormatError);
    CHECK_THROWS_AS(ParamStore::load("/nonexistent/params.bin"), MissingArtifact);
}

}
