#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "ssmsnake/energy.hpp"
#include "ssmsnake/errors.hpp"
#include "ssmsnake/params.hpp"

using namespace ssmsnake;

namespace {

Mask random_sparse(std::mt19937_64& rng, std::size_t h, std::size_t w, double p) {
    std::bernoulli_distribution b(p);
    Mask m(h, w);
    for (auto& v : m.data) v = b(rng);
    if (std::none_of(m.data.begin(), m.data.end(), [](std::uint8_t v) { return v; })) m(h / 2, w / 3) = 1;
    return m;
}

RealGrid brute_distance(const Mask& b) {
    RealGrid d(b.height, b.width, std::numeric_limits<double>::infinity());
    for (std::size_t r = 0; r < b.height; ++r)
        for (std::size_t c = 0; c < b.width; ++c)
            for (std::size_t i = 0; i < b.height; ++i)
                for (std::size_t j = 0; j < b.width; ++j)
                    if (b(i, j)) {
                        const double dr = double(r) - double(i), dc = double(c) - double(j);
                        d(r, c) = std::min(d(r, c), std::sqrt(dr * dr + dc * dc));
                    }
    return d;
}

Mask rect_mask(std::size_t h, std::size_t w, std::size_t r0, std::size_t c0, std::size_t r1, std::size_t c1) {
    Mask m(h, w);
    for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) m(r, c) = 1;
    return m;
}

EnergyConfig with_kind(DecayKind k) {
    EnergyConfig c;
    c.kind = k;
    return c;
}

}  // namespace

TEST_SUITE("energy") {

TEST_CASE("distance_field examples") {
    Mask b(8, 8);
    b(0, 0) = 1;
    const RealGrid d = distance_field(b);
    CHECK(d(0, 0) == 0.0);
    CHECK(d(4, 3) == 5.0);
    CHECK_THROWS_AS(distance_field(Mask(4, 4)), Error);
}

TEST_CASE("distance_field equals brute force") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t h = 8 + trial % 25, w = 5 + (trial * 7) % 28;
        const Mask b = random_sparse(rng, h, w, trial % 2 ? 0.02 : 0.2);
        REQUIRE(distance_field(b) == brute_distance(b));
    }
    const Mask big = random_sparse(rng, 64, 64, 0.01);
    CHECK(distance_field(big) == brute_distance(big));
}

TEST_CASE("decay endpoints") {
    RealGrid d(1, 3);
    d.data = {0.0, 5.0, 10.0};
    for (DecayKind k : {DecayKind::Lin, DecayKind::Exp, DecayKind::Log}) CHECK(decay_transform(d, with_kind(k)).data[0] == 255.0);
    CHECK(decay_transform(d, with_kind(DecayKind::Lin)).data[2] == 0.0);
    CHECK(decay_transform(d, with_kind(DecayKind::Log)).data[2] == doctest::Approx(0.0).epsilon(1e-9));
    RealGrid half(1, 2);
    half.data = {0.0, 255.0};
    RealGrid mid(1, 3);
    mid.data = {0.0, 128.0, 255.0};
    CHECK(decay_transform(mid, with_kind(DecayKind::Lin)).data[1] == 127.0);
    CHECK(decay_transform(mid, with_kind(DecayKind::Exp)).data[1] == 255.0 * std::exp(-0.02 * 128.0));
    CHECK(std::abs(decay_transform(mid, with_kind(DecayKind::Exp)).data[1] - 19.71) < 0.01);
    RealGrid flat(2, 2, 3.0);
    for (double v : decay_transform(flat, with_kind(DecayKind::Lin)).data) CHECK(v == 255.0);
}

TEST_CASE("decay is monotone non-increasing in distance") {
    std::mt19937_64 rng(2);
    for (DecayKind k : {DecayKind::Lin, DecayKind::Exp, DecayKind::Log}) {
        for (int trial = 0; trial < 10; ++trial) {
            const RealGrid d = distance_field(random_sparse(rng, 32, 32, 0.03));
            const RealGrid e = decay_transform(d, with_kind(k));
            for (std::size_t i = 0; i < d.size(); ++i)
                for (std::size_t j = 0; j < d.size(); j += 7)
                    if (d.data[i] < d.data[j]) REQUIRE(e.data[i] >= e.data[j]);
        }
    }
}

TEST_CASE("mask boundary uses 4-neighbours") {
    const Mask m = rect_mask(10, 10, 2, 2, 7, 8);
    const Mask b = mask_boundary(m);
    CHECK(b(2, 2) == 1);
    CHECK(b(4, 2) == 1);
    CHECK(b(4, 4) == 0);
    CHECK(b(0, 0) == 0);
    const Mask full = mask_boundary(Mask(3, 3, 1));
    CHECK(full(1, 1) == 0);
    CHECK(full(0, 1) == 1);
}

TEST_CASE("compose_espm degenerates to the decay transform") {
    EnergyConfig cfg;
    cfg.lambda_edge = 0;
    cfg.sigma_gauss = 0;
    const Mask m = rect_mask(32, 32, 5, 6, 20, 25);
    const std::vector<Mask> masks{m};
    const EnergyMap e = compose_espm(Mask(32, 32, 100), masks, cfg);
    CHECK(e == decay_transform(distance_field(mask_boundary(m)), cfg));
    CHECK_THROWS_AS(compose_espm(Mask(32, 32), std::vector<Mask>{Mask(32, 32)}, cfg), Error);
}

TEST_CASE("edge potential on a constant image hits the floor") {
    EnergyConfig cfg;
    cfg.lambda_edge = 0.5;
    const RealGrid e = edge_potential(Mask(16, 16, 77), cfg);
    for (double v : e.data) CHECK(v == doctest::Approx(0.5 / std::sqrt(1e-3)).epsilon(1e-12));
}

TEST_CASE("adjacent rectangles: the shared edge is the global maximum") {
    EnergyConfig cfg;
    cfg.lambda_edge = 0;
    const Mask a = rect_mask(48, 48, 10, 8, 38, 24), b = rect_mask(48, 48, 10, 24, 38, 40);
    const EnergyMap e = compose_espm(Mask(48, 48, 0), std::vector<Mask>{a, b}, cfg);
    const double mx = *std::max_element(e.data.begin(), e.data.end());
    double shared = 0;
    for (std::size_t r = 10; r < 38; ++r) shared = std::max({shared, e(r, 23), e(r, 24)});
    CHECK(shared == mx);
    // the middle of the shared edge beats the middle of an outer edge
    CHECK(e(24, 23) > e(24, 8));
}

TEST_CASE("espm stays in range") {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> px(0, 255);
    for (double lam : {0.0, 1.0, 16.0, 1000.0}) {
        EnergyConfig cfg;
        cfg.lambda_edge = lam;
        Mask img(32, 32);
        for (auto& v : img.data) v = static_cast<std::uint8_t>(px(rng));
        const EnergyMap e = compose_espm(img, std::vector<Mask>{rect_mask(32, 32, 3, 3, 12, 20)}, cfg);
        for (double v : e.data) {
            REQUIRE(std::isfinite(v));
            REQUIRE(v >= 0.0);
            REQUIRE(v <= 255.0);
        }
    }
}

TEST_CASE("espm commutes with translation on the interior") {
    // The object and its shifted copy sit at mirror positions so the min-max
    // normalisation sees the same range.
    const std::size_t n = 64;
    auto scene = [&](std::size_t c0) {
        Mask img(n, n, 90);
        const Mask m = rect_mask(n, n, 20, c0, 44, c0 + 12);
        for (std::size_t i = 0; i < m.size(); ++i)
            if (m.data[i]) img.data[i] = 170;
        return std::make_pair(img, m);
    };
    const std::size_t left = 14, right = n - left - 12, shift = right - left;
    const auto [ia, ma] = scene(left);
    const auto [ib, mb] = scene(right);
    EnergyConfig cfg;
    cfg.lambda_edge = 1.0;
    const EnergyMap ea = compose_espm(ia, std::vector<Mask>{ma}, cfg), eb = compose_espm(ib, std::vector<Mask>{mb}, cfg);
    // replicated borders reach one kernel radius inward
    const std::size_t margin = static_cast<std::size_t>(std::ceil(3 * cfg.sigma_gauss)) + 1;
    for (std::size_t r = margin; r + margin < n; ++r)
        for (std::size_t c = margin; c + shift + margin < n; ++c) {
            INFO(r, ",", c);
            REQUIRE(std::abs(eb(r, c + shift) - ea(r, c)) < 1e-6);
        }
}

TEST_CASE("gaussian blur") {
    RealGrid g(9, 9, 4.0);
    CHECK(gaussian_blur(g, 0.0) == g);
    for (double v : gaussian_blur(g, 1.5).data) CHECK(v == doctest::Approx(4.0).epsilon(1e-12));
    RealGrid imp(21, 21);
    imp(10, 10) = 1.0;
    const RealGrid b = gaussian_blur(imp, 2.0);
    double s = 0;
    for (double v : b.data) s += v;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(b(10, 9) == doctest::Approx(b(9, 10)).epsilon(1e-15));
}

TEST_CASE("charbonnier examples") {
    const std::vector<double> a{1, 2, 3}, b{2, 3, 4};
    CHECK(charbonnier(a, a) == 1e-3);
    CHECK(charbonnier(a, b) == doctest::Approx(std::sqrt(1 + 1e-6)).epsilon(1e-15));
    Graph g;
    CHECK(charbonnier_loss(g.constant(Tensor({3}, a)), g.constant(Tensor({3}, a))).item() == 1e-3);
}

TEST_CASE("charbonnier gradient") {
    GradFragment f{[](ParamStore& s, std::uint64_t seed) {
                       std::mt19937_64 r(seed);
                       s.add("p", random_normal({10}, 2.0, r));
                   },
                   [](Graph& g, ParamStore& s) {
                       std::mt19937_64 r(3);
                       return charbonnier_loss(g.param(s, "p"), g.constant(random_normal({10}, 2.0, r)));
                   }};
    for (std::uint64_t seed = 0; seed < 5; ++seed) CHECK(check_gradients(f, seed).max_rel_error < 1e-5);
}

TEST_CASE("energy net shapes and range") {
    ParamStore s;
    std::mt19937_64 rng(0);
    EnergyNet::init_params(s, rng);
    std::uniform_int_distribution<int> px(0, 255);
    Mask img(128, 128);
    for (auto& v : img.data) v = static_cast<std::uint8_t>(px(rng));
    const EnergyMap e = EnergyNet::predict(s, img);
    CHECK(e.height == 128);
    for (double v : e.data) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 255.0);
    }
    CHECK(EnergyNet::predict(s, img) == e);
    CHECK_THROWS_AS(EnergyNet::predict(s, Mask(64, 64)), ShapeError);
}

TEST_CASE("energy config validation and kind names") {
    EnergyConfig c;
    c.validate();
    c.lambda_exp = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK(parse_decay_kind("log") == DecayKind::Log);
    CHECK(std::string(decay_kind_name(DecayKind::Exp)) == "exp");
    CHECK_THROWS_AS(parse_decay_kind("cubic"), ConfigError);
}

}
