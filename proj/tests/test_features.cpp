#include <cmath>
#include <random>

#include "doctest.h"
#include "ssmsnake/errors.hpp"
#include "ssmsnake/features.hpp"
#include "ssmsnake/params.hpp"

using namespace ssmsnake;

namespace {

ParamStore pyramid(std::uint64_t seed, bool zero_bias = false) {
    ParamStore s;
    std::mt19937_64 rng(seed);
    init_pyramid_params(s, rng);
    if (!zero_bias)
        for (const auto& b : kPyramidBranches) s.value(std::string(b.name) + ".b") = random_normal({b.channels}, 0.3, rng);
    return s;
}

Tensor random_input(std::mt19937_64& rng) { return random_uniform({2, 128, 128}, 0.0, 1.0, rng); }

double fval(const Tensor& F, std::size_t c, std::size_t r, std::size_t x) { return F[(c * 128 + r) * 128 + x]; }

}  // namespace

TEST_SUITE("features") {

TEST_CASE("pyramid layout") {
    ParamStore s = pyramid(0, true);
    std::size_t total = 0;
    for (const auto& b : kPyramidBranches) {
        CHECK(s.value(std::string(b.name) + ".w").shape() == Shape{b.channels, 2, 3, 3});
        total += b.channels;
    }
    CHECK(total == kFeatureChannels);
    Graph g;
    const Var F = pyramid_extract(g, s, g.constant(Tensor({2, 128, 128}, 0.0)));
    CHECK(F.shape() == Shape{64, 128, 128});
    for (double v : F.value().data()) REQUIRE(v == 0.0);
    CHECK_THROWS_AS(pyramid_extract(g, s, g.constant(Tensor({2, 64, 64}, 0.0))), ShapeError);
    CHECK_THROWS_AS(pyramid_extract(g, s, g.constant(Tensor({1, 128, 128}, 0.0))), ShapeError);
}

TEST_CASE("pyramid is translation-equivariant on the interior") {
    ParamStore s = pyramid(1);
    std::mt19937_64 rng(2);
    const Tensor in = random_input(rng);
    const std::size_t dy = 3, dx = 7;
    Tensor shifted({2, 128, 128}, 0.0);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t r = dy; r < 128; ++r)
            for (std::size_t x = dx; x < 128; ++x) shifted[(c * 128 + r) * 128 + x] = in[(c * 128 + r - dy) * 128 + x - dx];
    Graph g;
    const Tensor a = pyramid_extract(g, s, g.constant(in)).value();
    const Tensor b = pyramid_extract(g, s, g.constant(shifted)).value();
    for (std::size_t c = 0; c < 64; ++c)
        for (std::size_t r = 5 + dy; r + 5 < 128; ++r)
            for (std::size_t x = 5 + dx; x + 5 < 128; ++x)
                REQUIRE(std::abs(fval(b, c, r, x) - fval(a, c, r - dy, x - dx)) < 1e-9);
}

TEST_CASE("dilation-4 receptive field spans 9 pixels") {
    ParamStore s = pyramid(3);
    std::mt19937_64 rng(4);
    const Tensor in = random_input(rng);
    Tensor occluded({2, 128, 128}, 0.0);
    const std::size_t cr = 60, cc = 70;
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t r = cr - 4; r <= cr + 4; ++r)
            for (std::size_t x = cc - 4; x <= cc + 4; ++x) occluded[(c * 128 + r) * 128 + x] = in[(c * 128 + r) * 128 + x];
    Graph g;
    const Tensor a = pyramid_extract(g, s, g.constant(in)).value();
    const Tensor b = pyramid_extract(g, s, g.constant(occluded)).value();
    for (std::size_t c = 40; c < 64; ++c) CHECK(fval(a, c, cr, cc) == fval(b, c, cr, cc));
    // one pixel further out matters
    Tensor cut = occluded;
    for (std::size_t c = 0; c < 2; ++c) cut[(c * 128 + cr) * 128 + cc + 4] = 0.0;
    const Tensor d = pyramid_extract(g, s, g.constant(cut)).value();
    bool changed = false;
    for (std::size_t c = 40; c < 64; ++c) changed = changed || fval(d, c, cr, cc) != fval(a, c, cr, cc);
    CHECK(changed);
}

TEST_CASE("bilinear_feature examples") {
    std::mt19937_64 rng(5);
    const Tensor F = random_normal({4, 6, 7}, 1.0, rng);
    auto at = [&](std::size_t c, std::size_t r, std::size_t x) { return F[(c * 6 + r) * 7 + x]; };
    Graph g;
    const Var f = g.constant(F);
    // grid site (row 2, col 3) sits at (3.5, 2.5)
    const Tensor site = bilinear_feature(f, g.constant(Tensor({1, 2}, {3.5, 2.5}))).value();
    for (std::size_t c = 0; c < 4; ++c) CHECK(site[c] == at(c, 2, 3));
    const Tensor mid = bilinear_feature(f, g.constant(Tensor({1, 2}, {4.0, 3.0}))).value();
    for (std::size_t c = 0; c < 4; ++c)
        CHECK(mid[c] == doctest::Approx((at(c, 2, 3) + at(c, 2, 4) + at(c, 3, 3) + at(c, 3, 4)) / 4).epsilon(1e-14));
    std::uniform_real_distribution<double> ux(0.5, 6.5), uy(0.5, 5.5);
    for (int trial = 0; trial < 50; ++trial) {
        const double x = ux(rng), y = uy(rng);
        const Tensor v = bilinear_feature(f, g.constant(Tensor({1, 2}, {x, y}))).value();
        const double u = x - 0.5, w = y - 0.5;
        const std::size_t x0 = std::min<std::size_t>(std::size_t(u), 5), y0 = std::min<std::size_t>(std::size_t(w), 4);
        const double fx = u - double(x0), fy = w - double(y0);
        for (std::size_t c = 0; c < 4; ++c) {
            const double ref = (1 - fx) * (1 - fy) * at(c, y0, x0) + fx * (1 - fy) * at(c, y0, x0 + 1) +
                               (1 - fx) * fy * at(c, y0 + 1, x0) + fx * fy * at(c, y0 + 1, x0 + 1);
            CHECK(std::abs(v[c] - ref) < 1e-12);
        }
    }
    // out of bounds clamps to the border
    const Tensor out = bilinear_feature(f, g.constant(Tensor({1, 2}, {-10.0, 100.0}))).value();
    for (std::size_t c = 0; c < 4; ++c) CHECK(out[c] == at(c, 5, 0));
}

TEST_CASE("bilinear gradient w.r.t. the point") {
    std::mt19937_64 rng(6);
    const Tensor F = random_normal({3, 8, 8}, 1.0, rng);
    std::uniform_int_distribution<int> cell(0, 6);
    std::uniform_real_distribution<double> frac(0.1, 0.9);
    for (int trial = 0; trial < 30; ++trial) {
        const double x = cell(rng) + 0.5 + frac(rng), y = cell(rng) + 0.5 + frac(rng);
        auto f = [&](double px, double py) {
            Graph g;
            return sum(bilinear_feature(g.constant(F), g.constant(Tensor({1, 2}, {px, py})))).item();
        };
        Graph g;
        Var p = g.input(Tensor({1, 2}, {x, y}));
        g.backward(sum(bilinear_feature(g.constant(F), p)));
        const Tensor gp = g.grad(p);
        const double h = 1e-6;
        const double nx = (f(x + h, y) - f(x - h, y)) / (2 * h), ny = (f(x, y + h) - f(x, y - h)) / (2 * h);
        CHECK(std::abs(gp[0] - nx) <= 1e-5 * std::max(1.0, std::abs(nx)));
        CHECK(std::abs(gp[1] - ny) <= 1e-5 * std::max(1.0, std::abs(ny)));
    }
}

TEST_CASE("point_features coordinates") {
    Graph g;
    const Var F = g.constant(Tensor({64, 128, 128}, 1.0));
    const BBox box{0, 40, 30, 20, 10};
    const Tensor pf = point_features(F, g.constant(Tensor({2, 2}, {40, 30, 50, 35})), box).value();
    CHECK(pf.shape() == Shape{2, 66});
    CHECK(pf.at(0, 64) == 0.0);
    CHECK(pf.at(0, 65) == 0.0);
    CHECK(pf.at(1, 64) == 0.5);
    CHECK(pf.at(1, 65) == 0.5);
    const BBox moved{0, 47, 21, 20, 10};
    const Tensor pm = point_features(F, g.constant(Tensor({2, 2}, {47, 21, 57, 26})), moved).value();
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(pm.at(i, 64) == pf.at(i, 64));
        CHECK(pm.at(i, 65) == pf.at(i, 65));
    }
}

TEST_CASE("point_features channels follow jointly translated content") {
    std::mt19937_64 rng(7);
    const Tensor F = random_normal({64, 128, 128}, 1.0, rng);
    const std::size_t dy = 4, dx = 9;
    Tensor G({64, 128, 128}, 0.0);
    for (std::size_t c = 0; c < 64; ++c)
        for (std::size_t r = dy; r < 128; ++r)
            for (std::size_t x = dx; x < 128; ++x) G[(c * 128 + r) * 128 + x] = F[(c * 128 + r - dy) * 128 + x - dx];
    Graph g;
    const Tensor pts = random_uniform({16, 2}, 20.0, 100.0, rng);
    Tensor moved = pts;
    for (std::size_t i = 0; i < 16; ++i) {
        moved.at(i, 0) += dx;
        moved.at(i, 1) += dy;
    }
    const BBox box{0, 60, 60, 80, 80}, mbox{0, 60 + dx, 60 + dy, 80, 80};
    const Tensor a = point_features(g.constant(F), g.constant(pts), box).value();
    const Tensor b = point_features(g.constant(G), g.constant(moved), mbox).value();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-12);
}

TEST_CASE("grid_features") {
    const std::vector<Point> p = grid_points(BBox{0, 0, 0, 4, 4}, 2);
    REQUIRE(p.size() == 4);
    CHECK(p[0] == Point{-1, -1});
    CHECK(p[1] == Point{1, -1});
    CHECK(p[2] == Point{-1, 1});
    CHECK(p[3] == Point{1, 1});
    CHECK_THROWS_AS(grid_points(BBox{0, 0, 0, 4, 4}, 1), ConfigError);
    Graph g;
    const Var F = g.constant(Tensor({64, 128, 128}, 0.5));
    CHECK(grid_features(F, BBox{0, 64, 64, 30, 20}, 8).size() == 64 * 66);
    const BBox big{0, 64, 50, 40, 24}, small{0, 64, 50, 20, 12};
    const auto outer = grid_points(big, 8), inner = grid_points(small, 8);
    double xmin = 1e9, xmax = -1e9, ymin = 1e9, ymax = -1e9;
    for (Point q : outer) {
        xmin = std::min(xmin, q.x);
        xmax = std::max(xmax, q.x);
        ymin = std::min(ymin, q.y);
        ymax = std::max(ymax, q.y);
    }
    for (Point q : inner) {
        CHECK(q.x > xmin);
        CHECK(q.x < xmax);
        CHECK(q.y > ymin);
        CHECK(q.y < ymax);
    }
}

TEST_CASE("feature_input") {
    Image8 img(128, 128, 255);
    EnergyMap e(128, 128, 51.0);
    const Tensor t = feature_input(img, e);
    CHECK(t.shape() == Shape{2, 128, 128});
    CHECK(t[0] == 1.0);
    CHECK(t[128 * 128] == 0.2);
    CHECK_THROWS_AS(feature_input(Image8(64, 64), EnergyMap(64, 64)), ShapeError);
}

TEST_CASE("points tensor round trip") {
    const std::vector<Point> p{{1, 2}, {3.5, -4}};
    CHECK(tensor_points(points_tensor(p)) == p);
}

}
