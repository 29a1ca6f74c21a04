#pragma once
// Central finite differences through one micro step, over every micro/MEB parameter.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "ssmsnake/evolution.hpp"

namespace microcheck {

using namespace ssmsnake;

struct Result {
    double worst = 0.0;
    std::size_t checked = 0;
};

// N = 16 toy model with randomized offset head so every upstream parameter is reachable.
inline Result run(std::uint64_t seed) {
    ModelConfig cfg;
    cfg.evo.n_points = 16;
    cfg.evo.n_init = 8;
    cfg.evo.macro_hidden = 16;
    cfg.meb.d_model = 8;
    cfg.meb.d_inner = 8;
    cfg.meb.d_state = 4;
    cfg.meb.depth = 2;
    SnakeModel m = SnakeModel::create(cfg, seed);
    std::mt19937_64 rng(seed + 1);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (double& v : m.params.value("micro.offset.w").data()) v = 0.3 * nd(rng);
    for (double& v : m.params.value("micro.offset.b").data()) v = 0.1 * nd(rng);
    Tensor f({kPointFeatureDim - 2, 128, 128});
    std::uniform_real_distribution<double> u(-1, 1);
    for (std::size_t c = 0; c < f.shape()[0]; ++c) {
        const double a = u(rng) * 0.2, b = u(rng) * 0.2, p = u(rng) * 3;
        for (std::size_t r = 0; r < 128; ++r)
            for (std::size_t x = 0; x < 128; ++x) f[(c * 128 + r) * 128 + x] = std::sin(a * double(x) + b * double(r) + p);
    }
    const BBox box{0, 64, 64, 24, 20};
    const std::vector<Point> c = resample_uniform(init_polygon_from_box(box, 8).vertices(), 16);
    std::vector<Point> target;
    for (Point p : c) target.push_back({p.x + 3.0, p.y - 2.0});
    auto loss = [&](Graph& g) {
        Var z0 = g.constant(Tensor({4, 8}, 0.1));
        return evolution_loss(micro_step(g, m, g.constant(f), box, g.constant(points_tensor(c)), z0).contour, target);
    };
    m.params.zero_grad();
    {
        Graph g;
        g.backward(loss(g));
    }
    Result res;
    for (const std::string& name : m.params.names()) {
        if (name.rfind("micro.", 0) != 0 && name.rfind("meb.", 0) != 0) continue;
        const Tensor analytic = m.params.grad(name);
        Tensor& v = m.params.value(name);
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double orig = v[i], h = 1e-6;
            v[i] = orig + h;
            Graph gp;
            const double fp = loss(gp).item();
            v[i] = orig - h;
            Graph gm;
            const double fm = loss(gm).item();
            v[i] = orig;
            const double num = (fp - fm) / (2 * h);
            res.worst = std::max(res.worst, std::fabs(analytic[i] - num) / std::max(1e-6, std::fabs(num)));
            ++res.checked;
        }
    }
    return res;
}

}  // namespace microcheck
