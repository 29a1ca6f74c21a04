#include "ssmsnake/features.hpp"

#include <cmath>
#include <string>

#include "ssmsnake/errors.hpp"

namespace ssmsnake {

void init_pyramid_params(ParamStore& store, std::mt19937_64& rng) {
    for (const PyramidBranch& b : kPyramidBranches) {
        store.add(std::string(b.name) + ".w", random_normal({b.channels, 2, 3, 3}, std::sqrt(1.0 / 18.0), rng));
        store.add(std::string(b.name) + ".b", Tensor({b.channels}, 0.0));
    }
}

Tensor feature_input(const Image8& image, const EnergyMap& energy) {
    if (image.height != kFeatureSize || image.width != kFeatureSize || energy.height != kFeatureSize ||
        energy.width != kFeatureSize)
        throw ShapeError("pyramid_extract: inputs must be 128x128");
    Tensor t({2, kFeatureSize, kFeatureSize});
    const std::size_t plane = kFeatureSize * kFeatureSize;
    for (std::size_t i = 0; i < plane; ++i) {
        t[i] = image.data[i] / 255.0;
        t[plane + i] = energy.data[i] / 255.0;
    }
    return t;
}

Var pyramid_extract(Graph& g, ParamStore& store, Var input) {
    if (input.shape() != Shape{2, kFeatureSize, kFeatureSize})
        throw ShapeError("pyramid_extract: expected input (2,128,128), got " + shape_str(input.shape()));
    std::vector<Var> branches;
    for (const PyramidBranch& b : kPyramidBranches) {
        Var w = g.param(store, std::string(b.name) + ".w");
        Var bias = g.param(store, std::string(b.name) + ".b");
        branches.push_back(conv2d(input, w, bias, Conv2dSpec{1, b.dilation, b.dilation}));
    }
    return concat(branches, 0);
}

Var bilinear_feature(Var F, Var points) { return bilinear_sample(F, points); }

Var point_features(Var F, Var points, const BBox& box) {
    Graph& g = F.graph();
    Var sampled = bilinear_sample(F, points);
    Var center = g.constant(Tensor({2}, {box.cx, box.cy}));
    Var inv = g.constant(Tensor({2}, {1.0 / box.w, 1.0 / box.h}));
    Var rel = mul(sub(points, center), inv);
    return concat({sampled, rel}, 1);
}

std::vector<Point> grid_points(const BBox& box, std::size_t m) {
    if (m < 2) throw ConfigError("grid_m: must be >= 2");
    std::vector<Point> pts;
    pts.reserve(m * m);
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < m; ++c)
            pts.push_back({box.x_min() + (c + 0.5) * box.w / static_cast<double>(m),
                           box.y_min() + (r + 0.5) * box.h / static_cast<double>(m)});
    return pts;
}

Var grid_features(Var F, const BBox& box, std::size_t m) {
    const std::vector<Point> pts = grid_points(box, m);
    return point_features(F, F.graph().constant(points_tensor(pts)), box);
}

Tensor points_tensor(std::span<const Point> pts) {
    Tensor t({pts.size(), 2});
    for (std::size_t i = 0; i < pts.size(); ++i) {
        t.at(i, 0) = pts[i].x;
        t.at(i, 1) = pts[i].y;
    }
    return t;
}

std::vector<Point> tensor_points(const Tensor& t) {
    std::vector<Point> pts(t.dim(0));
    for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = {t.at(i, 0), t.at(i, 1)};
    return pts;
}

}  // namespace ssmsnake
