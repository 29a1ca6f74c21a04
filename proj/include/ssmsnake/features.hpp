#pragma once
// Dilated-convolution pyramid over (image, energy) and per-point feature
// assembly for the coarse and fine evolution stages.

#include <random>
#include <vector>

#include "ssmsnake/diffcore.hpp"
#include "ssmsnake/energy.hpp"
#include "ssmsnake/geometry.hpp"
#include "ssmsnake/imageio.hpp"

namespace ssmsnake {

inline constexpr std::size_t kFeatureSize = 128;
inline constexpr std::size_t kFeatureChannels = 64;
inline constexpr std::size_t kPointFeatureDim = kFeatureChannels + 2;

struct PyramidBranch {
    const char* name;
    std::size_t dilation;
    std::size_t channels;
};
inline constexpr PyramidBranch kPyramidBranches[] = {
    {"features.d1", 1, 16}, {"features.d2", 2, 24}, {"features.d4", 4, 24}};

// Registers "features.*" (3x3 kernels over 2 input channels).
void init_pyramid_params(ParamStore& store, std::mt19937_64& rng);

// (2,128,128) from an 8-bit image and an energy map, both scaled to [0,1].
Tensor feature_input(const Image8& image, const EnergyMap& energy);

// input (2,128,128) -> F (64,128,128). Linear, zero padding.
Var pyramid_extract(Graph& g, ParamStore& store, Var input);

// F (C,H,W), points (N,2) -> (N,C).
Var bilinear_feature(Var F, Var points);

// (N,66): sampled channels then ((x-cx)/w, (y-cy)/h).
Var point_features(Var F, Var points, const BBox& box);

// Centers of an M x M partition of the box, row-major (y outer, x inner).
std::vector<Point> grid_points(const BBox& box, std::size_t m);

// (M*M, 66) in row-major grid order.
Var grid_features(Var F, const BBox& box, std::size_t m);

Tensor points_tensor(std::span<const Point> pts);
std::vector<Point> tensor_points(const Tensor& t);

}  // namespace ssmsnake
