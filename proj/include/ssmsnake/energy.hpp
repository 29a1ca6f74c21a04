#pragma once
// Energy shape prior maps: exact distance transform, decay transforms,
// smoothing, edge potential and their composition; plus a small learnable
// predictor trained with the Charbonnier loss.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ssmsnake/diffcore.hpp"
#include "ssmsnake/grid.hpp"

namespace ssmsnake {

enum class DecayKind { Lin, Exp, Log };

const char* decay_kind_name(DecayKind k);
DecayKind parse_decay_kind(const std::string& s);

struct EnergyConfig {
    DecayKind kind = DecayKind::Exp;
    double lambda_exp = 0.02;
    double alpha_log = 0.0067383749;  // (e - 1) / 255: Log reaches 0 at Norm = 255
    double sigma_gauss = 2.0;
    double lambda_edge = 16.0;
    double grad_floor = 1e-3;

    // Throws ConfigError naming the offending field.
    void validate() const;
};

using EnergyMap = RealGrid;  // values in [0, 255]

// Exact Euclidean distance from each pixel center to the nearest set pixel.
RealGrid distance_field(const Mask& boundary);

// Min-max normalization to [0,255] followed by the Lin/Exp/Log decay.
RealGrid decay_transform(const RealGrid& dist, const EnergyConfig& cfg);

// Mask pixels with at least one 4-neighbour outside the mask (or outside the image).
Mask mask_boundary(const Mask& mask);

// Separable Gaussian with radius ceil(3 sigma) and replicated borders; sigma = 0 is the identity.
RealGrid gaussian_blur(const RealGrid& in, double sigma);

// lambda_edge * max(|grad I|, floor)^-0.5 on the image scaled to [0,1],
// central differences with replicated borders.
RealGrid edge_potential(const Grid<std::uint8_t>& image, const EnergyConfig& cfg);

// clamp(blur(decay(distance(union of boundaries))) + edge_potential, 0, 255).
EnergyMap compose_espm(const Grid<std::uint8_t>& image, std::span<const Mask> masks, const EnergyConfig& cfg);

// mean sqrt((a-b)^2 + eps^2)
double charbonnier(std::span<const double> pred, std::span<const double> target, double eps = 1e-3);
Var charbonnier_loss(Var pred, Var target, double eps = 1e-3);

// Encoder-decoder: three stride-2 3x3 conv blocks (8, 16, 32 channels), three
// nearest-upsample + conv blocks with additive skips, 1x1 head, sigmoid * 255.
class EnergyNet {
public:
    static constexpr std::size_t kSize = 128;

    // Registers parameters under "energy.*".
    static void init_params(ParamStore& store, std::mt19937_64& rng);
    // image (1,128,128) in [0,1] -> (1,128,128) in [0,255].
    static Var forward(Graph& g, ParamStore& store, Var image);
    // Convenience wrapper over a raw 8-bit image.
    static EnergyMap predict(ParamStore& store, const Grid<std::uint8_t>& image);
};

}  // namespace ssmsnake
