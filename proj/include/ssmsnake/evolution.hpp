#pragma once
// Two-stage contour evolution: box -> coarse polygon through a perceptron over
// grid features, then iterative per-vertex refinement through the MEB stack.

#include <cstdint>
#include <span>
#include <vector>

#include "ssmsnake/diffcore.hpp"
#include "ssmsnake/energy.hpp"
#include "ssmsnake/features.hpp"
#include "ssmsnake/geometry.hpp"
#include "ssmsnake/heads_losses.hpp"
#include "ssmsnake/meb.hpp"
#include "ssmsnake/params.hpp"
#include "ssmsnake/synthcorpus.hpp"

namespace ssmsnake {

struct EvolutionConfig {
    std::size_t n_points = 128;
    std::size_t iterations = 3;
    std::size_t n_init = 40;
    std::size_t grid_m = 8;
    std::size_t macro_hidden = 128;
    bool carry_state = true;
    // The resampled macro contour enters the micro stage as a constant.
    bool detach_stages = true;
    // Each micro iteration starts from a constant copy of the previous one.
    bool detach_iterations = true;
    // Curvature weight of the resampled GT targets.
    double target_beta = 4.0;
    // Micro iteration k is weighted by growth^k in the loss (weights rescaled to sum to the count).
    double iteration_weight_growth = 5.0;

    void validate() const;
};

struct ModelConfig {
    EvolutionConfig evo;
    MebConfig meb;
    std::size_t num_classes = kNumClasses;
    std::size_t head_hidden = 32;

    void validate() const;
};

struct SnakeModel {
    ModelConfig cfg;
    ParamStore params;

    // Random init; the final layers of both offset heads start at zero so an
    // untrained model returns the inscribed-ellipse polygon.
    static SnakeModel create(const ModelConfig& cfg, std::uint64_t seed);
};

// Snapshots: init polygon, macro output, then one per micro iteration.
struct Trajectory {
    std::vector<std::vector<Point>> snapshots;
};

struct MacroOut {
    Var contour;     // (n_init, 2)
    Var grid_feats;  // (M*M, 66)
};
MacroOut macro_evolve(Graph& g, SnakeModel& model, Var F, const BBox& box);

struct MicroOut {
    Var contour;  // (N, 2)
    Var z;
    Var tokens;   // (N, d_model) after the MEB stack
};
// z_in invalid means "first iteration" (state seeded from token 0).
MicroOut micro_step(Graph& g, SnakeModel& model, Var F, const BBox& box, Var contour, Var z_in);

// (n x N) matrix R with R * P == resample_uniform(P, n) for the current P.
Tensor uniform_resample_matrix(std::span<const Point> pts, std::size_t n);

struct EvolveOut {
    Var macro;               // (n_init, 2)
    std::vector<Var> micro;  // one (n_points, 2) per iteration
    Var grid_feats;
    Var tokens;  // final-iteration tokens, or the embedded tokens when iterations == 0
    Trajectory trajectory;
};
// iterations overrides cfg.evo.iterations when >= 0.
EvolveOut evolve(Graph& g, SnakeModel& model, Var F, const BBox& box, int iterations = -1);

struct InstanceTarget {
    int label = 0;
    std::vector<Point> gt_init;    // curvature-weighted, n_init points
    std::vector<Point> gt_points;  // curvature-weighted, n_points points
    double area = 0.0;             // rasterized GT pixels
    bool usable = false;
};

struct PreparedScene {
    const Scene* scene = nullptr;
    EnergyMap energy;
    Tensor input;  // (2,128,128)
    std::vector<InstanceTarget> targets;
};

PreparedScene prepare_scene(const Scene& scene, EnergyMap energy, const EvolutionConfig& evo);

// Median rasterized GT area over all instances.
double median_instance_area(std::span<const PreparedScene> scenes);

struct SceneLoss {
    LossComponents parts;  // averaged over usable instances
    double total = 0.0;
    std::size_t instances = 0;
};

// Builds the per-scene loss on g for the given boxes (one per instance).
SceneLoss scene_loss(Graph& g, SnakeModel& model, const PreparedScene& ps, std::span<const BBox> boxes,
                     const SynergyConfig& syn, Var* total_out);

struct TrainStepResult {
    LossComponents parts;  // mean over the batch
    double total = 0.0;
    double lr = 0.0;
};

// Accumulates gradients over the batch (each scene weighted 1/batch) and
// applies one optimizer step. boxes[i] are the boxes for batch[i].
TrainStepResult train_step(SnakeModel& model, AdamW& opt, std::span<const PreparedScene* const> batch,
                           std::span<const std::vector<BBox>> boxes, const SynergyConfig& syn);

// Forward-only evolution of every box in a scene.
std::vector<Trajectory> predict_scene(SnakeModel& model, const Tensor& input, std::span<const BBox> boxes,
                                      int iterations = -1);

}  // namespace ssmsnake
