#pragma once
// Detection/segmentation classifiers and every training loss term.

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>

#include "ssmsnake/diffcore.hpp"
#include "ssmsnake/geometry.hpp"

namespace ssmsnake {

struct SynergyConfig {
    bool enabled = true;
    double w_d = 0.5;
    double w_s = 0.5;
    double a_ref = 0.0;  // <= 0 means "corpus median instance area", resolved at training start
    double k_min = 0.5;
    double k_max = 4.0;
    double lambda_h = 0.5;
    double lambda_s = 0.5;

    // With resolved_ref, also requires a_ref > 0.
    void validate(bool resolved_ref = false) const;
};

// heads.cd.* (66 -> hidden -> C) and heads.cs.* (d_model -> hidden -> C).
void init_head_params(ParamStore& store, std::size_t point_dim, std::size_t token_dim, std::size_t num_classes,
                      std::size_t hidden, std::mt19937_64& rng);

// Mean over rows: (N,D) -> (1,D).
Var mean_rows(Var x);

// Logits (1,C) from mean-pooled grid features.
Var classify_detection(Graph& g, ParamStore& store, Var grid_feats);
// Logits (1,C) from mean-pooled final-iteration tokens.
Var classify_segmentation(Graph& g, ParamStore& store, Var tokens);

// -log softmax(w_d p_d + w_s p_s)[label].
Var loss_LH(Var p_d, Var p_s, int label, const SynergyConfig& cfg);
// K(area) * sum(-softmax(p_d) * log softmax(p_s)); p_d enters as a constant.
Var loss_LS(Var p_d, Var p_s, double area, const SynergyConfig& cfg);
// clamp(a_ref / area, k_min, k_max).
double size_penalty(double area, const SynergyConfig& cfg);

// Sum of kappa^3 over vertices.
double curvature_loss(const Contour& contour);

// sum_i (|dx_i| + |dy_i|) / N against fixed targets.
Var evolution_loss(Var pred, std::span<const Point> target);

struct LossComponents {
    double l_evol_macro = 0.0;
    double l_evol_micro = 0.0;  // summed over iterations
    double l_h = 0.0;
    double l_s = 0.0;
};

// macro + micro + lambda_h L_H + lambda_s L_S (detector term is identically zero).
double total_loss(const LossComponents& c, const SynergyConfig& cfg);
Var total_loss(Var macro, Var micro, Var l_h, Var l_s, const SynergyConfig& cfg);

struct TrainLogRow {
    std::int64_t step = 0;
    LossComponents loss;
    double total = 0.0;
    double lr = 0.0;
};
void write_train_log_header(std::ostream& out);
void write_train_log_row(std::ostream& out, const TrainLogRow& row);

}  // namespace ssmsnake
