#include "ssmsnake/heads_losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <string>

#include "ssmsnake/errors.hpp"

namespace ssmsnake {

void SynergyConfig::validate(bool resolved_ref) const {
    if (w_d < 0 || w_s < 0 || std::abs(w_d + w_s - 1.0) > 1e-12) throw ConfigError("w_d, w_s: must be >= 0 and sum to 1");
    if (!(k_min > 0) || k_max < k_min) throw ConfigError("k_min, k_max: need 0 < k_min <= k_max");
    if (lambda_h < 0) throw ConfigError("lambda_h: must be >= 0");
    if (lambda_s < 0) throw ConfigError("lambda_s: must be >= 0");
    if (resolved_ref && !(a_ref > 0)) throw ConfigError("a_ref: must be > 0");
}

namespace {

void add_mlp(ParamStore& s, const std::string& p, std::size_t in, std::size_t hidden, std::size_t out,
             std::mt19937_64& rng) {
    s.add(p + ".w1", random_normal({in, hidden}, std::sqrt(2.0 / static_cast<double>(in)), rng));
    s.add(p + ".b1", Tensor({hidden}, 0.0));
    s.add(p + ".w2", random_normal({hidden, out}, std::sqrt(1.0 / static_cast<double>(hidden)), rng));
    s.add(p + ".b2", Tensor({out}, 0.0));
}

Var mlp(Graph& g, ParamStore& s, const std::string& p, Var x) {
    Var h = relu(add(matmul(x, g.param(s, p + ".w1")), g.param(s, p + ".b1")));
    return add(matmul(h, g.param(s, p + ".w2")), g.param(s, p + ".b2"));
}

void check_logits(Var p_d, Var p_s, const char* who) {
    if (p_d.shape() != p_s.shape() || p_d.shape().size() != 2 || p_d.shape()[0] != 1)
        throw ShapeError(std::string(who) + ": logits must both be (1,C), got " + shape_str(p_d.shape()) + " vs " +
                         shape_str(p_s.shape()));
}

}  // namespace

void init_head_params(ParamStore& s, std::size_t point_dim, std::size_t token_dim, std::size_t num_classes,
                      std::size_t hidden, std::mt19937_64& rng) {
    add_mlp(s, "heads.cd", point_dim, hidden, num_classes, rng);
    add_mlp(s, "heads.cs", token_dim, hidden, num_classes, rng);
}

Var mean_rows(Var x) {
    const std::size_t n = x.shape().at(0);
    return matmul(x.graph().constant(Tensor({1, n}, 1.0 / static_cast<double>(n))), x);
}

Var classify_detection(Graph& g, ParamStore& s, Var grid_feats) { return mlp(g, s, "heads.cd", mean_rows(grid_feats)); }

Var classify_segmentation(Graph& g, ParamStore& s, Var tokens) { return mlp(g, s, "heads.cs", mean_rows(tokens)); }

Var loss_LH(Var p_d, Var p_s, int label, const SynergyConfig& cfg) {
    check_logits(p_d, p_s, "loss_LH");
    const std::size_t c = p_d.shape()[1];
    if (label < 0 || static_cast<std::size_t>(label) >= c)
        throw ConfigError("loss_LH: label " + std::to_string(label) + " outside [0," + std::to_string(c) + ")");
    Graph& g = p_d.graph();
    Var mixed = add(scale(p_d, cfg.w_d), scale(p_s, cfg.w_s));
    Tensor onehot({1, c}, 0.0);
    onehot[static_cast<std::size_t>(label)] = -1.0;
    return sum(mul(log_softmax(mixed), g.constant(std::move(onehot))));
}

double size_penalty(double area, const SynergyConfig& cfg) {
    if (!(area > 0)) throw ConfigError("size_penalty: area must be > 0");
    if (!(cfg.a_ref > 0)) throw ConfigError("size_penalty: a_ref must be resolved to a positive area");
    return std::clamp(cfg.a_ref / area, cfg.k_min, cfg.k_max);
}

Var loss_LS(Var p_d, Var p_s, double area, const SynergyConfig& cfg) {
    check_logits(p_d, p_s, "loss_LS");
    Graph& g = p_s.graph();
    Var target = softmax(g.constant(p_d.value()));
    return scale(sum(mul(target, log_softmax(p_s))), -size_penalty(area, cfg));
}

double curvature_loss(const Contour& contour) { return curvature_penalty(contour.span()); }

Var evolution_loss(Var pred, std::span<const Point> target) {
    const Shape& sh = pred.shape();
    if (sh.size() != 2 || sh[1] != 2 || sh[0] != target.size())
        throw ShapeError("evolution_loss: prediction " + shape_str(sh) + " vs " + std::to_string(target.size()) +
                         " target points");
    Tensor t({target.size(), 2});
    for (std::size_t i = 0; i < target.size(); ++i) {
        t.at(i, 0) = target[i].x;
        t.at(i, 1) = target[i].y;
    }
    Var diff = sub(pred, pred.graph().constant(std::move(t)));
    return scale(sum(abs(diff)), 1.0 / static_cast<double>(target.size()));
}

double total_loss(const LossComponents& c, const SynergyConfig& cfg) {
    const std::pair<const char*, double> parts[] = {
        {"l_evol_macro", c.l_evol_macro}, {"l_evol_micro", c.l_evol_micro}, {"l_h", c.l_h}, {"l_s", c.l_s}};
    for (const auto& [name, v] : parts)
        if (!std::isfinite(v)) throw NumericalError(std::string("total_loss: component ") + name + " is not finite");
    return c.l_evol_macro + c.l_evol_micro + cfg.lambda_h * c.l_h + cfg.lambda_s * c.l_s;
}

Var total_loss(Var macro, Var micro, Var l_h, Var l_s, const SynergyConfig& cfg) {
    Var t = add(macro, micro);
    if (l_h.valid()) t = add(t, scale(l_h, cfg.lambda_h));
    if (l_s.valid()) t = add(t, scale(l_s, cfg.lambda_s));
    return t;
}

void write_train_log_header(std::ostream& out) { out << "step,l_evol_macro,l_evol_micro,l_h,l_s,total,lr\n"; }

void write_train_log_row(std::ostream& out, const TrainLogRow& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", static_cast<long long>(r.step),
                  r.loss.l_evol_macro, r.loss.l_evol_micro, r.loss.l_h, r.loss.l_s, r.total, r.lr);
    out << buf;
}

}  // namespace ssmsnake
