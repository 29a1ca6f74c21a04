#include "ssmsnake/meb.hpp"

#include <cmath>
#include <numeric>

#include "ssmsnake/errors.hpp"

namespace ssmsnake {

void MebConfig::validate() const {
    if (d_model < 1) throw ConfigError("d_model: must be >= 1");
    if (d_inner < 1) throw ConfigError("d_inner: must be >= 1");
    if (d_state < 1) throw ConfigError("d_state: must be >= 1");
    if (conv_width < 1 || conv_width % 2 == 0) throw ConfigError("conv_width: must be odd and >= 1");
    if (depth < 1) throw ConfigError("meb_depth: must be >= 1");
}

void init_meb_params(ParamStore& s, const std::string& p, const MebConfig& cfg, std::mt19937_64& rng) {
    const double in_std = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    s.add(p + ".w_x", random_normal({cfg.d_model, cfg.d_inner}, in_std, rng));
    s.add(p + ".b_x", Tensor({cfg.d_inner}, 0.0));
    s.add(p + ".w_b", random_normal({cfg.d_model, cfg.d_state}, in_std, rng));
    s.add(p + ".b_b", Tensor({cfg.d_state}, 0.0));
    s.add(p + ".w_c", random_normal({cfg.d_model, cfg.d_state}, in_std, rng));
    s.add(p + ".b_c", Tensor({cfg.d_state}, 0.0));
    s.add(p + ".w_a", random_normal({cfg.d_model, 1}, in_std, rng));
    s.add(p + ".b_a", Tensor({1}, 1.0));
    s.add(p + ".w_d", random_normal({cfg.d_model, 1}, in_std, rng));
    s.add(p + ".b_d", Tensor({1}, 1.0));
    s.add(p + ".conv", random_normal({cfg.d_inner, cfg.conv_width}, 1.0 / std::sqrt(double(cfg.conv_width)), rng));
    s.add(p + ".d_skip", Tensor({cfg.d_inner}, 1.0));
    s.add(p + ".w_out", random_normal({cfg.d_inner, cfg.d_model}, 0.5 / std::sqrt(double(cfg.d_inner)), rng));
    s.add(p + ".b_out", Tensor({cfg.d_model}, 0.0));
}

void init_meb_stack_params(ParamStore& s, const std::string& p, const MebConfig& cfg, std::mt19937_64& rng) {
    for (std::size_t b = 0; b < cfg.depth; ++b) init_meb_params(s, p + "." + std::to_string(b), cfg, rng);
}

namespace {

Var linear(Graph& g, ParamStore& s, const std::string& w, const std::string& b, Var x) {
    return add(matmul(x, g.param(s, w)), g.param(s, b));
}

std::vector<std::size_t> iota_rows(std::size_t from, std::size_t count) {
    std::vector<std::size_t> r(count);
    std::iota(r.begin(), r.end(), from);
    return r;
}

}  // namespace

MebResult meb_forward(Graph& g, ParamStore& s, const std::string& p, const MebConfig& cfg, Var tokens, Var z_in) {
    const Shape& sh = tokens.shape();
    if (sh.size() != 2 || sh[1] != cfg.d_model)
        throw ShapeError("meb_forward: tokens must be (N," + std::to_string(cfg.d_model) + "), got " + shape_str(sh));
    const std::size_t n = sh[0];
    if (n < cfg.conv_width)
        throw ShapeError("meb_forward: N=" + std::to_string(n) + " is smaller than conv width " +
                         std::to_string(cfg.conv_width));

    Var x = linear(g, s, p + ".w_x", p + ".b_x", tokens);
    Var b = sigmoid(linear(g, s, p + ".w_b", p + ".b_b", tokens));
    Var c = sigmoid(linear(g, s, p + ".w_c", p + ".b_c", tokens));
    Var a = sigmoid(linear(g, s, p + ".w_a", p + ".b_a", tokens));
    Var d = sigmoid(linear(g, s, p + ".w_d", p + ".b_d", tokens));
    Var xt = sigmoid(circular_conv1d(x, g.param(s, p + ".conv")));

    Var z0 = z_in;
    if (!z0.valid()) {
        Var b0 = reshape(gather_rows(b, {0}), {cfg.d_state, 1});
        z0 = matmul(b0, gather_rows(xt, {0}));
    }
    Var scan = ssm_scan(xt, b, c, mul(d, a), z0);
    Var y = add(gather_rows(scan, iota_rows(0, n)), mul(xt, g.param(s, p + ".d_skip")));
    Var z_out = gather_rows(scan, iota_rows(n, cfg.d_state));
    Var out = add(linear(g, s, p + ".w_out", p + ".b_out", y), tokens);
    return {out, z_out, xt};
}

MebResult meb_stack(Graph& g, ParamStore& s, const std::string& p, const MebConfig& cfg, Var tokens, Var z_in) {
    MebResult r{tokens, z_in, Var{}};
    for (std::size_t blk = 0; blk < cfg.depth; ++blk)
        r = meb_forward(g, s, p + "." + std::to_string(blk), cfg, r.tokens, r.z);
    return r;
}

}  // namespace ssmsnake
