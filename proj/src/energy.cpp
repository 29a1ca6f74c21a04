#include "ssmsnake/energy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ssmsnake/errors.hpp"

namespace ssmsnake {

const char* decay_kind_name(DecayKind k) {
    switch (k) {
        case DecayKind::Lin: return "lin";
        case DecayKind::Exp: return "exp";
        case DecayKind::Log: return "log";
    }
    return "?";
}

DecayKind parse_decay_kind(const std::string& s) {
    if (s == "lin" || s == "Lin") return DecayKind::Lin;
    if (s == "exp" || s == "Exp") return DecayKind::Exp;
    if (s == "log" || s == "Log") return DecayKind::Log;
    throw ConfigError("energy_kind: expected lin|exp|log, got '" + s + "'");
}

void EnergyConfig::validate() const {
    if (!(lambda_exp > 0)) throw ConfigError("lambda_exp: must be > 0");
    if (!(alpha_log > 0)) throw ConfigError("alpha_log: must be > 0");
    if (!(sigma_gauss >= 0)) throw ConfigError("sigma_gauss: must be >= 0");
    if (!(lambda_edge >= 0)) throw ConfigError("lambda_edge: must be >= 0");
    if (!(grad_floor > 0)) throw ConfigError("grad_floor: must be > 0");
}

namespace {

// 1-D squared distance transform of a sampled function (lower envelope of parabolas).
void dt1d(const double* f, std::size_t n, double* d, std::vector<std::size_t>& v, std::vector<double>& z) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    v.assign(n, 0);
    z.assign(n + 1, 0.0);
    std::size_t k = 0;
    // Skip leading infinite samples: parabolas rooted at +inf never contribute.
    std::size_t first = 0;
    while (first < n && !std::isfinite(f[first])) ++first;
    if (first == n) {
        std::fill(d, d + n, inf);
        return;
    }
    v[0] = first;
    z[0] = -inf;
    z[1] = inf;
    for (std::size_t q = first + 1; q < n; ++q) {
        if (!std::isfinite(f[q])) continue;
        const double qd = static_cast<double>(q);
        double s;
        for (;;) {
            const double vk = static_cast<double>(v[k]);
            s = ((f[q] + qd * qd) - (f[v[k]] + vk * vk)) / (2 * qd - 2 * vk);
            if (s <= z[k] && k > 0) {
                --k;
                continue;
            }
            break;
        }
        if (s <= z[k]) {
            // k == 0 and new parabola dominates everywhere
            v[0] = q;
            z[0] = -inf;
            z[1] = inf;
            continue;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = inf;
    }
    k = 0;
    for (std::size_t q = 0; q < n; ++q) {
        const double qd = static_cast<double>(q);
        while (z[k + 1] < qd) ++k;
        const double dv = qd - static_cast<double>(v[k]);
        d[q] = dv * dv + f[v[k]];
    }
}

}  // namespace

RealGrid distance_field(const Mask& boundary) {
    const std::size_t h = boundary.height, w = boundary.width;
    if (std::none_of(boundary.data.begin(), boundary.data.end(), [](std::uint8_t b) { return b != 0; }))
        throw Error("distance_field: boundary set is empty");
    constexpr double inf = std::numeric_limits<double>::infinity();
    RealGrid sq(h, w);
    for (std::size_t i = 0; i < h * w; ++i) sq.data[i] = boundary.data[i] ? 0.0 : inf;
    std::vector<std::size_t> v;
    std::vector<double> z;
    std::vector<double> col(h), out(std::max(h, w));
    for (std::size_t c = 0; c < w; ++c) {
        for (std::size_t r = 0; r < h; ++r) col[r] = sq(r, c);
        dt1d(col.data(), h, out.data(), v, z);
        for (std::size_t r = 0; r < h; ++r) sq(r, c) = out[r];
    }
    for (std::size_t r = 0; r < h; ++r) {
        dt1d(&sq.data[r * w], w, out.data(), v, z);
        std::copy_n(out.data(), w, &sq.data[r * w]);
    }
    for (double& x : sq.data) x = std::sqrt(x);
    return sq;
}

RealGrid decay_transform(const RealGrid& dist, const EnergyConfig& cfg) {
    RealGrid out(dist.height, dist.width);
    if (dist.data.empty()) return out;
    const auto [mn_it, mx_it] = std::minmax_element(dist.data.begin(), dist.data.end());
    const double mn = *mn_it, mx = *mx_it;
    const double range = mx - mn;
    for (std::size_t i = 0; i < dist.size(); ++i) {
        const double norm = range > 0 ? 255.0 * (dist.data[i] - mn) / range : 0.0;
        double e = 0;
        switch (cfg.kind) {
            case DecayKind::Lin: e = 255.0 - norm; break;
            case DecayKind::Exp: e = 255.0 * std::exp(-cfg.lambda_exp * norm); break;
            case DecayKind::Log: e = 255.0 * (1.0 - std::log(1.0 + cfg.alpha_log * norm)); break;
        }
        out.data[i] = std::max(0.0, e);
    }
    return out;
}

Mask mask_boundary(const Mask& mask) {
    const std::size_t h = mask.height, w = mask.width;
    Mask b(h, w, 0);
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            if (!mask(r, c)) continue;
            const bool edge = r == 0 || c == 0 || r + 1 == h || c + 1 == w || !mask(r - 1, c) || !mask(r + 1, c) ||
                              !mask(r, c - 1) || !mask(r, c + 1);
            b(r, c) = edge ? 1 : 0;
        }
    return b;
}

RealGrid gaussian_blur(const RealGrid& in, double sigma) {
    if (sigma <= 0) return in;
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * radius + 1);
    double s = 0;
    for (int i = -radius; i <= radius; ++i) s += (k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma)));
    for (double& x : k) x /= s;
    const int h = static_cast<int>(in.height), w = static_cast<int>(in.width);
    RealGrid tmp(in.height, in.width), out(in.height, in.width);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            double acc = 0;
            for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * in.data[r * w + std::clamp(c + i, 0, w - 1)];
            tmp.data[r * w + c] = acc;
        }
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            double acc = 0;
            for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp.data[std::clamp(r + i, 0, h - 1) * w + c];
            out.data[r * w + c] = acc;
        }
    return out;
}

RealGrid edge_potential(const Grid<std::uint8_t>& image, const EnergyConfig& cfg) {
    const std::size_t h = image.height, w = image.width;
    RealGrid out(h, w);
    auto px = [&](std::size_t r, std::size_t c) { return image(r, c) / 255.0; };
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
            const double gx = 0.5 * (px(r, std::min(c + 1, w - 1)) - px(r, c == 0 ? 0 : c - 1));
            const double gy = 0.5 * (px(std::min(r + 1, h - 1), c) - px(r == 0 ? 0 : r - 1, c));
            const double mag = std::max(std::hypot(gx, gy), cfg.grad_floor);
            out(r, c) = cfg.lambda_edge / std::sqrt(mag);
        }
    return out;
}

EnergyMap compose_espm(const Grid<std::uint8_t>& image, std::span<const Mask> masks, const EnergyConfig& cfg) {
    cfg.validate();
    if (masks.empty()) throw Error("compose_espm: no instance masks");
    Mask boundary(image.height, image.width, 0);
    bool any = false;
    for (const Mask& m : masks) {
        if (m.height != image.height || m.width != image.width) throw ShapeError("compose_espm: mask size differs from image");
        const Mask b = mask_boundary(m);
        for (std::size_t i = 0; i < b.size(); ++i)
            if (b.data[i]) {
                boundary.data[i] = 1;
                any = true;
            }
    }
    if (!any) throw Error("compose_espm: all instance masks are empty");
    RealGrid e = gaussian_blur(decay_transform(distance_field(boundary), cfg), cfg.sigma_gauss);
    if (cfg.lambda_edge > 0) {
        const RealGrid edge = edge_potential(image, cfg);
        for (std::size_t i = 0; i < e.size(); ++i) e.data[i] += edge.data[i];
    }
    for (double& v : e.data) v = std::clamp(v, 0.0, 255.0);
    return e;
}

double charbonnier(std::span<const double> pred, std::span<const double> target, double eps) {
    if (pred.size() != target.size() || pred.empty()) throw ShapeError("charbonnier: size mismatch");
    double s = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        s += std::sqrt(d * d + eps * eps);
    }
    return s / static_cast<double>(pred.size());
}

Var charbonnier_loss(Var pred, Var target, double eps) {
    Var d = sub(pred, target);
    return mean(sqrt(add_scalar(mul(d, d), eps * eps)));
}

// ---------------------------------------------------------------------------

namespace {

struct ConvDef {
    const char* name;
    std::size_t cin, cout, k;
};

constexpr ConvDef kEnergyConvs[] = {
    {"energy.down1", 1, 8, 3},  {"energy.down2", 8, 16, 3}, {"energy.down3", 16, 32, 3},
    {"energy.up1", 32, 16, 3},  {"energy.up2", 16, 8, 3},   {"energy.up3", 8, 8, 3},
    {"energy.head", 8, 1, 1},
};

Var conv_block(Graph& g, ParamStore& s, const char* name, Var x, std::size_t stride) {
    const std::string base(name);
    Var w = g.param(s, base + ".w");
    Var b = g.param(s, base + ".b");
    const std::size_t k = w.value().dim(2);
    return conv2d(x, w, b, Conv2dSpec{stride, 1, k / 2});
}

}  // namespace

void EnergyNet::init_params(ParamStore& store, std::mt19937_64& rng) {
    for (const ConvDef& d : kEnergyConvs) {
        const double fan_in = static_cast<double>(d.cin * d.k * d.k);
        store.add(std::string(d.name) + ".w", random_normal({d.cout, d.cin, d.k, d.k}, std::sqrt(2.0 / fan_in), rng));
        store.add(std::string(d.name) + ".b", Tensor({d.cout}, 0.0));
    }
}

Var EnergyNet::forward(Graph& g, ParamStore& s, Var image) {
    const Shape& sh = image.shape();
    if (sh != Shape{1, kSize, kSize})
        throw ShapeError("energy_net: expected input (1,128,128), got " + shape_str(sh));
    Var e1 = relu(conv_block(g, s, "energy.down1", image, 2));  // 8 x 64
    Var e2 = relu(conv_block(g, s, "energy.down2", e1, 2));     // 16 x 32
    Var e3 = relu(conv_block(g, s, "energy.down3", e2, 2));     // 32 x 16
    Var d1 = relu(add(conv_block(g, s, "energy.up1", upsample2x(e3), 1), e2));  // 16 x 32
    Var d2 = relu(add(conv_block(g, s, "energy.up2", upsample2x(d1), 1), e1));  // 8 x 64
    Var d3 = relu(conv_block(g, s, "energy.up3", upsample2x(d2), 1));           // 8 x 128
    return scale(sigmoid(conv_block(g, s, "energy.head", d3, 1)), 255.0);
}

EnergyMap EnergyNet::predict(ParamStore& store, const Grid<std::uint8_t>& image) {
    if (image.height != kSize || image.width != kSize)
        throw ShapeError("energy_net: expected 128x128 image, got " + std::to_string(image.height) + "x" +
                         std::to_string(image.width));
    Graph g;
    Tensor in({1, kSize, kSize});
    for (std::size_t i = 0; i < image.size(); ++i) in[i] = image.data[i] / 255.0;
    Var out = forward(g, store, g.constant(std::move(in)));
    EnergyMap e(kSize, kSize);
    std::copy(out.value().data().begin(), out.value().data().end(), e.data.begin());
    return e;
}

}  // namespace ssmsnake
