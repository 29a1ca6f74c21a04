#pragma once
// Independent brute-force references shared by unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ssmsnake/geometry.hpp"
#include "ssmsnake/grid.hpp"
#include "ssmsnake/meb.hpp"
#include "ssmsnake/params.hpp"

namespace oracle {

using ssmsnake::Mask;
using ssmsnake::Point;
using ssmsnake::RealGrid;

inline RealGrid brute_distance(const Mask& b) {
    RealGrid d(b.height, b.width, std::numeric_limits<double>::infinity());
    std::vector<std::pair<long, long>> set;
    for (std::size_t i = 0; i < b.height; ++i)
        for (std::size_t j = 0; j < b.width; ++j)
            if (b(i, j)) set.push_back({long(i), long(j)});
    for (std::size_t r = 0; r < b.height; ++r)
        for (std::size_t c = 0; c < b.width; ++c)
            for (auto [i, j] : set) {
                const double dr = double(long(r) - i), dc = double(long(c) - j);
                d(r, c) = std::min(d(r, c), std::sqrt(dr * dr + dc * dc));
            }
    return d;
}

// Pixel-set IoU and Dice; two empty masks score 1.
inline std::pair<double, double> iou_dice(const Mask& a, const Mask& b) {
    std::vector<std::size_t> sa, sb, inter, uni;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a.data[i]) sa.push_back(i);
        if (b.data[i]) sb.push_back(i);
    }
    std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(inter));
    std::set_union(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(uni));
    if (uni.empty()) return {1.0, 1.0};
    return {double(inter.size()) / double(uni.size()),
            2.0 * double(inter.size()) / double(sa.size() + sb.size())};
}

// Interior boundary: set pixels with a 4-neighbour that is unset or off-image.
inline Mask boundary(const Mask& m) {
    Mask b(m.height, m.width);
    const long h = long(m.height), w = long(m.width);
    for (long r = 0; r < h; ++r)
        for (long c = 0; c < w; ++c) {
            if (!m(r, c)) continue;
            const long nb[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
            for (auto& q : nb)
                if (q[0] < 0 || q[1] < 0 || q[0] >= h || q[1] >= w || !m(q[0], q[1])) b(r, c) = 1;
        }
    return b;
}

// Pixels within 4-connected (Manhattan) distance n-1 of the boundary.
inline Mask band(const Mask& m, int n) {
    const Mask b = boundary(m);
    Mask out(m.height, m.width);
    const long h = long(m.height), w = long(m.width);
    for (long r = 0; r < h; ++r)
        for (long c = 0; c < w; ++c)
            for (long i = 0; i < h && !out(r, c); ++i)
                for (long j = 0; j < w; ++j)
                    if (b(i, j) && std::abs(i - r) + std::abs(j - c) <= n - 1) {
                        out(r, c) = 1;
                        break;
                    }
    return out;
}

inline double boundf(const Mask& pred, const Mask& gt) {
    double acc = 0;
    for (int n = 1; n <= 5; ++n) acc += iou_dice(band(pred, n), band(gt, n)).second;
    return acc / 5.0;
}

struct BestPairing {
    double cost = std::numeric_limits<double>::infinity();
    std::size_t shift = 0;
    bool reversed = false;
};

// Exhaustive search over all N shifts and both orientations.
inline BestPairing exhaustive_pairing(std::span<const Point> pred, std::span<const Point> gt) {
    const std::size_t n = pred.size();
    BestPairing best;
    for (int rev = 0; rev < 2; ++rev)
        for (std::size_t s = 0; s < n; ++s) {
            double cost = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t j = rev ? (s + n - i % n) % n : (i + s) % n;
                cost += ssmsnake::distance(pred[i], gt[j]);
            }
            if (cost < best.cost) best = {cost, s, rev == 1};
        }
    return best;
}

struct MebRef {
    std::vector<std::vector<double>> out;  // N x d_model
    std::vector<std::vector<double>> z;    // d_state x d_inner
    std::vector<std::vector<double>> xt;   // N x d_inner
};

inline double sig(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// One block computed with plain loops; the state is the closed-form sum
// Z_n = (prod_{j<=n} g_j) Z_0 + sum_i (prod_{j=i..n} g_j) B_i X~_i^T.
// causal=true replaces the circular conv by a strictly causal one (taps at
// offsets <= 0 only).
inline MebRef meb_unroll(const ssmsnake::ParamStore& s, const std::string& p, const ssmsnake::MebConfig& cfg,
                         const std::vector<std::vector<double>>& t, const std::vector<std::vector<double>>* z0,
                         bool causal = false) {
    const std::size_t n = t.size(), dm = cfg.d_model, di = cfg.d_inner, ds = cfg.d_state, kw = cfg.conv_width;
    auto proj = [&](const std::string& wn, const std::string& bn, std::size_t k, std::size_t col) {
        const auto& w = s.value(p + wn);
        double v = s.value(p + bn)[col];
        for (std::size_t m = 0; m < dm; ++m) v += t[k][m] * w.at(m, col);
        return v;
    };
    std::vector<std::vector<double>> x(n, std::vector<double>(di)), b(n, std::vector<double>(ds)),
        c(n, std::vector<double>(ds));
    std::vector<double> gate(n);
    for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t q = 0; q < di; ++q) x[k][q] = proj(".w_x", ".b_x", k, q);
        for (std::size_t q = 0; q < ds; ++q) {
            b[k][q] = sig(proj(".w_b", ".b_b", k, q));
            c[k][q] = sig(proj(".w_c", ".b_c", k, q));
        }
        gate[k] = sig(proj(".w_a", ".b_a", k, 0)) * sig(proj(".w_d", ".b_d", k, 0));
    }
    MebRef r;
    r.xt.assign(n, std::vector<double>(di));
    const auto& kern = s.value(p + ".conv");
    const long half = long(kw / 2);
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t q = 0; q < di; ++q) {
            double v = 0;
            for (std::size_t tap = 0; tap < kw; ++tap) {
                const long off = long(tap) - half;
                if (causal && off > 0) continue;
                const std::size_t src = std::size_t((long(k) + off + long(n) * 4) % long(n));
                v += kern.at(q, tap) * x[src][q];
            }
            r.xt[k][q] = sig(v);
        }
    std::vector<std::vector<double>> init(ds, std::vector<double>(di, 0.0));
    if (z0)
        init = *z0;
    else
        for (std::size_t a = 0; a < ds; ++a)
            for (std::size_t q = 0; q < di; ++q) init[a][q] = b[0][a] * r.xt[0][q];
    r.out.assign(n, std::vector<double>(dm));
    const auto& dskip = s.value(p + ".d_skip");
    const auto& wout = s.value(p + ".w_out");
    const auto& bout = s.value(p + ".b_out");
    for (std::size_t k = 0; k < n; ++k) {
        std::vector<std::vector<double>> zk(ds, std::vector<double>(di, 0.0));
        double prod_all = 1;
        for (std::size_t j = 0; j <= k; ++j) prod_all *= gate[j];
        for (std::size_t i = 0; i <= k; ++i) {
            double prod = 1;
            for (std::size_t j = i; j <= k; ++j) prod *= gate[j];
            for (std::size_t a = 0; a < ds; ++a)
                for (std::size_t q = 0; q < di; ++q) zk[a][q] += prod * b[i][a] * r.xt[i][q];
        }
        for (std::size_t a = 0; a < ds; ++a)
            for (std::size_t q = 0; q < di; ++q) zk[a][q] += prod_all * init[a][q];
        std::vector<double> y(di);
        for (std::size_t q = 0; q < di; ++q) {
            double v = dskip[q] * r.xt[k][q];
            for (std::size_t a = 0; a < ds; ++a) v += c[k][a] * zk[a][q];
            y[q] = v;
        }
        for (std::size_t m = 0; m < dm; ++m) {
            double v = bout[m] + t[k][m];
            for (std::size_t q = 0; q < di; ++q) v += y[q] * wout.at(q, m);
            r.out[k][m] = v;
        }
        if (k + 1 == n) r.z = zk;
    }
    return r;
}

}  // namespace oracle
