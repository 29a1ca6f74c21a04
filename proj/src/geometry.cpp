#include "ssmsnake/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <cstdio>
#include <ostream>

#include "ssmsnake/errors.hpp"

namespace ssmsnake {

double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

double signed_area(std::span<const Point> pts) {
    const std::size_t n = pts.size();
    double a = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const Point& p = pts[i];
        const Point& q = pts[(i + 1) % n];
        a += p.x * q.y - q.x * p.y;
    }
    return 0.5 * a;
}

double perimeter(std::span<const Point> pts) {
    double s = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) s += distance(pts[i], pts[(i + 1) % pts.size()]);
    return s;
}

Contour::Contour(std::vector<Point> vertices) : vertices_(std::move(vertices)) {
    const std::size_t n = vertices_.size();
    if (n < 3) throw Error("Contour: need at least 3 vertices, got " + std::to_string(n));
    for (std::size_t i = 0; i < n; ++i) {
        const Point& p = vertices_[i];
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw NumericalError("Contour: non-finite vertex");
        if (distance(p, vertices_[(i + 1) % n]) <= 1e-9)
            throw Error("Contour: consecutive duplicate vertices at index " + std::to_string(i));
    }
    const double area = signed_area(vertices_);
    if (area == 0.0) throw Error("Contour: zero signed area");
    if (area < 0) std::reverse(vertices_.begin() + 1, vertices_.end());
}

BBox bounding_box(std::span<const Point> pts, int class_id) {
    if (pts.empty()) throw Error("bounding_box: empty point set");
    double x0 = pts[0].x, x1 = pts[0].x, y0 = pts[0].y, y1 = pts[0].y;
    for (const Point& p : pts) {
        x0 = std::min(x0, p.x);
        x1 = std::max(x1, p.x);
        y0 = std::min(y0, p.y);
        y1 = std::max(y1, p.y);
    }
    return BBox{class_id, 0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0};
}

bool box_valid(const BBox& box, std::size_t height, std::size_t width) {
    return box.w > 0 && box.h > 0 && std::isfinite(box.cx) && std::isfinite(box.cy) && box.x_max() > 0 &&
           box.x_min() < static_cast<double>(width) && box.y_max() > 0 && box.y_min() < static_cast<double>(height);
}

namespace {

// Inverts the cumulative mass of a density that is linear along each edge
// (vertex densities dens[i]).
std::vector<EdgeSample> inverse_cdf_positions(std::span<const Point> pts, std::span<const double> dens, std::size_t n) {
    const std::size_t m = pts.size();
    std::vector<double> len(m), mass(m + 1, 0.0);
    for (std::size_t e = 0; e < m; ++e) {
        len[e] = distance(pts[e], pts[(e + 1) % m]);
        mass[e + 1] = mass[e] + len[e] * 0.5 * (dens[e] + dens[(e + 1) % m]);
    }
    const double total = mass[m];
    if (!(total > 0)) throw Error("resample: degenerate (zero-perimeter) contour");
    std::vector<EdgeSample> out;
    out.reserve(n);
    std::size_t e = 0;
    for (std::size_t k = 0; k < n; ++k) {
        const double target = total * static_cast<double>(k) / static_cast<double>(n);
        while (e + 1 < m && mass[e + 1] <= target) ++e;
        while (e + 1 < m && len[e] == 0.0) ++e;
        const double local = (target - mass[e]) / len[e];  // mass per unit length integrated
        const double d0 = dens[e], d1 = dens[(e + 1) % m];
        // len * (d0 t + (d1 - d0) t^2 / 2) = target - mass[e]
        double t = 2.0 * local / (d0 + std::sqrt(std::max(0.0, d0 * d0 + 2.0 * (d1 - d0) * local)));
        out.push_back({e, std::clamp(t, 0.0, 1.0)});
    }
    return out;
}

std::vector<Point> inverse_cdf_sample(std::span<const Point> pts, std::span<const double> dens, std::size_t n) {
    std::vector<Point> out;
    out.reserve(n);
    for (const EdgeSample& s : inverse_cdf_positions(pts, dens, n)) {
        const Point& a = pts[s.edge];
        const Point& b = pts[(s.edge + 1) % pts.size()];
        out.push_back(Point{a.x + s.t * (b.x - a.x), a.y + s.t * (b.y - a.y)});
    }
    return out;
}

}  // namespace

std::vector<Point> resample_uniform(std::span<const Point> pts, std::size_t n) {
    if (n < 3) throw Error("resample_uniform: n must be >= 3");
    if (pts.size() < 2 || !(perimeter(pts) > 0)) throw Error("resample_uniform: degenerate (zero-perimeter) contour");
    std::vector<double> dens(pts.size(), 1.0);
    return inverse_cdf_sample(pts, dens, n);
}

std::vector<EdgeSample> uniform_sample_positions(std::span<const Point> pts, std::size_t n) {
    if (n < 3) throw Error("resample_uniform: n must be >= 3");
    if (pts.size() < 2 || !(perimeter(pts) > 0)) throw Error("resample_uniform: degenerate (zero-perimeter) contour");
    std::vector<double> dens(pts.size(), 1.0);
    return inverse_cdf_positions(pts, dens, n);
}

Contour resample_uniform(const Contour& contour, std::size_t n) {
    return Contour(resample_uniform(contour.span(), n));
}

CurvatureProfile discrete_curvature(std::span<const Point> pts) {
    const std::size_t n = pts.size();
    if (n < 3) throw Error("discrete_curvature: need at least 3 vertices");
    CurvatureProfile prof;
    prof.kappa.resize(n);
    prof.weight.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Point& prev = pts[(i + n - 1) % n];
        const Point& cur = pts[i];
        const Point& next = pts[(i + 1) % n];
        const Point a = cur - prev;
        const Point b = next - cur;
        const double la = std::hypot(a.x, a.y), lb = std::hypot(b.x, b.y);
        const double mean_len = 0.5 * (la + lb);
        double k = 0.0;
        if (mean_len > 0) {
            const double turn = std::atan2(a.x * b.y - a.y * b.x, a.x * b.x + a.y * b.y);
            k = turn / mean_len;
        }
        prof.kappa[i] = k;
        prof.weight[i] = k * k;
    }
    return prof;
}

CurvatureProfile discrete_curvature(const Contour& contour) { return discrete_curvature(contour.span()); }

std::vector<Point> resample_curvature_weighted(std::span<const Point> pts, std::size_t n, double beta) {
    if (n < 3) throw Error("resample_curvature_weighted: n must be >= 3");
    if (beta < 0) throw Error("resample_curvature_weighted: beta must be >= 0");
    if (pts.size() < 3 || !(perimeter(pts) > 0))
        throw Error("resample_curvature_weighted: degenerate (zero-perimeter) contour");
    const CurvatureProfile prof = discrete_curvature(pts);
    double kmax = 0;
    for (double k : prof.kappa) kmax = std::max(kmax, std::fabs(k));
    std::vector<double> dens(pts.size(), 1.0);
    if (kmax > 0 && beta > 0)
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const double kh = std::fabs(prof.kappa[i]) / kmax;
            dens[i] = 1.0 + beta * kh * kh;
        }
    return inverse_cdf_sample(pts, dens, n);
}

Contour resample_curvature_weighted(const Contour& contour, std::size_t n, double beta) {
    return Contour(resample_curvature_weighted(contour.span(), n, beta));
}

Pairing align_to_gt(std::span<const Point> pred, std::span<const Point> gt) {
    const std::size_t n = pred.size();
    if (gt.size() != n) throw Error("align_to_gt: point counts differ (" + std::to_string(n) + " vs " +
                                    std::to_string(gt.size()) + ")");
    Pairing best;
    best.cost = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < n; ++s)
        for (int dir = 0; dir < 2; ++dir) {
            double cost = 0;
            for (std::size_t i = 0; i < n && cost < best.cost; ++i) {
                const std::size_t j = dir == 0 ? (i + s) % n : (s + n - i) % n;
                cost += distance(pred[i], gt[j]);
            }
            if (cost < best.cost) {
                best.cost = cost;
                best.shift = s;
                best.reversed = dir == 1;
            }
        }
    best.paired.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        best.paired[i] = gt[best.reversed ? (best.shift + n - i) % n : (i + best.shift) % n];
    return best;
}

Mask rasterize(std::span<const Point> pts, std::size_t height, std::size_t width) {
    Mask mask(height, width, 0);
    const std::size_t n = pts.size();
    if (n < 3) return mask;
    const double wd = static_cast<double>(width), hd = static_cast<double>(height);
    std::vector<Point> v(pts.begin(), pts.end());
    for (Point& p : v) {
        p.x = std::clamp(p.x, -wd, 2 * wd);
        p.y = std::clamp(p.y, -hd, 2 * hd);
    }
    struct Crossing {
        double x;
        int delta;
    };
    std::vector<Crossing> xs;
    for (std::size_t i = 0; i < height; ++i) {
        const double yc = static_cast<double>(i) + 0.5;
        xs.clear();
        for (std::size_t e = 0; e < n; ++e) {
            const Point& p = v[e];
            const Point& q = v[(e + 1) % n];
            int delta = 0;
            if (p.y <= yc && yc < q.y) delta = 1;
            else if (q.y <= yc && yc < p.y) delta = -1;
            if (!delta) continue;
            xs.push_back({p.x + (yc - p.y) * (q.x - p.x) / (q.y - p.y), delta});
        }
        if (xs.empty()) continue;
        std::sort(xs.begin(), xs.end(), [](const Crossing& a, const Crossing& b) { return a.x < b.x; });
        int winding = 0;
        for (std::size_t k = 0; k + 1 < xs.size(); ++k) {
            winding += xs[k].delta;
            if (winding == 0) continue;
            // centers xc in (x_k, x_{k+1}]
            const double lo = std::floor(xs[k].x - 0.5) + 1.0;
            const double hi = std::floor(xs[k + 1].x - 0.5);
            const double jlo = std::max(lo, 0.0);
            const double jhi = std::min(hi, wd - 1.0);
            for (double j = jlo; j <= jhi; j += 1.0) mask(i, static_cast<std::size_t>(j)) = 1;
        }
    }
    return mask;
}

Contour init_polygon_from_box(const BBox& box, std::size_t n_init) {
    if (n_init < 3) throw Error("init_polygon_from_box: n_init must be >= 3");
    if (!(box.w > 0 && box.h > 0)) throw Error("init_polygon_from_box: box must have positive size");
    std::vector<Point> pts(n_init);
    for (std::size_t k = 0; k < n_init; ++k) {
        const double t = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n_init);
        pts[k] = Point{box.cx + 0.5 * box.w * std::cos(t), box.cy + 0.5 * box.h * std::sin(t)};
    }
    return Contour(std::move(pts));
}

double curvature_penalty(std::span<const Point> pts) {
    const CurvatureProfile prof = discrete_curvature(pts);
    double s = 0;
    for (std::size_t i = 0; i < prof.kappa.size(); ++i) s += prof.kappa[i] * prof.weight[i];
    return s;
}

void write_contour_csv(std::ostream& out, std::span<const Point> pts) {
    out << "idx,x,y\n";
    char buf[96];
    for (std::size_t i = 0; i < pts.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f\n", i, pts[i].x, pts[i].y);
        out << buf;
    }
}

}  // namespace ssmsnake
