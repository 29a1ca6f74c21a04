#pragma once
// Closed polygons: resampling, curvature, GT pairing, rasterization and
// box-based initialization.
//
// Coordinates are image pixels with pixel (row i, col j) centered at
// (j + 0.5, i + 0.5).

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "ssmsnake/grid.hpp"

namespace ssmsnake {

struct Point {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Point&, const Point&) = default;
};

inline Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
inline Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
inline Point operator*(double s, Point a) { return {s * a.x, s * a.y}; }
double distance(Point a, Point b);

// Shoelace signed area (positive for counter-clockwise in x-right, y-up terms).
double signed_area(std::span<const Point> pts);
double perimeter(std::span<const Point> pts);

// Validated closed polygon: N >= 3, no consecutive duplicates, positive signed area.
class Contour {
public:
    Contour() = default;
    // Throws on fewer than 3 vertices or consecutive duplicates; reverses the
    // vertex order when the signed area is negative.
    explicit Contour(std::vector<Point> vertices);

    std::size_t size() const { return vertices_.size(); }
    const std::vector<Point>& vertices() const { return vertices_; }
    const Point& operator[](std::size_t i) const { return vertices_[i]; }
    std::span<const Point> span() const { return vertices_; }

    friend bool operator==(const Contour&, const Contour&) = default;

private:
    std::vector<Point> vertices_;
};

struct BBox {
    int class_id = 0;
    double cx = 0.0;
    double cy = 0.0;
    double w = 0.0;
    double h = 0.0;

    double x_min() const { return cx - w / 2; }
    double x_max() const { return cx + w / 2; }
    double y_min() const { return cy - h / 2; }
    double y_max() const { return cy + h / 2; }
    friend bool operator==(const BBox&, const BBox&) = default;
};

// Tight axis-aligned bounds.
BBox bounding_box(std::span<const Point> pts, int class_id = 0);
// w > 0, h > 0 and overlapping [0,width] x [0,height].
bool box_valid(const BBox& box, std::size_t height, std::size_t width);

struct CurvatureProfile {
    std::vector<double> kappa;   // signed, 1/pixels; positive on convex turns of a CCW contour
    std::vector<double> weight;  // kappa^2
};

// Equal arc-length spacing starting at vertex 0. Points may be any closed
// polyline (orientation preserved).
std::vector<Point> resample_uniform(std::span<const Point> pts, std::size_t n);
Contour resample_uniform(const Contour& contour, std::size_t n);

// Where resample_uniform places each output point: edge index and fraction t
// along pts[edge] -> pts[edge+1].
struct EdgeSample {
    std::size_t edge = 0;
    double t = 0.0;
};
std::vector<EdgeSample> uniform_sample_positions(std::span<const Point> pts, std::size_t n);

// Turning angle at each vertex divided by the mean of its two adjacent edge lengths.
CurvatureProfile discrete_curvature(std::span<const Point> pts);
CurvatureProfile discrete_curvature(const Contour& contour);

// Inverse-transform sampling of the arc-length density 1 + beta * khat^2,
// khat = |kappa| / max|kappa|, interpolated linearly along each edge.
std::vector<Point> resample_curvature_weighted(std::span<const Point> pts, std::size_t n, double beta = 4.0);
Contour resample_curvature_weighted(const Contour& contour, std::size_t n, double beta = 4.0);

struct Pairing {
    std::vector<Point> paired;  // paired[i] = gt[pi(i)]
    std::size_t shift = 0;
    bool reversed = false;
    double cost = 0.0;  // sum_i |pred_i - paired_i|_2
};

// Chooses the cyclic shift s and orientation minimizing the summed Euclidean
// distance. Forward: pi(i) = (i + s) mod N; reversed: pi(i) = (s - i) mod N.
// Ties go to the smaller shift, then forward.
Pairing align_to_gt(std::span<const Point> pred, std::span<const Point> gt);

// Pixel (i,j) is set iff (j+0.5, i+0.5) lies inside under the nonzero winding rule.
Mask rasterize(std::span<const Point> pts, std::size_t height, std::size_t width);
inline Mask rasterize(const Contour& c, std::size_t height, std::size_t width) {
    return rasterize(c.span(), height, width);
}

// n points on the ellipse inscribed in the box, from angle 0 (x = cx + w/2)
// with increasing angle: (cx + w/2 cos t, cy + h/2 sin t).
Contour init_polygon_from_box(const BBox& box, std::size_t n_init = 40);

// Sum of kappa_i * kappa_i^2 over vertices.
double curvature_penalty(std::span<const Point> pts);

// "idx,x,y" CSV.
void write_contour_csv(std::ostream& out, std::span<const Point> pts);

}  // namespace ssmsnake
