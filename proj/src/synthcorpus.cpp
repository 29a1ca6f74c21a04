#include "ssmsnake/synthcorpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "json.hpp"
#include "ssmsnake/energy.hpp"
#include "ssmsnake/errors.hpp"

namespace ssmsnake {

void GeneratorConfig::validate() const {
    if (size < 32) throw ConfigError("generator size: must be >= 32");
    if (count_min < 1 || count_max < count_min) throw ConfigError("generator count range is empty");
    if (!(major_min > 0) || major_max < major_min) throw ConfigError("generator major-axis range is empty");
    if (small_prob < 0 || small_prob > 1) throw ConfigError("small_prob: must be in [0,1]");
    if (touch_prob < 0 || touch_prob > 1) throw ConfigError("touch_prob: must be in [0,1]");
    if (spikes_min < 3 || spikes_max < spikes_min) throw ConfigError("star spike range is empty");
    if (depth_min < 0 || depth_max >= 1 || depth_max < depth_min) throw ConfigError("star depth range invalid");
    if (blur_min < 0 || blur_max < blur_min) throw ConfigError("blur range invalid");
    if (noise_min < 0 || noise_max < noise_min) throw ConfigError("noise range invalid");
    if (contrast_min < 16 || contrast_max < contrast_min) throw ConfigError("contrast must be >= 16");
    if (classes.empty()) throw ConfigError("generator classes: empty");
    for (int c : classes)
        if (c < 0 || c >= kNumClasses) throw ConfigError("generator classes: unknown class " + std::to_string(c));
}

void PerturbSpec::validate() const {
    if (shift < 0 || shift > 0.5) throw ConfigError("perturb shift: must be in [0,0.5]");
    if (scale < 0 || scale > 0.5) throw ConfigError("perturb scale: must be in [0,0.5]");
}

double quantize6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::strtod(buf, nullptr);
}

double major_axis(std::span<const Point> pts) {
    double best = 0;
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (std::size_t j = i + 1; j < pts.size(); ++j) best = std::max(best, distance(pts[i], pts[j]));
    return best;
}

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) {
    if (hi <= lo) return lo;
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

// Inserts intermediate points so that no edge is longer than step.
std::vector<Point> densify(const std::vector<Point>& poly, double step) {
    std::vector<Point> out;
    const std::size_t n = poly.size();
    for (std::size_t i = 0; i < n; ++i) {
        const Point a = poly[i], b = poly[(i + 1) % n];
        const int pieces = std::max(1, static_cast<int>(std::ceil(distance(a, b) / step)));
        for (int k = 0; k < pieces; ++k) {
            const double t = static_cast<double>(k) / pieces;
            out.push_back({a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)});
        }
    }
    return out;
}

Point rotate(Point p, double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    return {c * p.x - s * p.y, s * p.x + c * p.y};
}

// Dense outline centered at the origin with the requested diameter.
std::vector<Point> shape_outline(int cls, double diameter, const GeneratorConfig& cfg, Rng& rng) {
    constexpr double pi = std::numbers::pi;
    std::vector<Point> poly;
    double angle = 0;
    if (cls == kEllipse) {
        const double a = 0.5 * diameter, b = a * uniform(rng, 0.5, 1.0);
        angle = uniform(rng, 0.0, pi);
        const int n = 256;
        for (int k = 0; k < n; ++k) {
            const double t = 2 * pi * k / n;
            poly.push_back({a * std::cos(t), b * std::sin(t)});
        }
    } else if (cls == kRoundedRect) {
        const double ratio = uniform(rng, 0.5, 1.0);
        const double len = diameter / std::sqrt(1.0 + ratio * ratio);
        const double hx = 0.5 * len, hy = 0.5 * len * ratio;
        const double r = uniform(rng, 0.2, 0.5) * std::min(hx, hy);
        angle = uniform(rng, -25.0, 25.0) * pi / 180.0;
        const Point centers[4] = {{hx - r, hy - r}, {-(hx - r), hy - r}, {-(hx - r), -(hy - r)}, {hx - r, -(hy - r)}};
        const int arc = 12;
        for (int q = 0; q < 4; ++q)
            for (int k = 0; k <= arc; ++k) {
                const double t = q * pi / 2 + (pi / 2) * k / arc;
                poly.push_back({centers[q].x + r * std::cos(t), centers[q].y + r * std::sin(t)});
            }
    } else {
        const int spikes = uniform_int(rng, cfg.spikes_min, cfg.spikes_max);
        const double depth = uniform(rng, cfg.depth_min, cfg.depth_max);
        const double outer = 0.5 * diameter, inner = outer * (1.0 - depth);
        angle = uniform(rng, 0.0, 2 * pi);
        for (int k = 0; k < 2 * spikes; ++k) {
            const double t = pi * k / spikes;
            const double rad = (k % 2 == 0) ? outer : inner;
            poly.push_back({rad * std::cos(t), rad * std::sin(t)});
        }
    }
    for (Point& p : poly) p = rotate(p, angle);
    // Drop exact duplicates produced by arc joins.
    std::vector<Point> clean;
    for (const Point& p : poly)
        if (clean.empty() || distance(clean.back(), p) > 1e-9) clean.push_back(p);
    while (clean.size() > 1 && distance(clean.front(), clean.back()) <= 1e-9) clean.pop_back();
    return densify(clean, 0.5);
}

std::vector<Point> translated(const std::vector<Point>& pts, Point by) {
    std::vector<Point> out(pts);
    for (Point& p : out) p = p + by;
    return out;
}

bool inside_image(const std::vector<Point>& pts, double size) {
    return std::all_of(pts.begin(), pts.end(),
                       [&](const Point& p) { return p.x >= 1 && p.y >= 1 && p.x <= size - 1 && p.y <= size - 1; });
}

bool masks_overlap(const Mask& a, const Mask& b) {
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a.data[i] && b.data[i]) return true;
    return false;
}

Mask dilate4(const Mask& m) {
    Mask out = m;
    for (std::size_t r = 0; r < m.height; ++r)
        for (std::size_t c = 0; c < m.width; ++c) {
            if (!m(r, c)) continue;
            if (r > 0) out(r - 1, c) = 1;
            if (r + 1 < m.height) out(r + 1, c) = 1;
            if (c > 0) out(r, c - 1) = 1;
            if (c + 1 < m.width) out(r, c + 1) = 1;
        }
    return out;
}

double segment_distance(Point p, Point a, Point b) {
    const Point ab = b - a, ap = p - a;
    const double len2 = ab.x * ab.x + ab.y * ab.y;
    const double t = len2 > 0 ? std::clamp((ap.x * ab.x + ap.y * ab.y) / len2, 0.0, 1.0) : 0.0;
    return distance(p, Point{a.x + t * ab.x, a.y + t * ab.y});
}

// Blends one instance into the float image. Inside pixels (by rasterization)
// get coverage in [0.6, 1], outside pixels in [0, 0.4], ramped by distance to the outline.
void paint_instance(RealGrid& img, const std::vector<Point>& poly, const Mask& mask, double fg) {
    const BBox b = bounding_box(poly);
    const std::size_t n = img.height;
    const auto lo_c = static_cast<std::size_t>(std::max(0.0, std::floor(b.x_min() - 2)));
    const auto hi_c = static_cast<std::size_t>(std::min<double>(static_cast<double>(n) - 1, std::ceil(b.x_max() + 2)));
    const auto lo_r = static_cast<std::size_t>(std::max(0.0, std::floor(b.y_min() - 2)));
    const auto hi_r = static_cast<std::size_t>(std::min<double>(static_cast<double>(n) - 1, std::ceil(b.y_max() + 2)));
    for (std::size_t r = lo_r; r <= hi_r; ++r)
        for (std::size_t c = lo_c; c <= hi_c; ++c) {
            const Point p{c + 0.5, r + 0.5};
            double d = std::numeric_limits<double>::infinity();
            for (std::size_t e = 0; e < poly.size(); ++e)
                d = std::min(d, segment_distance(p, poly[e], poly[(e + 1) % poly.size()]));
            const double cov = mask(r, c) ? 0.6 + 0.4 * std::min(1.0, d) : 0.4 * std::max(0.0, 1.0 - d);
            if (cov <= 0) continue;
            img(r, c) = img(r, c) + cov * (fg - img(r, c));
        }
}

struct Placed {
    int cls;
    std::vector<Point> poly;
    Mask mask;
};

bool try_generate(const GeneratorConfig& cfg, std::uint64_t seed, std::uint32_t attempt, Scene& scene) {
    std::seed_seq sseq{static_cast<std::uint32_t>(seed & 0xffffffffu), static_cast<std::uint32_t>(seed >> 32),
                       attempt, 0x5eedu};
    Rng rng(sseq);
    const double size = static_cast<double>(cfg.size);
    const int count = uniform_int(rng, cfg.count_min, cfg.count_max);
    const bool touching = count >= 2 && uniform(rng, 0.0, 1.0) < cfg.touch_prob;
    std::vector<Placed> placed;
    Mask occupied(cfg.size, cfg.size, 0);

    for (int i = 0; i < count; ++i) {
        const int cls = cfg.classes[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(cfg.classes.size()) - 1))];
        const bool small = uniform(rng, 0.0, 1.0) < cfg.small_prob;
        const double diameter = small ? uniform(rng, cfg.major_min, std::min(cfg.small_max, cfg.major_max))
                                      : uniform(rng, std::min(cfg.small_max, cfg.major_max), cfg.major_max);
        const std::vector<Point> outline = shape_outline(cls, diameter, cfg, rng);
        const std::vector<Point> base =
            resample_curvature_weighted(std::span<const Point>(outline), cfg.polygon_points, cfg.curvature_beta);

        bool ok = false;
        for (int tries = 0; tries < 100 && !ok; ++tries) {
            std::vector<Point> poly;
            if (touching && i == 1) {
                // Slide toward instance 0 until the masks are about to overlap.
                const double phi = uniform(rng, 0.0, 2 * std::numbers::pi);
                const Point dir{std::cos(phi), std::sin(phi)};
                const BBox b0 = bounding_box(placed[0].poly);
                const Point c0{b0.cx, b0.cy};
                double lo = 0.0, hi = 0.5 * (major_axis(placed[0].poly) + diameter) + 3.0;
                for (int it = 0; it < 30; ++it) {
                    const double mid = 0.5 * (lo + hi);
                    const Mask m = rasterize(translated(base, c0 + mid * dir), cfg.size, cfg.size);
                    (masks_overlap(m, placed[0].mask) ? lo : hi) = mid;
                }
                poly = translated(base, c0 + hi * dir);
            } else {
                const BBox bb = bounding_box(base);
                const double mx = 2 + bb.w / 2, my = 2 + bb.h / 2;
                poly = translated(base, Point{uniform(rng, mx, size - mx) - bb.cx, uniform(rng, my, size - my) - bb.cy});
            }
            for (Point& p : poly) p = Point{quantize6(p.x), quantize6(p.y)};
            if (!inside_image(poly, size)) continue;
            Mask m = rasterize(poly, cfg.size, cfg.size);
            if (std::none_of(m.data.begin(), m.data.end(), [](std::uint8_t v) { return v != 0; })) continue;
            const bool is_touch_partner = touching && i == 1;
            if (is_touch_partner) {
                if (masks_overlap(m, occupied)) continue;
            } else {
                if (masks_overlap(dilate4(m), occupied)) continue;
            }
            // Keep touching pairs separated from everything else by a 1 px gap.
            for (std::size_t k = 0; k < m.size(); ++k)
                if (m.data[k]) occupied.data[k] = 1;
            placed.push_back(Placed{cls, std::move(poly), std::move(m)});
            ok = true;
        }
        if (!ok) return false;
    }

    // Render.
    RealGrid img(cfg.size, cfg.size, static_cast<double>(uniform_int(rng, 60, 190)));
    const double bg = img.data[0];
    for (const Placed& p : placed) {
        const double contrast = std::round(uniform(rng, cfg.contrast_min, cfg.contrast_max));
        double fg = uniform(rng, 0.0, 1.0) < 0.5 ? bg + contrast : bg - contrast;
        if (fg > 255 || fg < 0) fg = 2 * bg - fg;
        paint_instance(img, p.poly, p.mask, fg);
    }
    const double sigma = uniform(rng, cfg.blur_min, cfg.blur_max);
    const double noise = uniform(rng, cfg.noise_min, cfg.noise_max);
    img = gaussian_blur(img, sigma);
    if (noise > 0) {
        std::normal_distribution<double> nd(0.0, noise);
        for (double& v : img.data) v += nd(rng);
    }

    scene = Scene{};
    scene.seed = seed;
    scene.sub_seed = attempt;
    scene.image = quantize_u8(img);
    for (Placed& p : placed) {
        Instance inst;
        inst.class_id = p.cls;
        inst.polygon = Contour(std::move(p.poly));
        BBox b = bounding_box(inst.polygon.span(), p.cls);
        b.cx = quantize6(b.cx);
        b.cy = quantize6(b.cy);
        b.w = quantize6(b.w);
        b.h = quantize6(b.h);
        inst.bbox = b;
        scene.instances.push_back(std::move(inst));
    }
    return true;
}

}  // namespace

Scene generate(const GeneratorConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Scene scene;
    for (std::uint32_t attempt = 0; attempt < 1000; ++attempt)
        if (try_generate(cfg, seed, attempt, scene)) return scene;
    throw Error("generate: could not place instances for seed " + std::to_string(seed));
}

BBox clip_box(const BBox& b, std::size_t height, std::size_t width) {
    const double x0 = std::max(0.0, b.x_min()), x1 = std::min(static_cast<double>(width), b.x_max());
    const double y0 = std::max(0.0, b.y_min()), y1 = std::min(static_cast<double>(height), b.y_max());
    if (x0 == b.x_min() && x1 == b.x_max() && y0 == b.y_min() && y1 == b.y_max()) return b;
    return BBox{b.class_id, 0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0};
}

std::vector<BBox> perturb_boxes_unclipped(const Scene& scene, const PerturbSpec& spec) {
    spec.validate();
    std::seed_seq sseq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                       static_cast<std::uint32_t>(scene.seed), static_cast<std::uint32_t>(scene.seed >> 32)};
    Rng rng(sseq);
    std::vector<BBox> out;
    for (const Instance& inst : scene.instances) {
        BBox b = inst.bbox;
        const double dx = uniform(rng, -spec.shift, spec.shift);
        const double dy = uniform(rng, -spec.shift, spec.shift);
        const bool grow_x = uniform(rng, 0.0, 1.0) < 0.5;
        const bool grow_y = uniform(rng, 0.0, 1.0) < 0.5;
        if (spec.shift > 0) {
            b.cx += dx * inst.bbox.w;
            b.cy += dy * inst.bbox.h;
        }
        if (spec.scale > 0) {
            b.w *= grow_x ? 1.0 + spec.scale : 1.0 - spec.scale;
            b.h *= grow_y ? 1.0 + spec.scale : 1.0 - spec.scale;
        }
        out.push_back(b);
    }
    return out;
}

std::vector<BBox> perturb_boxes(const Scene& scene, const PerturbSpec& spec) {
    std::vector<BBox> out = perturb_boxes_unclipped(scene, spec);
    for (BBox& b : out) b = clip_box(b, scene.image.height, scene.image.width);
    return out;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

std::string scene_json(const Scene& scene) {
    std::ostringstream os;
    char buf[128];
    os << "{\"seed\": " << scene.seed << ", \"sub_seed\": " << scene.sub_seed << ", \"instances\": [";
    for (std::size_t i = 0; i < scene.instances.size(); ++i) {
        const Instance& inst = scene.instances[i];
        os << (i ? ",\n  " : "\n  ") << "{\"class\": " << inst.class_id << ", \"bbox\": [";
        std::snprintf(buf, sizeof buf, "%.6f, %.6f, %.6f, %.6f", inst.bbox.cx, inst.bbox.cy, inst.bbox.w, inst.bbox.h);
        os << buf << "], \"polygon\": [";
        const auto& v = inst.polygon.vertices();
        for (std::size_t k = 0; k < v.size(); ++k) {
            std::snprintf(buf, sizeof buf, "%s[%.6f, %.6f]", k ? ", " : "", v[k].x, v[k].y);
            os << buf;
        }
        os << "]}";
    }
    os << "\n]}\n";
    return os.str();
}

void save_scene(const Scene& scene, const std::filesystem::path& stem) {
    std::filesystem::path json = stem;
    json += ".json";
    std::filesystem::path pgm = stem;
    pgm += ".pgm";
    std::ofstream out(json, std::ios::binary);
    if (!out) throw Error("cannot write " + json.string());
    out << scene_json(scene);
    write_pgm(pgm, scene.image);
}

Scene load_scene(const std::filesystem::path& json_path) {
    std::ifstream in(json_path, std::ios::binary);
    if (!in) throw MissingArtifact("cannot open scene " + json_path.string());
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        std::size_t line = 1;
        for (std::size_t i = 0; i < std::min<std::size_t>(e.byte, text.size()); ++i) line += text[i] == '\n';
        throw FormatError(json_path.string() + ": parse error at line " + std::to_string(line) + ", byte offset " +
                          std::to_string(e.byte) + ": " + e.what());
    }
    auto require = [&](const nlohmann::json& obj, const char* key) -> const nlohmann::json& {
        if (!obj.is_object() || !obj.contains(key))
            throw FormatError(json_path.string() + ": missing key \"" + std::string(key) + "\"");
        return obj.at(key);
    };
    Scene scene;
    try {
        scene.seed = require(j, "seed").get<std::uint64_t>();
        scene.sub_seed = j.value("sub_seed", 0u);
        const nlohmann::json& insts = require(j, "instances");
        if (!insts.is_array()) throw FormatError(json_path.string() + ": \"instances\" is not an array");
        for (std::size_t i = 0; i < insts.size(); ++i) {
            const nlohmann::json& ji = insts[i];
            Instance inst;
            inst.class_id = require(ji, "class").get<int>();
            const auto box = require(ji, "bbox").get<std::vector<double>>();
            if (box.size() != 4)
                throw FormatError(json_path.string() + ": instance " + std::to_string(i) + " bbox needs 4 numbers");
            inst.bbox = BBox{inst.class_id, box[0], box[1], box[2], box[3]};
            std::vector<Point> pts;
            for (const auto& p : require(ji, "polygon")) {
                const auto xy = p.get<std::vector<double>>();
                if (xy.size() != 2)
                    throw FormatError(json_path.string() + ": instance " + std::to_string(i) + " has a malformed vertex");
                pts.push_back({xy[0], xy[1]});
            }
            inst.polygon = Contour(std::move(pts));
            scene.instances.push_back(std::move(inst));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(json_path.string() + ": schema error: " + e.what());
    }
    std::filesystem::path pgm = json_path;
    pgm.replace_extension(".pgm");
    scene.image = read_pgm(pgm);
    return scene;
}

std::vector<std::filesystem::path> list_scenes(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw MissingArtifact("corpus directory not found: " + dir.string());
    std::vector<std::filesystem::path> out;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        const auto name = e.path().filename().string();
        if (e.is_regular_file() && name.rfind("scene_", 0) == 0 && e.path().extension() == ".json")
            out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<Scene> load_corpus(const std::filesystem::path& dir) {
    std::vector<Scene> scenes;
    for (const auto& p : list_scenes(dir)) scenes.push_back(load_scene(p));
    return scenes;
}

std::vector<Mask> instance_masks(const Scene& scene) {
    std::vector<Mask> masks;
    for (const Instance& inst : scene.instances)
        masks.push_back(rasterize(inst.polygon, scene.image.height, scene.image.width));
    return masks;
}

}  // namespace ssmsnake
