#pragma once
// Deterministic synthetic multi-instance scenes and the box-perturbation sampler.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ssmsnake/geometry.hpp"
#include "ssmsnake/imageio.hpp"

namespace ssmsnake {

enum ShapeClass : int { kEllipse = 0, kRoundedRect = 1, kStar = 2 };
inline constexpr int kNumClasses = 3;

struct Instance {
    int class_id = 0;
    Contour polygon;
    BBox bbox;

    friend bool operator==(const Instance&, const Instance&) = default;
};

struct Scene {
    Image8 image;
    std::vector<Instance> instances;
    std::uint64_t seed = 0;
    // Number of placement restarts taken before this scene was accepted.
    std::uint32_t sub_seed = 0;

    friend bool operator==(const Scene&, const Scene&) = default;
};

struct GeneratorConfig {
    std::size_t size = 128;
    int count_min = 2;
    int count_max = 5;
    double major_min = 8.0;
    double major_max = 48.0;
    double small_prob = 0.2;
    double small_max = 12.0;
    int spikes_min = 5;
    int spikes_max = 8;
    double depth_min = 0.3;
    double depth_max = 0.6;
    double touch_prob = 0.3;
    double blur_min = 0.0;
    double blur_max = 2.0;
    double noise_min = 0.0;
    double noise_max = 8.0;
    double contrast_min = 16.0;
    double contrast_max = 96.0;
    std::size_t polygon_points = 128;
    double curvature_beta = 4.0;
    std::vector<int> classes{kEllipse, kRoundedRect, kStar};

    void validate() const;
};

// Polygon diameter (largest vertex-to-vertex distance); "small" means <= small_max.
double major_axis(std::span<const Point> pts);

Scene generate(const GeneratorConfig& cfg, std::uint64_t seed);

struct PerturbSpec {
    double shift = 0.0;  // fraction of w/h
    double scale = 0.0;  // dimension factor drawn from {1-scale, 1+scale}
    std::uint64_t seed = 0;

    void validate() const;
};

// Per-box perturbation before clipping to the image.
std::vector<BBox> perturb_boxes_unclipped(const Scene& scene, const PerturbSpec& spec);
std::vector<BBox> perturb_boxes(const Scene& scene, const PerturbSpec& spec);
BBox clip_box(const BBox& b, std::size_t height, std::size_t width);

// <stem>.json + <stem>.pgm. Coordinates are written with 6 decimals; generated
// scenes are already quantized to that grid, so load(save(s)) == s.
void save_scene(const Scene& scene, const std::filesystem::path& stem);
Scene load_scene(const std::filesystem::path& json_path);
std::string scene_json(const Scene& scene);

// Lists scene_*.json files of a corpus directory, sorted.
std::vector<std::filesystem::path> list_scenes(const std::filesystem::path& dir);
std::vector<Scene> load_corpus(const std::filesystem::path& dir);

// Rasterized GT masks of every instance.
std::vector<Mask> instance_masks(const Scene& scene);

// Round to the 1e-6 grid used by the annotation format.
double quantize6(double v);

}  // namespace ssmsnake
