#pragma once
// Region and boundary overlap metrics and corpus-level aggregation.

#include <iosfwd>
#include <span>
#include <vector>

#include "ssmsnake/geometry.hpp"
#include "ssmsnake/synthcorpus.hpp"

namespace ssmsnake {

struct IouDice {
    double iou = 0.0;
    double dice = 0.0;
};

// Exact pixel counts; empty vs empty is (1,1).
IouDice iou_dice(const Mask& gt, const Mask& pred);

// Boundary pixels dilated (n-1) times with the 4-neighbourhood.
Mask boundary_band(const Mask& mask, std::size_t n);

// Mean over n = 1..5 of Dice(band_n(gt), band_n(pred)); both empty -> 1.
double boundf(const Mask& gt, const Mask& pred);

inline constexpr double kUndersegDice = 0.5;
inline constexpr double kSmallMajorAxis = 12.0;

struct InstanceResult {
    int class_id = 0;
    double iou = 0.0;
    double dice = 0.0;
    double boundf = 0.0;
    bool matched = false;  // a non-empty prediction was produced
    bool small = false;
};

struct ClassSummary {
    int class_id = 0;
    std::size_t n_instances = 0;
    double miou = 0.0;
    double mdice = 0.0;
    double mboundf = 0.0;
    double underseg_rate = 0.0;
};

struct Report {
    std::vector<InstanceResult> instances;
    std::vector<ClassSummary> classes;  // classes with at least one instance, ascending id
    ClassSummary mean;                  // average of the per-class rows; n_instances is the total
    ClassSummary instance_mean;         // plain mean over instances
    std::size_t n_small = 0;
    double small_underseg_rate = 0.0;
};

// Scores one instance. An empty or degenerate prediction scores as an empty mask.
InstanceResult score_instance(const Instance& gt, std::span<const Point> pred, std::size_t height, std::size_t width);

// predictions[s][i] is the contour for scenes[s].instances[i].
Report evaluate_corpus(std::span<const Scene> scenes, const std::vector<std::vector<std::vector<Point>>>& predictions);
Report aggregate(std::vector<InstanceResult> instances);

// class_id,n_instances,miou,mdice,mboundf,underseg_rate then a "mean" row.
void write_report_csv(std::ostream& out, const Report& r);

}  // namespace ssmsnake
