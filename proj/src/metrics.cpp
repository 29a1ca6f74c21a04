#include "ssmsnake/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <ostream>

#include "ssmsnake/energy.hpp"
#include "ssmsnake/errors.hpp"

namespace ssmsnake {

namespace {

void check_same(const Mask& a, const Mask& b, const char* who) {
    if (a.height != b.height || a.width != b.width)
        throw ShapeError(std::string(who) + ": mask shapes differ (" + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" + std::to_string(b.width) +
                         ")");
}

double dice_of(const Mask& a, const Mask& b) {
    std::size_t inter = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        na += a.data[i] != 0;
        nb += b.data[i] != 0;
        inter += a.data[i] && b.data[i];
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

}  // namespace

IouDice iou_dice(const Mask& gt, const Mask& pred) {
    check_same(gt, pred, "iou_dice");
    std::size_t inter = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        na += gt.data[i] != 0;
        nb += pred.data[i] != 0;
        inter += gt.data[i] && pred.data[i];
    }
    if (na + nb == 0) return {1.0, 1.0};
    const double uni = static_cast<double>(na + nb - inter);
    return {static_cast<double>(inter) / uni, 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb)};
}

Mask boundary_band(const Mask& mask, std::size_t n) {
    Mask band = mask_boundary(mask);
    for (std::size_t step = 1; step < n; ++step) {
        Mask next = band;
        for (std::size_t r = 0; r < band.height; ++r)
            for (std::size_t c = 0; c < band.width; ++c) {
                if (!band(r, c)) continue;
                if (r > 0) next(r - 1, c) = 1;
                if (r + 1 < band.height) next(r + 1, c) = 1;
                if (c > 0) next(r, c - 1) = 1;
                if (c + 1 < band.width) next(r, c + 1) = 1;
            }
        band = std::move(next);
    }
    return band;
}

double boundf(const Mask& gt, const Mask& pred) {
    check_same(gt, pred, "boundf");
    double acc = 0.0;
    for (std::size_t n = 1; n <= 5; ++n) acc += dice_of(boundary_band(gt, n), boundary_band(pred, n));
    return acc / 5.0;
}

InstanceResult score_instance(const Instance& gt, std::span<const Point> pred, std::size_t height, std::size_t width) {
    InstanceResult r;
    r.class_id = gt.class_id;
    r.small = major_axis(gt.polygon.span()) <= kSmallMajorAxis;
    const Mask gm = rasterize(gt.polygon, height, width);
    Mask pm(height, width, 0);
    bool finite = pred.size() >= 3;
    for (const Point& p : pred) finite = finite && std::isfinite(p.x) && std::isfinite(p.y);
    if (finite) pm = rasterize(pred, height, width);
    r.matched = std::any_of(pm.data.begin(), pm.data.end(), [](std::uint8_t v) { return v != 0; });
    const IouDice id = iou_dice(gm, pm);
    r.iou = id.iou;
    r.dice = id.dice;
    r.boundf = boundf(gm, pm);
    return r;
}

Report aggregate(std::vector<InstanceResult> instances) {
    Report rep;
    std::map<int, std::vector<const InstanceResult*>> by_class;
    for (const InstanceResult& r : instances) by_class[r.class_id].push_back(&r);
    auto summarize = [](int id, const std::vector<const InstanceResult*>& rs) {
        ClassSummary s;
        s.class_id = id;
        s.n_instances = rs.size();
        if (rs.empty()) return s;
        std::size_t under = 0;
        for (const InstanceResult* r : rs) {
            s.miou += r->iou;
            s.mdice += r->dice;
            s.mboundf += r->boundf;
            under += r->dice < kUndersegDice;
        }
        const double n = static_cast<double>(rs.size());
        s.miou /= n;
        s.mdice /= n;
        s.mboundf /= n;
        s.underseg_rate = static_cast<double>(under) / n;
        return s;
    };
    for (const auto& [id, rs] : by_class) rep.classes.push_back(summarize(id, rs));
    rep.mean.class_id = -1;
    for (const ClassSummary& c : rep.classes) {
        rep.mean.n_instances += c.n_instances;
        rep.mean.miou += c.miou;
        rep.mean.mdice += c.mdice;
        rep.mean.mboundf += c.mboundf;
        rep.mean.underseg_rate += c.underseg_rate;
    }
    if (!rep.classes.empty()) {
        const double k = static_cast<double>(rep.classes.size());
        rep.mean.miou /= k;
        rep.mean.mdice /= k;
        rep.mean.mboundf /= k;
        rep.mean.underseg_rate /= k;
    }
    std::vector<const InstanceResult*> all, small;
    for (const InstanceResult& r : instances) {
        all.push_back(&r);
        if (r.small) small.push_back(&r);
    }
    rep.instance_mean = summarize(-1, all);
    rep.n_small = small.size();
    rep.small_underseg_rate = summarize(-1, small).underseg_rate;
    rep.instances = std::move(instances);
    return rep;
}

Report evaluate_corpus(std::span<const Scene> scenes, const std::vector<std::vector<std::vector<Point>>>& predictions) {
    if (predictions.size() != scenes.size()) throw ShapeError("evaluate_corpus: one prediction list per scene required");
    std::vector<InstanceResult> results;
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        const Scene& sc = scenes[s];
        if (predictions[s].size() != sc.instances.size())
            throw ShapeError("evaluate_corpus: scene " + std::to_string(s) + " prediction count mismatch");
        for (std::size_t i = 0; i < sc.instances.size(); ++i)
            results.push_back(score_instance(sc.instances[i], predictions[s][i], sc.image.height, sc.image.width));
    }
    return aggregate(std::move(results));
}

void write_report_csv(std::ostream& out, const Report& r) {
    char buf[256];
    out << "class_id,n_instances,miou,mdice,mboundf,underseg_rate\n";
    for (const ClassSummary& c : r.classes) {
        std::snprintf(buf, sizeof buf, "%d,%zu,%.6f,%.6f,%.6f,%.6f\n", c.class_id, c.n_instances, c.miou, c.mdice,
                      c.mboundf, c.underseg_rate);
        out << buf;
    }
    std::snprintf(buf, sizeof buf, "mean,%zu,%.6f,%.6f,%.6f,%.6f\n", r.mean.n_instances, r.mean.miou, r.mean.mdice,
                  r.mean.mboundf, r.mean.underseg_rate);
    out << buf;
}

}  // namespace ssmsnake
