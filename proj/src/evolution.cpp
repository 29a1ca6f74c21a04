#include "ssmsnake/evolution.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "ssmsnake/errors.hpp"

namespace ssmsnake {

void EvolutionConfig::validate() const {
    if (n_init < 3) throw ConfigError("n_init: must be >= 3");
    if (n_points < n_init) throw ConfigError("n_points: must be >= n_init");
    if (iterations < 1) throw ConfigError("iterations: must be >= 1");
    if (grid_m < 2) throw ConfigError("grid_m: must be >= 2");
    if (macro_hidden < 1) throw ConfigError("macro_hidden: must be >= 1");
    if (!(target_beta >= 0)) throw ConfigError("target_beta: must be >= 0");
    if (!(iteration_weight_growth > 0)) throw ConfigError("iteration_weight_growth: must be > 0");
}

void ModelConfig::validate() const {
    evo.validate();
    meb.validate();
    if (num_classes < 1) throw ConfigError("num_classes: must be >= 1");
    if (head_hidden < 1) throw ConfigError("head_hidden: must be >= 1");
    if (evo.n_points < meb.conv_width) throw ConfigError("n_points: must be >= conv_width");
}

SnakeModel SnakeModel::create(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    SnakeModel m;
    m.cfg = cfg;
    std::mt19937_64 rng(seed);
    ParamStore& s = m.params;
    init_pyramid_params(s, rng);
    const std::size_t macro_in = cfg.evo.grid_m * cfg.evo.grid_m * kPointFeatureDim;
    s.add("macro.w1", random_normal({macro_in, cfg.evo.macro_hidden}, std::sqrt(2.0 / double(macro_in)), rng));
    s.add("macro.b1", Tensor({cfg.evo.macro_hidden}, 0.0));
    s.add("macro.w2", Tensor({cfg.evo.macro_hidden, 2 * cfg.evo.n_init}, 0.0));
    s.add("macro.b2", Tensor({2 * cfg.evo.n_init}, 0.0));
    s.add("micro.embed.w",
          random_normal({kPointFeatureDim, cfg.meb.d_model}, std::sqrt(1.0 / double(kPointFeatureDim)), rng));
    s.add("micro.embed.b", Tensor({cfg.meb.d_model}, 0.0));
    init_meb_stack_params(s, "meb", cfg.meb, rng);
    s.add("micro.offset.w", Tensor({cfg.meb.d_model, 2}, 0.0));
    s.add("micro.offset.b", Tensor({2}, 0.0));
    init_head_params(s, kPointFeatureDim, cfg.meb.d_model, cfg.num_classes, cfg.head_hidden, rng);
    return m;
}

namespace {

Var half_extent(Graph& g, const BBox& box) { return g.constant(Tensor({2}, {box.w / 2, box.h / 2})); }

void check_box(const BBox& box) {
    if (!box_valid(box, kFeatureSize, kFeatureSize))
        throw ShapeError("macro_evolve: box (" + std::to_string(box.cx) + "," + std::to_string(box.cy) + "," +
                         std::to_string(box.w) + "," + std::to_string(box.h) + ") is outside the image");
}

}  // namespace

MacroOut macro_evolve(Graph& g, SnakeModel& model, Var F, const BBox& box) {
    check_box(box);
    const EvolutionConfig& evo = model.cfg.evo;
    ParamStore& s = model.params;
    Var grid = grid_features(F, box, evo.grid_m);
    Var flat = reshape(grid, {1, evo.grid_m * evo.grid_m * kPointFeatureDim});
    Var h = relu(add(matmul(flat, g.param(s, "macro.w1")), g.param(s, "macro.b1")));
    Var off = tanh(add(matmul(h, g.param(s, "macro.w2")), g.param(s, "macro.b2")));
    off = mul(reshape(off, {evo.n_init, 2}), half_extent(g, box));
    const Contour init = init_polygon_from_box(box, evo.n_init);
    return {add(g.constant(points_tensor(init.span())), off), grid};
}

MicroOut micro_step(Graph& g, SnakeModel& model, Var F, const BBox& box, Var contour, Var z_in) {
    const EvolutionConfig& evo = model.cfg.evo;
    if (contour.shape() != Shape{evo.n_points, 2})
        throw ShapeError("micro_step: contour must be (" + std::to_string(evo.n_points) + ",2), got " +
                         shape_str(contour.shape()));
    ParamStore& s = model.params;
    Var pf = point_features(F, contour, box);
    Var tokens = add(matmul(pf, g.param(s, "micro.embed.w")), g.param(s, "micro.embed.b"));
    MebResult r = meb_stack(g, s, "meb", model.cfg.meb, tokens, z_in);
    Var off = tanh(add(matmul(r.tokens, g.param(s, "micro.offset.w")), g.param(s, "micro.offset.b")));
    return {add(contour, mul(off, half_extent(g, box))), r.z, r.tokens};
}

Tensor uniform_resample_matrix(std::span<const Point> pts, std::size_t n) {
    const std::size_t m = pts.size();
    Tensor r({n, m}, 0.0);
    const std::vector<EdgeSample> pos = uniform_sample_positions(pts, n);
    for (std::size_t k = 0; k < n; ++k) {
        r.at(k, pos[k].edge) += 1.0 - pos[k].t;
        r.at(k, (pos[k].edge + 1) % m) += pos[k].t;
    }
    return r;
}

EvolveOut evolve(Graph& g, SnakeModel& model, Var F, const BBox& box, int iterations) {
    const EvolutionConfig& evo = model.cfg.evo;
    const std::size_t iters = iterations >= 0 ? static_cast<std::size_t>(iterations) : evo.iterations;
    EvolveOut out;
    out.trajectory.snapshots.push_back(init_polygon_from_box(box, evo.n_init).vertices());
    MacroOut mo = macro_evolve(g, model, F, box);
    out.macro = mo.contour;
    out.grid_feats = mo.grid_feats;
    out.trajectory.snapshots.push_back(tensor_points(mo.contour.value()));

    const std::vector<Point> coarse = tensor_points(mo.contour.value());
    Var contour = evo.detach_stages ? g.constant(points_tensor(resample_uniform(coarse, evo.n_points)))
                                    : matmul(g.constant(uniform_resample_matrix(coarse, evo.n_points)), mo.contour);
    Var z;  // seeded from token 0 on the first iteration
    for (std::size_t it = 0; it < iters; ++it) {
        if (!evo.carry_state && it > 0)
            z = g.constant(Tensor({model.cfg.meb.d_state, model.cfg.meb.d_inner}, 0.0));
        if (evo.detach_iterations && it > 0) contour = g.constant(contour.value());
        MicroOut mi = micro_step(g, model, F, box, contour, z);
        contour = mi.contour;
        z = mi.z;
        out.tokens = mi.tokens;
        out.micro.push_back(contour);
        out.trajectory.snapshots.push_back(tensor_points(contour.value()));
    }
    if (iters == 0) {
        ParamStore& s = model.params;
        Var pf = point_features(F, contour, box);
        out.tokens = add(matmul(pf, g.param(s, "micro.embed.w")), g.param(s, "micro.embed.b"));
        out.micro.push_back(contour);
    }
    return out;
}

PreparedScene prepare_scene(const Scene& scene, EnergyMap energy, const EvolutionConfig& evo) {
    PreparedScene ps;
    ps.scene = &scene;
    ps.input = feature_input(scene.image, energy);
    ps.energy = std::move(energy);
    for (std::size_t i = 0; i < scene.instances.size(); ++i) {
        const Instance& inst = scene.instances[i];
        InstanceTarget t;
        t.label = inst.class_id;
        try {
            t.gt_init = resample_curvature_weighted(inst.polygon.span(), evo.n_init, evo.target_beta);
            t.gt_points = resample_curvature_weighted(inst.polygon.span(), evo.n_points, evo.target_beta);
            const Mask m = rasterize(inst.polygon, scene.image.height, scene.image.width);
            t.area = static_cast<double>(std::count(m.data.begin(), m.data.end(), std::uint8_t{1}));
            t.usable = t.area > 0 && box_valid(inst.bbox, scene.image.height, scene.image.width);
        } catch (const Error& e) {
            t.usable = false;
        }
        if (!t.usable)
            std::cerr << "warning: scene " << scene.seed << " instance " << i << " has a degenerate GT polygon; skipped\n";
        ps.targets.push_back(std::move(t));
    }
    return ps;
}

double median_instance_area(std::span<const PreparedScene> scenes) {
    std::vector<double> areas;
    for (const PreparedScene& ps : scenes)
        for (const InstanceTarget& t : ps.targets)
            if (t.usable) areas.push_back(t.area);
    if (areas.empty()) throw Error("median_instance_area: corpus has no usable instances");
    std::sort(areas.begin(), areas.end());
    const std::size_t n = areas.size();
    return n % 2 ? areas[n / 2] : 0.5 * (areas[n / 2 - 1] + areas[n / 2]);
}

namespace {

Var paired_loss(Var pred, std::span<const Point> gt) {
    const std::vector<Point> p = tensor_points(pred.value());
    const Pairing pair = align_to_gt(p, gt);
    return evolution_loss(pred, pair.paired);
}

}  // namespace

SceneLoss scene_loss(Graph& g, SnakeModel& model, const PreparedScene& ps, std::span<const BBox> boxes,
                     const SynergyConfig& syn, Var* total_out) {
    if (boxes.size() != ps.targets.size()) throw ShapeError("scene_loss: one box per instance required");
    Var F = pyramid_extract(g, model.params, g.constant(ps.input));
    SceneLoss res;
    Var total;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        const InstanceTarget& t = ps.targets[i];
        if (!t.usable) continue;
        BBox box = boxes[i];
        EvolveOut ev = evolve(g, model, F, box);
        Var macro = paired_loss(ev.macro, t.gt_init);
        Var micro;
        {
            const double growth = model.cfg.evo.iteration_weight_growth;
            double wsum = 0, w = 1;
            for (std::size_t k = 0; k < ev.micro.size(); ++k, w *= growth) wsum += w;
            w = static_cast<double>(ev.micro.size()) / wsum;
            for (std::size_t k = 0; k < ev.micro.size(); ++k, w *= growth) {
                Var term = paired_loss(ev.micro[k], t.gt_points);
                if (growth != 1.0) term = scale(term, w);
                micro = k == 0 ? term : add(micro, term);
            }
        }
        Var lh, ls;
        if (syn.enabled) {
            Var pd = classify_detection(g, model.params, ev.grid_feats);
            Var psg = classify_segmentation(g, model.params, ev.tokens);
            lh = loss_LH(pd, psg, t.label, syn);
            ls = loss_LS(pd, psg, t.area, syn);
            res.parts.l_h += lh.item();
            res.parts.l_s += ls.item();
        }
        res.parts.l_evol_macro += macro.item();
        res.parts.l_evol_micro += micro.item();
        Var inst_total = total_loss(macro, micro, lh, ls, syn);
        total = total.valid() ? add(total, inst_total) : inst_total;
        ++res.instances;
    }
    if (res.instances == 0) {
        if (total_out) *total_out = Var{};
        return res;
    }
    const double inv = 1.0 / static_cast<double>(res.instances);
    res.parts.l_evol_macro *= inv;
    res.parts.l_evol_micro *= inv;
    res.parts.l_h *= inv;
    res.parts.l_s *= inv;
    res.total = total_loss(res.parts, syn);
    if (total_out) *total_out = scale(total, inv);
    return res;
}

TrainStepResult train_step(SnakeModel& model, AdamW& opt, std::span<const PreparedScene* const> batch,
                           std::span<const std::vector<BBox>> boxes, const SynergyConfig& syn) {
    if (batch.empty()) throw Error("train_step: empty batch");
    model.params.zero_grad();
    TrainStepResult r;
    const double w = 1.0 / static_cast<double>(batch.size());
    std::size_t used = 0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        Graph g;
        Var total;
        const SceneLoss sl = scene_loss(g, model, *batch[b], boxes[b], syn, &total);
        if (!total.valid()) continue;
        g.backward(total, {.accumulate = true, .scale = w});
        r.parts.l_evol_macro += sl.parts.l_evol_macro * w;
        r.parts.l_evol_micro += sl.parts.l_evol_micro * w;
        r.parts.l_h += sl.parts.l_h * w;
        r.parts.l_s += sl.parts.l_s * w;
        ++used;
    }
    if (used == 0) throw Error("train_step: batch has no usable instances");
    r.total = total_loss(r.parts, syn);
    r.lr = opt.current_lr();
    opt.step(model.params);
    return r;
}

std::vector<Trajectory> predict_scene(SnakeModel& model, const Tensor& input, std::span<const BBox> boxes,
                                      int iterations) {
    Graph g;
    Var F = pyramid_extract(g, model.params, g.constant(input));
    std::vector<Trajectory> out;
    for (const BBox& b : boxes) out.push_back(evolve(g, model, F, b, iterations).trajectory);
    return out;
}

}  // namespace ssmsnake
