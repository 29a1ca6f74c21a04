#include "ssmsnake/commands.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

#include "ssmsnake/errors.hpp"
#include "ssmsnake/render.hpp"

namespace ssmsnake {

namespace fs = std::filesystem;

std::size_t worker_count(std::size_t requested) {
    std::size_t n = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("SSMSNAKE_THREADS")) {
        const long cap = std::strtol(env, nullptr, 10);
        if (cap >= 1) n = std::min(n, static_cast<std::size_t>(cap));
    }
    return std::max<std::size_t>(1, n);
}

namespace {

// Runs fn(i) for i in [0,n) over workers threads; results go to caller-owned slots.
template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn fn) {
    workers = std::min(workers, n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i; (i = next.fetch_add(1)) < n;) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
                next = n;
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

std::vector<Scene> load_split(const std::string& dir, std::size_t limit = 0) {
    std::vector<fs::path> files = list_scenes(dir);
    if (limit && files.size() > limit) files.resize(limit);
    std::vector<Scene> scenes;
    for (const fs::path& f : files) scenes.push_back(load_scene(f));
    return scenes;
}

std::vector<BBox> gt_boxes(const Scene& s) {
    std::vector<BBox> b;
    for (const Instance& inst : s.instances) b.push_back(inst.bbox);
    return b;
}

// Random shift/scale of each GT box, continuous in [-j, j].
std::vector<BBox> jittered_boxes(const Scene& s, double j, std::mt19937_64& rng) {
    std::vector<BBox> out;
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (const Instance& inst : s.instances) {
        BBox b = inst.bbox;
        if (j > 0) {
            const double dx = u(rng), dy = u(rng), sx = u(rng), sy = u(rng);
            b.cx += j * dx * inst.bbox.w;
            b.cy += j * dy * inst.bbox.h;
            b.w *= 1.0 + j * sx;
            b.h *= 1.0 + j * sy;
            b = clip_box(b, s.image.height, s.image.width);
            if (!box_valid(b, s.image.height, s.image.width)) b = inst.bbox;
        }
        out.push_back(b);
    }
    return out;
}

std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string report_json(const Report& r) {
    std::ostringstream os;
    os << "{\"mean\": {\"miou\": " << fmt6(r.mean.miou) << ", \"mdice\": " << fmt6(r.mean.mdice)
       << ", \"mboundf\": " << fmt6(r.mean.mboundf) << ", \"underseg_rate\": " << fmt6(r.mean.underseg_rate)
       << "}, \"instance_mean\": {\"miou\": " << fmt6(r.instance_mean.miou)
       << ", \"mdice\": " << fmt6(r.instance_mean.mdice) << ", \"mboundf\": " << fmt6(r.instance_mean.mboundf)
       << ", \"underseg_rate\": " << fmt6(r.instance_mean.underseg_rate) << "}, \"n_instances\": "
       << r.instances.size() << ", \"n_small\": " << r.n_small
       << ", \"small_underseg_rate\": " << fmt6(r.small_underseg_rate) << "}";
    return os.str();
}

void write_report(const fs::path& csv, const Report& r) {
    std::ofstream out(csv, std::ios::binary);
    if (!out) throw Error("cannot write " + csv.string());
    write_report_csv(out, r);
}

}  // namespace

// ---------------------------------------------------------------------------

void cmd_gen(const GenOptions& opt) {
    opt.generator.validate();
    if (fs::exists(opt.out) && !fs::is_empty(opt.out) && !opt.force)
        throw ConfigError("out: directory " + opt.out.string() + " is not empty (use --force)");
    fs::create_directories(opt.out);
    parallel_for(opt.count, worker_count(opt.workers), [&](std::size_t i) {
        char name[32];
        std::snprintf(name, sizeof name, "scene_%05zu", i);
        save_scene(generate(opt.generator, opt.seed + i), opt.out / name);
    });
    std::ostringstream m;
    m << "{\"count\": " << opt.count << ", \"seed\": " << opt.seed << ", \"size\": " << opt.generator.size
      << ", \"polygon_points\": " << opt.generator.polygon_points << "}\n";
    write_text(opt.out / "manifest.json", m.str());
}

std::vector<EnergyMap> scene_energies(const std::vector<Scene>& scenes, const RunConfig& cfg) {
    std::vector<EnergyMap> out(scenes.size());
    if (cfg.energy_mode == EnergyMode::Oracle) {
        parallel_for(scenes.size(), worker_count(0), [&](std::size_t i) {
            const std::vector<Mask> masks = instance_masks(scenes[i]);
            out[i] = compose_espm(scenes[i].image, masks, cfg.energy);
        });
    } else {
        ParamStore net = ParamStore::load(cfg.energy_checkpoint);
        parallel_for(scenes.size(), worker_count(0), [&](std::size_t i) { out[i] = EnergyNet::predict(net, scenes[i].image); });
    }
    return out;
}

void cmd_pretrain_energy(const fs::path& config, const fs::path& out, std::ostream& log) {
    const RunConfig cfg = RunConfig::load(config);
    if (cfg.energy_mode == EnergyMode::Oracle) {
        log << "pretrain-energy: energy_mode=oracle, nothing to train\n";
        return;
    }
    const std::vector<Scene> train = load_split(cfg.train_dir, cfg.max_train_scenes);
    const std::vector<Scene> val = load_split(cfg.val_dir);
    if (train.empty()) throw MissingArtifact("pretrain-energy: no scenes in " + cfg.train_dir);
    RunConfig oracle = cfg;
    oracle.energy_mode = EnergyMode::Oracle;
    const std::vector<EnergyMap> train_e = scene_energies(train, oracle);
    const std::vector<EnergyMap> val_e = scene_energies(val, oracle);

    fs::create_directories(out);
    ParamStore net;
    std::mt19937_64 rng(cfg.seed);
    EnergyNet::init_params(net, rng);
    const std::size_t steps_per_epoch = (train.size() + cfg.batch - 1) / cfg.batch;
    AdamWConfig oc;
    oc.lr_start = cfg.energy_lr;
    oc.lr_end = std::min(cfg.lr_end, cfg.energy_lr);
    oc.weight_decay = cfg.weight_decay;
    oc.total_steps = static_cast<std::int64_t>(cfg.energy_epochs * steps_per_epoch);
    AdamW opt(oc);

    auto image_tensor = [](const Image8& img) {
        Tensor t({1, img.height, img.width});
        for (std::size_t i = 0; i < img.size(); ++i) t[i] = img.data[i] / 255.0;
        return t;
    };
    auto energy_tensor = [](const EnergyMap& e) { return Tensor({1, e.height, e.width}, e.data); };

    std::ofstream csv(out / "energy_log.csv", std::ios::binary);
    csv << "epoch,train_loss,val_mae\n";
    std::vector<std::size_t> order(train.size());
    for (std::size_t epoch = 0; epoch < cfg.energy_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        std::seed_seq sseq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(epoch), 0xe1u};
        std::mt19937_64 shuf(sseq);
        std::shuffle(order.begin(), order.end(), shuf);
        double loss_sum = 0;
        for (std::size_t b = 0; b < train.size(); b += cfg.batch) {
            const std::size_t end = std::min(train.size(), b + cfg.batch);
            net.zero_grad();
            for (std::size_t k = b; k < end; ++k) {
                Graph g;
                Var pred = EnergyNet::forward(g, net, g.constant(image_tensor(train[order[k]].image)));
                Var loss = charbonnier_loss(pred, g.constant(energy_tensor(train_e[order[k]])));
                loss_sum += loss.item();
                g.backward(loss, {.accumulate = true, .scale = 1.0 / static_cast<double>(end - b)});
            }
            opt.step(net);
        }
        double mae = 0;
        for (std::size_t i = 0; i < val.size(); ++i) {
            const EnergyMap p = EnergyNet::predict(net, val[i].image);
            double s = 0;
            for (std::size_t k = 0; k < p.size(); ++k) s += std::abs(p.data[k] - val_e[i].data[k]);
            mae += s / static_cast<double>(p.size());
        }
        if (!val.empty()) mae /= static_cast<double>(val.size());
        csv << epoch << ',' << fmt6(loss_sum / static_cast<double>(train.size())) << ',' << fmt6(mae) << '\n';
        log << "energy epoch " << epoch << " loss " << loss_sum / static_cast<double>(train.size()) << " val_mae " << mae
            << '\n';
    }
    net.save(out / "energy.bin");
    const std::vector<double> probe(16, 42.0);
    log << "charbonnier probe (pred == gt): " << charbonnier(probe, probe) << '\n';
}

TrainResult train_model(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<Scene> train = load_split(cfg.train_dir, cfg.max_train_scenes);
    const std::vector<Scene> val = load_split(cfg.val_dir);
    if (train.empty()) throw MissingArtifact("train: no scenes in " + cfg.train_dir);
    const std::vector<EnergyMap> train_e = scene_energies(train, cfg);

    std::vector<PreparedScene> prepared;
    prepared.reserve(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) prepared.push_back(prepare_scene(train[i], train_e[i], cfg.model.evo));

    SynergyConfig syn = cfg.synergy;
    if (!(syn.a_ref > 0)) syn.a_ref = median_instance_area(prepared);
    syn.validate(true);

    SnakeModel model = SnakeModel::create(cfg.model, cfg.seed);
    const std::size_t steps_per_epoch = (train.size() + cfg.batch - 1) / cfg.batch;
    AdamWConfig oc;
    oc.lr_start = cfg.lr_start;
    oc.lr_end = cfg.lr_end;
    oc.weight_decay = cfg.weight_decay;
    oc.total_steps = static_cast<std::int64_t>(cfg.epochs * steps_per_epoch);
    AdamW opt(oc);

    fs::create_directories(out);
    std::ofstream tlog(out / "train_log.csv", std::ios::binary);
    write_train_log_header(tlog);
    std::vector<std::size_t> order(train.size());
    std::int64_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        std::seed_seq sseq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                           static_cast<std::uint32_t>(epoch)};
        std::mt19937_64 rng(sseq);
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0;
        std::size_t epoch_steps = 0;
        for (std::size_t b = 0; b < train.size(); b += cfg.batch) {
            std::vector<const PreparedScene*> batch;
            std::vector<std::vector<BBox>> boxes;
            for (std::size_t k = b; k < std::min(train.size(), b + cfg.batch); ++k) {
                batch.push_back(&prepared[order[k]]);
                boxes.push_back(jittered_boxes(train[order[k]], cfg.jitter, rng));
            }
            const TrainStepResult r = train_step(model, opt, batch, boxes, syn);
            write_train_log_row(tlog, TrainLogRow{step, r.parts, r.total, r.lr});
            epoch_loss += r.total;
            ++epoch_steps;
            ++step;
        }
        log << "epoch " << epoch << " loss " << epoch_loss / static_cast<double>(epoch_steps) << " ("
            << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s)\n";
    }
    tlog.close();

    model.params.save(out / "model.bin");
    write_text(out / "config.txt", cfg.canonical());

    TrainResult res;
    res.steps = step;
    res.a_ref = syn.a_ref;
    if (!val.empty()) {
        LoadedModel lm{false, cfg, std::move(model)};
        res.val_report = evaluate_model(lm, val, scene_energies(val, cfg), EvalOptions{});
        write_report(out / "metrics.csv", res.val_report);
    }
    std::ostringstream m;
    m << "{\"config_hash\": \"" << hex64(cfg.hash()) << "\", \"seed\": " << cfg.seed << ", \"steps\": " << step
      << ", \"train_scenes\": " << train.size() << ", \"val_scenes\": " << val.size() << ", \"a_ref\": "
      << fmt6(syn.a_ref) << ", \"files\": [\"model.bin\", \"config.txt\", \"train_log.csv\"" << (val.empty() ? "" : ", \"metrics.csv\"")
      << "], \"val\": " << (val.empty() ? std::string("null") : report_json(res.val_report)) << "}\n";
    write_text(out / "manifest.json", m.str());
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

void cmd_train(const fs::path& config, const fs::path& out, std::ostream& log) {
    const RunConfig cfg = RunConfig::load(config);
    const TrainResult r = train_model(cfg, out, log);
    log << "trained " << r.steps << " steps in " << r.seconds << " s; val mDice " << r.val_report.mean.mdice
        << " mBoundF " << r.val_report.mean.mboundf << '\n';
}

LoadedModel load_model(const std::string& model_dir) {
    LoadedModel m;
    if (model_dir == "echo") {
        m.echo = true;
        return m;
    }
    const fs::path dir(model_dir);
    if (!fs::is_directory(dir)) throw MissingArtifact("model directory not found: " + dir.string());
    m.cfg = RunConfig::load(dir / "config.txt");
    SnakeModel sm;
    sm.cfg = m.cfg.model;
    sm.params = ParamStore::load(dir / "model.bin");
    const SnakeModel ref = SnakeModel::create(m.cfg.model, 0);
    for (const std::string& name : ref.params.names())
        if (!sm.params.contains(name) || sm.params.value(name).shape() != ref.params.value(name).shape())
            throw FormatError((dir / "model.bin").string() + ": parameter " + name + " missing or mis-shaped");
    m.model = std::move(sm);
    return m;
}

Report evaluate_model(LoadedModel& m, const std::vector<Scene>& scenes, const std::vector<EnergyMap>& energies,
                      const EvalOptions& opt) {
    std::vector<std::vector<std::vector<Point>>> preds(scenes.size());
    parallel_for(scenes.size(), worker_count(opt.workers), [&](std::size_t s) {
        const Scene& sc = scenes[s];
        if (m.echo) {
            for (const Instance& inst : sc.instances) preds[s].push_back(inst.polygon.vertices());
            return;
        }
        const std::vector<BBox> boxes = opt.perturb ? perturb_boxes(sc, *opt.perturb) : gt_boxes(sc);
        const Tensor input = feature_input(sc.image, energies[s]);
        SnakeModel local{m.model->cfg, m.model->params};
        for (const Trajectory& t : predict_scene(local, input, boxes, opt.iterations))
            preds[s].push_back(t.snapshots.back());
    });
    return evaluate_corpus(scenes, preds);
}

void cmd_eval(const std::string& model, const fs::path& data, const fs::path& out_csv, const EvalOptions& opt,
              std::ostream& log) {
    LoadedModel m = load_model(model);
    const std::vector<Scene> scenes = load_split(data.string());
    if (scenes.empty()) throw MissingArtifact("eval: no scenes in " + data.string());
    const std::vector<EnergyMap> energies = m.echo ? std::vector<EnergyMap>(scenes.size()) : scene_energies(scenes, m.cfg);
    const Report r = evaluate_model(m, scenes, energies, opt);
    if (!out_csv.empty()) {
        if (out_csv.has_parent_path()) fs::create_directories(out_csv.parent_path());
        write_report(out_csv, r);
    }
    write_report_csv(log, r);
    log << "instance mean Dice " << fmt6(r.instance_mean.mdice) << ", small-instance under-segmentation "
        << fmt6(r.small_underseg_rate) << " over " << r.n_small << '\n';
}

void cmd_ablate(const std::string& model, const fs::path& data, const fs::path& out_dir, const AblateOptions& opt,
                std::ostream& log) {
    LoadedModel m = load_model(model);
    if (m.echo) throw ConfigError("model: ablation needs a trained model directory");
    const std::vector<Scene> scenes = load_split(data.string());
    if (scenes.empty()) throw MissingArtifact("ablate: no scenes in " + data.string());
    fs::create_directories(out_dir);
    const std::vector<EnergyMap> energies = scene_energies(scenes, m.cfg);
    if (opt.iterations) {
        std::ofstream csv(out_dir / "ablate_iterations.csv", std::ios::binary);
        csv << "iterations,miou,mdice,mboundf,underseg_rate\n";
        for (int it = 1; it <= 5; ++it) {
            EvalOptions eo;
            eo.iterations = it;
            eo.workers = opt.workers;
            const Report r = evaluate_model(m, scenes, energies, eo);
            csv << it << ',' << fmt6(r.mean.miou) << ',' << fmt6(r.mean.mdice) << ',' << fmt6(r.mean.mboundf) << ','
                << fmt6(r.mean.underseg_rate) << '\n';
            log << "iterations " << it << ": mDice " << fmt6(r.mean.mdice) << '\n';
        }
    }
    if (opt.points) {
        std::ofstream csv(out_dir / "ablate_points.csv", std::ios::binary);
        csv << "n_points,miou,mdice,mboundf,underseg_rate\n";
        for (std::size_t n : {32, 64, 128, 256}) {
            RunConfig cfg = m.cfg;
            cfg.model.evo.n_points = n;
            cfg.model.evo.n_init = std::min(cfg.model.evo.n_init, n);
            if (opt.points_epochs) cfg.epochs = opt.points_epochs;
            cfg.val_dir = data.string();
            const TrainResult tr = train_model(cfg, out_dir / ("points_" + std::to_string(n)), log);
            const Report& r = tr.val_report;
            csv << n << ',' << fmt6(r.mean.miou) << ',' << fmt6(r.mean.mdice) << ',' << fmt6(r.mean.mboundf) << ','
                << fmt6(r.mean.underseg_rate) << '\n';
            log << "n_points " << n << ": mDice " << fmt6(r.mean.mdice) << '\n';
        }
    }
}

std::vector<PerturbRow> cmd_perturb(const std::string& model, const fs::path& data, const fs::path& out_csv,
                                    std::uint64_t seed, std::size_t workers, std::ostream& log) {
    LoadedModel m = load_model(model);
    const std::vector<Scene> scenes = load_split(data.string());
    if (scenes.empty()) throw MissingArtifact("perturb: no scenes in " + data.string());
    const std::vector<EnergyMap> energies = m.echo ? std::vector<EnergyMap>(scenes.size()) : scene_energies(scenes, m.cfg);
    std::vector<PerturbRow> rows;
    const double levels[] = {0.0, 0.1, 0.2};
    for (double sh : levels)
        for (double sc : levels) {
            PerturbRow row;
            row.shift = sh;
            row.scale = sc;
            EvalOptions eo;
            eo.workers = workers;
            eo.perturb = PerturbSpec{sh, sc, seed};
            row.report = evaluate_model(m, scenes, energies, eo);
            rows.push_back(std::move(row));
        }
    const double base = rows.front().report.mean.mdice;
    for (PerturbRow& r : rows) r.dice_delta = 100.0 * (r.report.mean.mdice - base);
    if (!out_csv.empty()) {
        if (out_csv.has_parent_path()) fs::create_directories(out_csv.parent_path());
        std::ofstream csv(out_csv, std::ios::binary);
        // Full-scale reference drop in Dice points (shift and scale both at the level).
        csv << "shift,scale,miou,mdice,mboundf,dice_delta_points,reference_drop_points\n";
        for (const PerturbRow& r : rows) {
            const std::string ref = r.shift == r.scale ? (r.shift == 0.1 ? "0.5" : r.shift == 0.2 ? "2.0" : "0.0") : "";
            csv << fmt6(r.shift) << ',' << fmt6(r.scale) << ',' << fmt6(r.report.mean.miou) << ','
                << fmt6(r.report.mean.mdice) << ',' << fmt6(r.report.mean.mboundf) << ',' << fmt6(r.dice_delta) << ','
                << ref << '\n';
        }
    }
    for (const PerturbRow& r : rows)
        log << "shift " << r.shift << " scale " << r.scale << ": mDice " << fmt6(r.report.mean.mdice) << " (delta "
            << fmt6(r.dice_delta) << " points)\n";
    return rows;
}

void cmd_render(const fs::path& scene_json, const std::string& model, const fs::path& out_dir, std::ostream& log) {
    const Scene scene = load_scene(scene_json);
    RunConfig cfg;
    std::optional<SnakeModel> sm;
    bool echo = false;
    if (model.empty()) {
        sm = SnakeModel::create(cfg.model, cfg.seed);
    } else {
        LoadedModel m = load_model(model);
        echo = m.echo;
        if (!echo) {
            cfg = m.cfg;
            sm = std::move(m.model);
        }
    }
    const EnergyMap energy = scene_energies({scene}, cfg).front();
    std::vector<Trajectory> traj;
    if (echo) {
        for (const Instance& inst : scene.instances) traj.push_back(Trajectory{{inst.polygon.vertices()}});
    } else {
        traj = predict_scene(*sm, feature_input(scene.image, energy), gt_boxes(scene));
    }
    fs::create_directories(out_dir);
    const std::string stem = scene_json.stem().string();
    write_text(out_dir / (stem + ".svg"), render_svg(scene, traj));
    write_pgm(out_dir / (stem + "_energy.pgm"), quantize_u8(energy));
    log << "wrote " << (out_dir / (stem + ".svg")).string() << " and " << (out_dir / (stem + "_energy.pgm")).string()
        << '\n';
}

}  // namespace ssmsnake
