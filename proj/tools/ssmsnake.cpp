// ssmsnake: corpus generation, training, evaluation, ablation, robustness and rendering.

#include <iostream>

#include "CLI11.hpp"
#include "ssmsnake/commands.hpp"
#include "ssmsnake/errors.hpp"

using namespace ssmsnake;

int main(int argc, char** argv) {
    CLI::App app{"Contour-evolution segmentation with state-space point mixing"};
    app.require_subcommand(1);

    GenOptions gen;
    auto* c_gen = app.add_subcommand("gen", "Generate a synthetic corpus");
    c_gen->add_option("--count", gen.count, "Number of scenes")->required();
    c_gen->add_option("--seed", gen.seed, "Seed of the first scene")->required();
    c_gen->add_option("--out", gen.out, "Output directory")->required();
    c_gen->add_flag("--force", gen.force, "Allow a non-empty output directory");
    c_gen->add_option("--workers", gen.workers, "Worker threads (0 = all cores)");

    std::string config, out;
    auto* c_pre = app.add_subcommand("pretrain-energy", "Pretrain the energy-map network");
    c_pre->add_option("--config", config)->required();
    c_pre->add_option("--out", out)->required();

    auto* c_train = app.add_subcommand("train", "Train the contour model");
    c_train->add_option("--config", config)->required();
    c_train->add_option("--out", out)->required();

    std::string model, data;
    EvalOptions eval;
    auto* c_eval = app.add_subcommand("eval", "Evaluate a model on a corpus");
    c_eval->add_option("--model", model, "Model directory or 'echo'")->required();
    c_eval->add_option("--data", data)->required();
    c_eval->add_option("--out", out, "Metrics CSV path");
    c_eval->add_option("--iterations", eval.iterations, "Inference iterations (default: trained value)");
    c_eval->add_option("--workers", eval.workers);

    AblateOptions abl;
    bool only_iterations = false, only_points = false;
    auto* c_abl = app.add_subcommand("ablate", "Iteration and point-count sweeps");
    c_abl->add_option("--model", model)->required();
    c_abl->add_option("--data", data)->required();
    c_abl->add_option("--out", out)->required();
    c_abl->add_flag("--iterations-only", only_iterations);
    c_abl->add_flag("--points-only", only_points);
    c_abl->add_option("--points-epochs", abl.points_epochs, "Epochs for each retrained point-count variant");
    c_abl->add_option("--workers", abl.workers);

    std::uint64_t perturb_seed = 0;
    std::size_t workers = 0;
    auto* c_per = app.add_subcommand("perturb", "Box-perturbation robustness grid");
    c_per->add_option("--model", model)->required();
    c_per->add_option("--data", data)->required();
    c_per->add_option("--out", out, "CSV path");
    c_per->add_option("--seed", perturb_seed);
    c_per->add_option("--workers", workers);

    std::string scene;
    auto* c_ren = app.add_subcommand("render", "SVG overlay and energy PGM for one scene");
    c_ren->add_option("--scene", scene, "Scene JSON")->required();
    c_ren->add_option("--model", model, "Model directory or 'echo' (default: untrained)");
    c_ren->add_option("--out", out)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (c_gen->parsed()) {
            cmd_gen(gen);
        } else if (c_pre->parsed()) {
            cmd_pretrain_energy(config, out, std::cout);
        } else if (c_train->parsed()) {
            cmd_train(config, out, std::cout);
        } else if (c_eval->parsed()) {
            cmd_eval(model, data, out, eval, std::cout);
        } else if (c_abl->parsed()) {
            abl.iterations = !only_points;
            abl.points = !only_iterations;
            cmd_ablate(model, data, out, abl, std::cout);
        } else if (c_per->parsed()) {
            cmd_perturb(model, data, out, perturb_seed, workers, std::cout);
        } else if (c_ren->parsed()) {
            cmd_render(scene, model, out, std::cout);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const MissingArtifact& e) {
        std::cerr << "missing artifact: " << e.what() << '\n';
        return 3;
    } catch (const FormatError& e) {
        std::cerr << "malformed artifact: " << e.what() << '\n';
        return 3;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
