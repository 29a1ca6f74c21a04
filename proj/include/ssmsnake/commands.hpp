#pragma once
// Implementations behind the CLI verbs. Each throws ConfigError,
// MissingArtifact or NumericalError for the exit-code mapping in the tool.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ssmsnake/config.hpp"
#include "ssmsnake/evolution.hpp"
#include "ssmsnake/metrics.hpp"
#include "ssmsnake/synthcorpus.hpp"

namespace ssmsnake {

// Worker count: requested (0 = hardware), capped by SSMSNAKE_THREADS.
std::size_t worker_count(std::size_t requested);

struct GenOptions {
    std::size_t count = 0;
    std::uint64_t seed = 0;
    std::filesystem::path out;
    bool force = false;
    std::size_t workers = 0;
    GeneratorConfig generator;
};
// Scene i uses seed + i and is written as scene_%05d.{json,pgm}, plus manifest.json.
void cmd_gen(const GenOptions& opt);

// Oracle or learned energy for each scene.
std::vector<EnergyMap> scene_energies(const std::vector<Scene>& scenes, const RunConfig& cfg);

void cmd_pretrain_energy(const std::filesystem::path& config, const std::filesystem::path& out, std::ostream& log);

struct TrainResult {
    Report val_report;
    std::int64_t steps = 0;
    double a_ref = 0.0;
    double seconds = 0.0;
};
// Writes model.bin, config.txt, train_log.csv, metrics.csv, manifest.json into out.
TrainResult train_model(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& log);
void cmd_train(const std::filesystem::path& config, const std::filesystem::path& out, std::ostream& log);

// A trained directory, or the literal "echo" debug model that returns GT polygons.
struct LoadedModel {
    bool echo = false;
    RunConfig cfg;
    std::optional<SnakeModel> model;
};
LoadedModel load_model(const std::string& model_dir);

struct EvalOptions {
    int iterations = -1;  // < 0: trained value
    std::optional<PerturbSpec> perturb;
    std::size_t workers = 0;
};
Report evaluate_model(LoadedModel& m, const std::vector<Scene>& scenes, const std::vector<EnergyMap>& energies,
                      const EvalOptions& opt);

void cmd_eval(const std::string& model, const std::filesystem::path& data, const std::filesystem::path& out_csv,
              const EvalOptions& opt, std::ostream& log);

struct AblateOptions {
    bool iterations = true;
    bool points = true;
    std::size_t points_epochs = 0;  // 0: the model's configured epochs
    std::size_t workers = 0;
};
void cmd_ablate(const std::string& model, const std::filesystem::path& data, const std::filesystem::path& out_dir,
                const AblateOptions& opt, std::ostream& log);

struct PerturbRow {
    double shift = 0.0;
    double scale = 0.0;
    Report report;
    double dice_delta = 0.0;  // mDice(perturbed) - mDice(unperturbed), in points
};
std::vector<PerturbRow> cmd_perturb(const std::string& model, const std::filesystem::path& data,
                                    const std::filesystem::path& out_csv, std::uint64_t seed, std::size_t workers,
                                    std::ostream& log);

// SVG overlay + energy.pgm for one scene.
void cmd_render(const std::filesystem::path& scene_json, const std::string& model, const std::filesystem::path& out_dir,
                std::ostream& log);

}  // namespace ssmsnake
