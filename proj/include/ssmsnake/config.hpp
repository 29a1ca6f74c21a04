#pragma once
// key=value run configuration shared by every CLI verb.

#include <cstdint>
#include <filesystem>
#include <string>

#include "ssmsnake/energy.hpp"
#include "ssmsnake/evolution.hpp"
#include "ssmsnake/heads_losses.hpp"
#include "ssmsnake/params.hpp"

namespace ssmsnake {

enum class EnergyMode { Oracle, Learned };

struct RunConfig {
    std::string train_dir = "corpus/train";
    std::string val_dir = "corpus/val";
    std::uint64_t seed = 0;
    EnergyMode energy_mode = EnergyMode::Oracle;
    std::string energy_checkpoint;

    EnergyConfig energy{.lambda_edge = 1.0};  // the edge term at 16 swamps the distance term on toy scenes
    ModelConfig model;
    SynergyConfig synergy;

    double lr_start = 1e-3;
    double lr_end = 1e-6;
    double weight_decay = 1e-4;
    std::size_t epochs = 70;
    std::size_t batch = 8;
    double jitter = 0.1;  // training-time box jitter (fraction of w/h)
    std::size_t max_train_scenes = 0;  // 0 = all

    std::size_t energy_epochs = 30;
    double energy_lr = 1e-3;

    // Throws ConfigError naming the key for unknown keys or invalid values.
    static RunConfig parse(const std::string& text, const std::string& source = "<config>");
    static RunConfig load(const std::filesystem::path& path);

    void set(const std::string& key, const std::string& value);
    void validate() const;
    // Every key in sorted order, one "key=value" per line.
    std::string canonical() const;
    // FNV-1a over canonical().
    std::uint64_t hash() const;
};

std::string hex64(std::uint64_t v);

}  // namespace ssmsnake
