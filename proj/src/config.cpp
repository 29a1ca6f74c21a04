#include "ssmsnake/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "ssmsnake/errors.hpp"

namespace ssmsnake {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
    double out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": not a number: '" + v + "'");
    return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        throw ConfigError(key + ": not a non-negative integer: '" + v + "'");
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct Field {
    std::function<void(RunConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};


#define SSMSNAKE_DOUBLE(expr) \
    Field { [](RunConfig& c, const std::string& k, const std::string& v) { expr = to_double(k, v); }, \
            [](const RunConfig& c) { return fmt(expr); } }
#define SSMSNAKE_SIZE(expr) \
    Field { [](RunConfig& c, const std::string& k, const std::string& v) { expr = to_u64(k, v); }, \
            [](const RunConfig& c) { return std::to_string(expr); } }
#define SSMSNAKE_BOOL(expr) \
    Field { [](RunConfig& c, const std::string& k, const std::string& v) { expr = to_bool(k, v); }, \
            [](const RunConfig& c) { return std::string(expr ? "true" : "false"); } }
#define SSMSNAKE_STRING(expr) \
    Field { [](RunConfig& c, const std::string&, const std::string& v) { expr = v; }, \
            [](const RunConfig& c) { return expr; } }

const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> f = {
        {"train_dir", SSMSNAKE_STRING(c.train_dir)},
        {"val_dir", SSMSNAKE_STRING(c.val_dir)},
        {"seed", SSMSNAKE_SIZE(c.seed)},
        {"energy_mode",
         Field{[](RunConfig& c, const std::string& k, const std::string& v) {
                   if (v == "oracle") c.energy_mode = EnergyMode::Oracle;
                   else if (v == "learned") c.energy_mode = EnergyMode::Learned;
                   else throw ConfigError(k + ": expected oracle or learned, got '" + v + "'");
               },
               [](const RunConfig& c) { return std::string(c.energy_mode == EnergyMode::Oracle ? "oracle" : "learned"); }}},
        {"energy_checkpoint", SSMSNAKE_STRING(c.energy_checkpoint)},
        {"decay_kind",
         Field{[](RunConfig& c, const std::string& k, const std::string& v) {
                   try {
                       c.energy.kind = parse_decay_kind(v);
                   } catch (const Error&) {
                       throw ConfigError(k + ": expected lin, exp or log, got '" + v + "'");
                   }
               },
               [](const RunConfig& c) { return std::string(decay_kind_name(c.energy.kind)); }}},
        {"lambda_exp", SSMSNAKE_DOUBLE(c.energy.lambda_exp)},
        {"alpha_log", SSMSNAKE_DOUBLE(c.energy.alpha_log)},
        {"sigma_gauss", SSMSNAKE_DOUBLE(c.energy.sigma_gauss)},
        {"lambda_edge", SSMSNAKE_DOUBLE(c.energy.lambda_edge)},
        {"grad_floor", SSMSNAKE_DOUBLE(c.energy.grad_floor)},
        {"n_points", SSMSNAKE_SIZE(c.model.evo.n_points)},
        {"iterations", SSMSNAKE_SIZE(c.model.evo.iterations)},
        {"n_init", SSMSNAKE_SIZE(c.model.evo.n_init)},
        {"grid_m", SSMSNAKE_SIZE(c.model.evo.grid_m)},
        {"macro_hidden", SSMSNAKE_SIZE(c.model.evo.macro_hidden)},
        {"carry_state", SSMSNAKE_BOOL(c.model.evo.carry_state)},
        {"detach_stages", SSMSNAKE_BOOL(c.model.evo.detach_stages)},
        {"detach_iterations", SSMSNAKE_BOOL(c.model.evo.detach_iterations)},
        {"iteration_weight_growth", SSMSNAKE_DOUBLE(c.model.evo.iteration_weight_growth)},
        {"target_beta", SSMSNAKE_DOUBLE(c.model.evo.target_beta)},
        {"d_model", SSMSNAKE_SIZE(c.model.meb.d_model)},
        {"d_inner", SSMSNAKE_SIZE(c.model.meb.d_inner)},
        {"d_state", SSMSNAKE_SIZE(c.model.meb.d_state)},
        {"conv_width", SSMSNAKE_SIZE(c.model.meb.conv_width)},
        {"meb_depth", SSMSNAKE_SIZE(c.model.meb.depth)},
        {"head_hidden", SSMSNAKE_SIZE(c.model.head_hidden)},
        {"dcs_enabled", SSMSNAKE_BOOL(c.synergy.enabled)},
        {"w_d", SSMSNAKE_DOUBLE(c.synergy.w_d)},
        {"w_s", SSMSNAKE_DOUBLE(c.synergy.w_s)},
        {"a_ref", SSMSNAKE_DOUBLE(c.synergy.a_ref)},
        {"k_min", SSMSNAKE_DOUBLE(c.synergy.k_min)},
        {"k_max", SSMSNAKE_DOUBLE(c.synergy.k_max)},
        {"lambda_h", SSMSNAKE_DOUBLE(c.synergy.lambda_h)},
        {"lambda_s", SSMSNAKE_DOUBLE(c.synergy.lambda_s)},
        {"lr_start", SSMSNAKE_DOUBLE(c.lr_start)},
        {"lr_end", SSMSNAKE_DOUBLE(c.lr_end)},
        {"weight_decay", SSMSNAKE_DOUBLE(c.weight_decay)},
        {"epochs", SSMSNAKE_SIZE(c.epochs)},
        {"batch", SSMSNAKE_SIZE(c.batch)},
        {"jitter", SSMSNAKE_DOUBLE(c.jitter)},
        {"max_train_scenes", SSMSNAKE_SIZE(c.max_train_scenes)},
        {"energy_epochs", SSMSNAKE_SIZE(c.energy_epochs)},
        {"energy_lr", SSMSNAKE_DOUBLE(c.energy_lr)},
    };
    return f;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    const auto it = fields().find(key);
    if (it == fields().end()) throw ConfigError(key + ": unknown key");
    it->second.set(*this, key, value);
}

RunConfig RunConfig::parse(const std::string& text, const std::string& source) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        try {
            cfg.set(key, trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    cfg.validate();
    return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifact("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
}

void RunConfig::validate() const {
    energy.validate();
    model.validate();
    synergy.validate(false);
    if (energy_mode == EnergyMode::Learned && energy_checkpoint.empty())
        throw ConfigError("energy_checkpoint: required when energy_mode=learned");
    if (!(lr_start > 0)) throw ConfigError("lr_start: must be > 0");
    if (!(lr_end > 0) || lr_end > lr_start) throw ConfigError("lr_end: must be in (0, lr_start]");
    if (weight_decay < 0) throw ConfigError("weight_decay: must be >= 0");
    if (epochs < 1) throw ConfigError("epochs: must be >= 1");
    if (batch < 1) throw ConfigError("batch: must be >= 1");
    if (jitter < 0 || jitter > 0.5) throw ConfigError("jitter: must be in [0,0.5]");
    if (energy_epochs < 1) throw ConfigError("energy_epochs: must be >= 1");
    if (!(energy_lr > 0)) throw ConfigError("energy_lr: must be > 0");
}

std::string RunConfig::canonical() const {
    std::string out;
    for (const auto& [k, f] : fields()) out += k + "=" + f.get(*this) + "\n";
    return out;
}

std::uint64_t RunConfig::hash() const {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : canonical()) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace ssmsnake
