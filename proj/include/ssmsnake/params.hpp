#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "ssmsnake/tensor.hpp"

namespace ssmsnake {

class Graph;
class Var;

// Named trainable tensors with parallel gradients. Names iterate sorted.
class ParamStore {
public:
    Tensor& add(const std::string& name, Tensor init);
    bool contains(const std::string& name) const { return entries_.count(name) != 0; }

    Tensor& value(const std::string& name);
    const Tensor& value(const std::string& name) const;
    Tensor& grad(const std::string& name);
    const Tensor& grad(const std::string& name) const;

    std::vector<std::string> names() const;
    std::size_t parameter_count() const;
    std::size_t size() const { return entries_.size(); }

    void zero_grad();
    bool grads_fresh() const { return grads_fresh_; }
    void set_grads_fresh(bool v) { grads_fresh_ = v; }

    // Binary format: "SSMSNAKE1\n" then per sorted name: u64 name length,
    // name bytes, u64 rank, u64 dims..., f64 values; all little-endian.
    void write(std::ostream& out) const;
    static ParamStore read(std::istream& in);
    void save(const std::filesystem::path& path) const;
    static ParamStore load(const std::filesystem::path& path);

    // Copies values of every name present in both stores.
    void copy_values_from(const ParamStore& other);

    // Same names, shapes and bitwise-equal values.
    friend bool operator==(const ParamStore& a, const ParamStore& b);

private:
    struct Entry {
        Tensor value;
        Tensor grad;
    };
    std::map<std::string, Entry> entries_;
    bool grads_fresh_ = false;
};

struct AdamWConfig {
    double lr_start = 1e-4;
    double lr_end = 1e-6;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
    std::int64_t total_steps = 1;
};

// Cosine-annealed learning rate at step t of total (t clamped to [0, total-1]).
double cosine_lr(double start, double end, std::int64_t step, std::int64_t total);

class AdamW {
public:
    explicit AdamW(AdamWConfig cfg);

    // Applies one update from the store's gradients; throws if they are stale.
    void step(ParamStore& params);

    double current_lr() const;
    std::int64_t step_count() const { return step_; }
    const AdamWConfig& config() const { return cfg_; }

private:
    AdamWConfig cfg_;
    std::int64_t step_ = 0;
    std::map<std::string, std::vector<double>> m_, v_;
};

// Draws N(0, std^2) entries into a new parameter.
Tensor random_normal(const Shape& shape, double std, std::mt19937_64& rng);
Tensor random_uniform(const Shape& shape, double lo, double hi, std::mt19937_64& rng);

// A differentiable fragment under test: setup fills the store from a seed,
// loss builds a scalar on a fresh graph.
struct GradFragment {
    std::function<void(ParamStore&, std::uint64_t seed)> setup;
    std::function<Var(Graph&, ParamStore&)> loss;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
    bool all_finite = true;
    std::string failure;  // set when an analytic gradient was non-finite
    double max_abs_grad = 0.0;
};

// Compares backward() against central differences (step h) for every
// parameter entry. Relative error uses max(1e-8, |numeric|) in the denominator.
GradCheckResult check_gradients(const GradFragment& fragment, std::uint64_t seed, double h = 1e-5);

}  // namespace ssmsnake
