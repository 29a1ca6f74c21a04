#include "ssmsnake/params.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "ssmsnake/diffcore.hpp"
#include "ssmsnake/errors.hpp"

namespace ssmsnake {

namespace {

constexpr char kMagic[] = "SSMSNAKE1\n";
constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;

void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& in, const char* what) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8))
        throw FormatError(std::string("param file: truncated while reading ") + what + " at offset " +
                          std::to_string(static_cast<long long>(in.tellg())));
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

Tensor& ParamStore::add(const std::string& name, Tensor init) {
    if (entries_.count(name)) throw Error("ParamStore: duplicate parameter " + name);
    Tensor grad(init.shape(), 0.0);
    init.set_requires_grad(true);
    auto [it, ok] = entries_.emplace(name, Entry{std::move(init), std::move(grad)});
    return it->second.value;
}

Tensor& ParamStore::value(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw Error("ParamStore: unknown parameter " + name);
    return it->second.value;
}

const Tensor& ParamStore::value(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw Error("ParamStore: unknown parameter " + name);
    return it->second.value;
}

Tensor& ParamStore::grad(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw Error("ParamStore: unknown parameter " + name);
    return it->second.grad;
}

const Tensor& ParamStore::grad(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw Error("ParamStore: unknown parameter " + name);
    return it->second.grad;
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
}

std::size_t ParamStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [k, v] : entries_) n += v.value.size();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& [k, v] : entries_) v.grad.fill(0.0);
    grads_fresh_ = false;
}

void ParamStore::write(std::ostream& out) const {
    static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
    out.write(kMagic, kMagicLen);
    for (const auto& [name, e] : entries_) {
        put_u64(out, name.size());
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u64(out, e.value.rank());
        for (std::size_t d : e.value.shape()) put_u64(out, d);
        for (double v : e.value.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
}

ParamStore ParamStore::read(std::istream& in) {
    char magic[kMagicLen];
    if (!in.read(magic, kMagicLen) || std::memcmp(magic, kMagic, kMagicLen) != 0)
        throw FormatError("param file: bad header (expected SSMSNAKE1)");
    ParamStore store;
    while (in.peek() != std::char_traits<char>::eof()) {
        const std::uint64_t len = get_u64(in, "name length");
        if (len > 4096) throw FormatError("param file: implausible name length " + std::to_string(len));
        std::string name(len, '\0');
        if (!in.read(name.data(), static_cast<std::streamsize>(len))) throw FormatError("param file: truncated name");
        const std::uint64_t rank = get_u64(in, "rank");
        if (rank > 8) throw FormatError("param file: implausible rank for " + name);
        Shape shape;
        for (std::uint64_t r = 0; r < rank; ++r) shape.push_back(get_u64(in, "dim"));
        std::vector<double> data(shape_numel(shape));
        for (double& v : data) v = std::bit_cast<double>(get_u64(in, "value"));
        store.add(name, Tensor(shape, std::move(data)));
    }
    return store;
}

void ParamStore::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    write(out);
    if (!out) throw Error("write failed: " + path.string());
}

ParamStore ParamStore::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifact("cannot open parameter file " + path.string());
    return read(in);
}

void ParamStore::copy_values_from(const ParamStore& other) {
    for (auto& [name, e] : entries_) {
        auto it = other.entries_.find(name);
        if (it == other.entries_.end()) continue;
        if (it->second.value.shape() != e.value.shape())
            throw ShapeError("copy_values_from: shape mismatch for " + name);
        e.value.storage() = it->second.value.storage();
    }
}

bool operator==(const ParamStore& a, const ParamStore& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    auto ia = a.entries_.begin();
    auto ib = b.entries_.begin();
    for (; ia != a.entries_.end(); ++ia, ++ib)
        if (ia->first != ib->first || !(ia->second.value == ib->second.value)) return false;
    return true;
}

// ---------------------------------------------------------------------------

double cosine_lr(double start, double end, std::int64_t step, std::int64_t total) {
    if (total <= 1) return start;
    const double t = static_cast<double>(std::clamp<std::int64_t>(step, 0, total - 1)) / static_cast<double>(total - 1);
    return end + (start - end) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

AdamW::AdamW(AdamWConfig cfg) : cfg_(cfg) {
    if (cfg_.total_steps < 1) throw ConfigError("AdamW: total_steps must be >= 1");
    if (!(cfg_.lr_end <= cfg_.lr_start) || cfg_.lr_end < 0) throw ConfigError("AdamW: need 0 <= lr_end <= lr_start");
}

double AdamW::current_lr() const { return cosine_lr(cfg_.lr_start, cfg_.lr_end, step_, cfg_.total_steps); }

void AdamW::step(ParamStore& params) {
    if (!params.grads_fresh()) throw Error("AdamW::step: gradients are stale or absent (call backward first)");
    const double lr = current_lr();
    const double t = static_cast<double>(step_ + 1);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
    for (const std::string& name : params.names()) {
        Tensor& p = params.value(name);
        const Tensor& g = params.grad(name);
        auto& m = m_[name];
        auto& v = v_[name];
        if (m.size() != p.size()) {
            m.assign(p.size(), 0.0);
            v.assign(p.size(), 0.0);
        }
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = cfg_.beta1 * m[i] + (1 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1 - cfg_.beta2) * g[i] * g[i];
            const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps) + cfg_.weight_decay * p[i];
            p[i] -= lr * update;
        }
    }
    ++step_;
    params.set_grads_fresh(false);
}

Tensor random_normal(const Shape& shape, double std, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, std);
    Tensor t(shape);
    for (double& v : t.data()) v = dist(rng);
    return t;
}

Tensor random_uniform(const Shape& shape, double lo, double hi, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor t(shape);
    for (double& v : t.data()) v = dist(rng);
    return t;
}

// ---------------------------------------------------------------------------

GradCheckResult check_gradients(const GradFragment& fragment, std::uint64_t seed, double h) {
    ParamStore params;
    fragment.setup(params, seed);
    if (params.parameter_count() > 50000)
        throw Error("check_gradients: fragment has " + std::to_string(params.parameter_count()) +
                    " parameters (limit 50000)");
    {
        Graph g;
        Var loss = fragment.loss(g, params);
        g.backward(loss);
    }
    GradCheckResult result;
    auto eval = [&]() {
        Graph g;
        return fragment.loss(g, params).item();
    };
    for (const std::string& name : params.names()) {
        const Tensor analytic = params.grad(name);
        Tensor& value = params.value(name);
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double a = analytic[i];
            if (!std::isfinite(a)) {
                result.all_finite = false;
                result.failure = "non-finite analytic gradient for " + name + "[" + std::to_string(i) + "]";
                result.max_rel_error = std::numeric_limits<double>::infinity();
                result.worst_param = name;
                result.worst_index = i;
                return result;
            }
            const double orig = value[i];
            value[i] = orig + h;
            const double fp = eval();
            value[i] = orig - h;
            const double fm = eval();
            value[i] = orig;
            const double numeric = (fp - fm) / (2 * h);
            const double rel = std::fabs(a - numeric) / std::max(1e-8, std::fabs(numeric));
            result.max_abs_grad = std::max(result.max_abs_grad, std::fabs(a));
            ++result.checked;
            if (rel > result.max_rel_error || result.worst_param.empty()) {
                result.max_rel_error = std::max(result.max_rel_error, rel);
                if (rel >= result.max_rel_error) {
                    result.worst_param = name;
                    result.worst_index = i;
                }
            }
        }
    }
    return result;
}

}  // namespace ssmsnake
