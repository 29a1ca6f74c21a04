#include "ssmsnake/diffcore.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "ssmsnake/errors.hpp"
#include "ssmsnake/kernels.hpp"

namespace ssmsnake {

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ')';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size())
        throw ShapeError("Tensor: shape " + shape_str(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
}

bool Tensor::all_finite() const {
    return kernels::active().all_finite(data_.data(), data_.size());
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ &&
           (a.data_.empty() ||
            std::memcmp(a.data_.data(), b.data_.data(), a.data_.size() * sizeof(double)) == 0);
}

// ---------------------------------------------------------------------------
// Var / Graph
// ---------------------------------------------------------------------------

const Tensor& Var::value() const { return graph_->nodes_[id_].value; }

double Var::item() const {
    const Tensor& v = value();
    if (v.size() != 1) throw ShapeError("item(): tensor of shape " + shape_str(v.shape()) + " is not scalar");
    return v[0];
}

bool Var::requires_grad() const { return graph_->nodes_[id_].needs_grad; }

namespace {

void require_finite(const char* op, const Tensor& t) {
    if (!t.all_finite()) throw NumericalError(std::string(op) + ": non-finite value");
}

}  // namespace

Var Graph::constant(Tensor value) {
    require_finite("constant", value);
    nodes_.push_back(Node{std::move(value), {}, false, nullptr});
    return Var(this, nodes_.size() - 1);
}

Var Graph::input(Tensor value, bool requires_grad) {
    require_finite("input", value);
    value.set_requires_grad(requires_grad);
    nodes_.push_back(Node{std::move(value), {}, requires_grad, nullptr});
    return Var(this, nodes_.size() - 1);
}

Var Graph::param(ParamStore& store, const std::string& name) {
    for (const Binding& b : bindings_)
        if (b.store == &store && b.name == name) return Var(this, b.node);
    Tensor v = store.value(name);
    require_finite(("param " + name).c_str(), v);
    v.set_requires_grad(true);
    nodes_.push_back(Node{std::move(v), {}, true, nullptr});
    bindings_.push_back(Binding{nodes_.size() - 1, &store, name});
    return Var(this, nodes_.size() - 1);
}

Var Graph::record(const char* op, Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
    return record(op, std::move(value), std::vector<Var>(parents), std::move(fn));
}

Var Graph::record(const char* op, Tensor value, const std::vector<Var>& parents, BackwardFn fn) {
    require_finite(op, value);
    bool needs = false;
    for (const Var& p : parents) {
        if (p.graph_ != this) throw Error(std::string(op) + ": operand from a different graph");
        needs = needs || nodes_[p.id_].needs_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(fn) : nullptr});
    return Var(this, nodes_.size() - 1);
}

double* Graph::grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return nullptr;
    if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
    return n.grad.data();
}

void Graph::backward(Var loss, BackwardOptions options) {
    if (loss.graph_ != this) throw Error("backward: loss belongs to another graph");
    if (nodes_[loss.id_].value.size() != 1)
        throw ShapeError("backward: output of shape " + shape_str(nodes_[loss.id_].value.shape()) +
                         " is not scalar");
    for (Node& n : nodes_) n.grad.clear();

    std::vector<ParamStore*> stores;
    for (const Binding& b : bindings_)
        if (std::find(stores.begin(), stores.end(), b.store) == stores.end()) stores.push_back(b.store);
    if (!options.accumulate)
        for (ParamStore* s : stores) s->zero_grad();

    if (nodes_[loss.id_].needs_grad) {
        grad_buffer(loss.id_)[0] = options.scale;
        for (std::size_t i = loss.id_ + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.backward || n.grad.empty()) continue;
            // Closure may append to nothing; nodes_ is not resized during backward.
            n.backward(*this, i);
        }
    }

    for (const Binding& b : bindings_) {
        const Node& n = nodes_[b.node];
        Tensor& g = b.store->grad(b.name);
        if (n.grad.empty()) continue;
        const auto& kt = kernels::active();
        kt.axpy(1.0, n.grad.data(), g.data().data(), g.size());
        if (!g.all_finite()) throw NumericalError("backward: non-finite gradient for " + b.name);
    }
    for (ParamStore* s : stores) s->set_grads_fresh(true);
}

Tensor Graph::grad(Var v) const {
    const Node& n = nodes_[v.id_];
    if (n.grad.empty()) return Tensor(n.value.shape(), 0.0);
    return Tensor(n.value.shape(), n.grad);
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------
namespace {

[[noreturn]] void shape_fail(const char* op, std::initializer_list<Shape> shapes, const std::string& why = {}) {
    std::ostringstream os;
    os << op << ": shape mismatch";
    bool first = true;
    for (const Shape& s : shapes) {
        os << (first ? " " : " vs ") << shape_str(s);
        first = false;
    }
    if (!why.empty()) os << " (" << why << ")";
    throw ShapeError(os.str());
}

enum class Bcast { Same, Scalar, Row };

Bcast broadcast_kind(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() == b.shape()) return Bcast::Same;
    if (b.size() == 1) return Bcast::Scalar;
    if (a.rank() >= 1 && b.size() == a.shape().back() && (b.rank() == 1 || (b.rank() == 2 && b.dim(0) == 1)))
        return Bcast::Row;
    shape_fail(op, {a.shape(), b.shape()});
}

template <class Fwd, class DA, class DB>
Var binary_op(const char* op, Var a, Var b, Fwd fwd, DA da, DB db) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    const Bcast kind = broadcast_kind(op, av, bv);
    const std::size_t n = av.size();
    const std::size_t bn = bv.size();
    Tensor out(av.shape());
    auto bidx = [&](std::size_t i) -> std::size_t {
        switch (kind) {
            case Bcast::Same: return i;
            case Bcast::Scalar: return 0;
            case Bcast::Row: return i % bn;
        }
        return 0;
    };
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[bidx(i)]);
    Graph& g = a.graph();
    const std::size_t ia = a.id(), ib = b.id();
    return g.record(op, std::move(out), {a, b}, [=](Graph& g, std::size_t self) {
        const auto& go = g.grad_of(self);
        const Tensor& av = g.value_of(ia);
        const Tensor& bv = g.value_of(ib);
        auto bi = [&](std::size_t i) -> std::size_t {
            return kind == Bcast::Same ? i : (kind == Bcast::Scalar ? 0 : i % bn);
        };
        if (double* ga = g.grad_buffer(ia))
            for (std::size_t i = 0; i < n; ++i) ga[i] += go[i] * da(av[i], bv[bi(i)]);
        if (double* gb = g.grad_buffer(ib))
            for (std::size_t i = 0; i < n; ++i) gb[bi(i)] += go[i] * db(av[i], bv[bi(i)]);
    });
}

template <class Fwd, class Deriv>
Var unary_op(const char* op, Var a, Fwd fwd, Deriv deriv) {
    const Tensor& av = a.value();
    Tensor out(av.shape());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
    const std::size_t ia = a.id();
    return a.graph().record(op, std::move(out), {a}, [=](Graph& g, std::size_t self) {
        const auto& go = g.grad_of(self);
        const Tensor& x = g.value_of(ia);
        const Tensor& y = g.value_of(self);
        if (double* ga = g.grad_buffer(ia))
            for (std::size_t i = 0; i < x.size(); ++i) ga[i] += go[i] * deriv(x[i], y[i]);
    });
}

double logistic(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

Var add(Var a, Var b) {
    return binary_op(
        "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
    return binary_op(
        "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
    return binary_op(
        "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
        [](double x, double) { return x; });
}

Var scale(Var a, double factor) {
    return unary_op(
        "scale", a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double value) {
    return unary_op(
        "add_scalar", a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Var sigmoid(Var a) {
    return unary_op(
        "sigmoid", a, logistic, [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
    return unary_op(
        "tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var a) {
    return unary_op(
        "relu", a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var exp(Var a) {
    return unary_op(
        "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
    for (double v : a.value().data())
        if (!(v > 0)) throw NumericalError("log: non-positive input");
    return unary_op(
        "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sqrt(Var a) {
    for (double v : a.value().data())
        if (!(v > 0)) throw NumericalError("sqrt: non-positive input");
    return unary_op(
        "sqrt", a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Var abs(Var a) {
    return unary_op(
        "abs", a, [](double x) { return std::fabs(x); },
        [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Var matmul(Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) shape_fail("matmul", {av.shape(), bv.shape()});
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    Tensor out({m, n});
    kernels::gemm_accumulate(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
    const std::size_t ia = a.id(), ib = b.id();
    return a.graph().record("matmul", std::move(out), {a, b}, [=](Graph& g, std::size_t self) {
        const double* go = g.grad_of(self).data();
        if (double* ga = g.grad_buffer(ia))  // dA = dC B^T
            kernels::gemm_nt_accumulate(go, g.value_of(ib).data().data(), ga, m, n, k);
        if (double* gb = g.grad_buffer(ib))  // dB = A^T dC
            kernels::gemm_tn_accumulate(g.value_of(ia).data().data(), go, gb, m, k, n);
    });
}

Var softmax(Var a) {
    const Tensor& av = a.value();
    if (av.rank() < 1 || av.size() == 0) shape_fail("softmax", {av.shape()});
    const std::size_t c = av.shape().back();
    const std::size_t rows = av.size() / c;
    Tensor out(av.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = av.data().data() + r * c;
        double* y = out.data().data() + r * c;
        const double mx = *std::max_element(x, x + c);
        double s = 0;
        for (std::size_t j = 0; j < c; ++j) s += (y[j] = std::exp(x[j] - mx));
        for (std::size_t j = 0; j < c; ++j) y[j] /= s;
    }
    const std::size_t ia = a.id();
    return a.graph().record("softmax", std::move(out), {a}, [=](Graph& g, std::size_t self) {
        double* ga = g.grad_buffer(ia);
        if (!ga) return;
        const auto& go = g.grad_of(self);
        const Tensor& y = g.value_of(self);
        for (std::size_t r = 0; r < rows; ++r) {
            double dotv = 0;
            for (std::size_t j = 0; j < c; ++j) dotv += go[r * c + j] * y[r * c + j];
            for (std::size_t j = 0; j < c; ++j) ga[r * c + j] += y[r * c + j] * (go[r * c + j] - dotv);
        }
    });
}

Var log_softmax(Var a) {
    const Tensor& av = a.value();
    if (av.rank() < 1 || av.size() == 0) shape_fail("log_softmax", {av.shape()});
    const std::size_t c = av.shape().back();
    const std::size_t rows = av.size() / c;
    Tensor out(av.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = av.data().data() + r * c;
        double* y = out.data().data() + r * c;
        const double mx = *std::max_element(x, x + c);
        double s = 0;
        for (std::size_t j = 0; j < c; ++j) s += std::exp(x[j] - mx);
        const double lse = mx + std::log(s);
        for (std::size_t j = 0; j < c; ++j) y[j] = x[j] - lse;
    }
    const std::size_t ia = a.id();
    return a.graph().record("log_softmax", std::move(out), {a}, [=](Graph& g, std::size_t self) {
        double* ga = g.grad_buffer(ia);
        if (!ga) return;
        const auto& go = g.grad_of(self);
        const Tensor& y = g.value_of(self);
        for (std::size_t r = 0; r < rows; ++r) {
            double s = 0;
            for (std::size_t j = 0; j < c; ++j) s += go[r * c + j];
            for (std::size_t j = 0; j < c; ++j) ga[r * c + j] += go[r * c + j] - std::exp(y[r * c + j]) * s;
        }
    });
}

Var sum(Var a) {
    const Tensor& av = a.value();
    double s = 0;
    for (double v : av.data()) s += v;
    const std::size_t ia = a.id();
    const std::size_t n = av.size();
    return a.graph().record("sum", Tensor::scalar(s), {a}, [=](Graph& g, std::size_t self) {
        if (double* ga = g.grad_buffer(ia)) {
            const double go = g.grad_of(self)[0];
            for (std::size_t i = 0; i < n; ++i) ga[i] += go;
        }
    });
}

Var mean(Var a) {
    const Tensor& av = a.value();
    if (av.size() == 0) shape_fail("mean", {av.shape()}, "empty");
    double s = 0;
    for (double v : av.data()) s += v;
    const std::size_t ia = a.id();
    const std::size_t n = av.size();
    return a.graph().record("mean", Tensor::scalar(s / static_cast<double>(n)), {a},
                            [=](Graph& g, std::size_t self) {
                                if (double* ga = g.grad_buffer(ia)) {
                                    const double go = g.grad_of(self)[0] / static_cast<double>(n);
                                    for (std::size_t i = 0; i < n; ++i) ga[i] += go;
                                }
                            });
}

Var circular_conv1d(Var x, Var kernel) {
    const Tensor& xv = x.value();
    const Tensor& kv = kernel.value();
    if (xv.rank() != 2 || kv.rank() != 2 || kv.dim(0) != xv.dim(1) || kv.dim(1) % 2 == 0)
        shape_fail("circular_conv1d", {xv.shape(), kv.shape()}, "need x (N,C), kernel (C,W) with W odd");
    const std::size_t n = xv.dim(0), c = xv.dim(1), w = kv.dim(1);
    if (n < w) shape_fail("circular_conv1d", {xv.shape(), kv.shape()}, "N smaller than kernel width");
    const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(w / 2);
    auto wrap = [n](std::ptrdiff_t i) {
        const std::ptrdiff_t nn = static_cast<std::ptrdiff_t>(n);
        return static_cast<std::size_t>(((i % nn) + nn) % nn);
    };
    Tensor out({n, c});
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t j = 0; j < w; ++j) {
            const std::size_t src = wrap(static_cast<std::ptrdiff_t>(k) + static_cast<std::ptrdiff_t>(j) - half);
            for (std::size_t ch = 0; ch < c; ++ch) out.at(k, ch) += kv.at(ch, j) * xv.at(src, ch);
        }
    const std::size_t ix = x.id(), ik = kernel.id();
    return x.graph().record("circular_conv1d", std::move(out), {x, kernel}, [=](Graph& g, std::size_t self) {
        const auto& go = g.grad_of(self);
        const Tensor& xv = g.value_of(ix);
        const Tensor& kv = g.value_of(ik);
        double* gx = g.grad_buffer(ix);
        double* gk = g.grad_buffer(ik);
        for (std::size_t k = 0; k < n; ++k)
            for (std::size_t j = 0; j < w; ++j) {
                const std::size_t src = wrap(static_cast<std::ptrdiff_t>(k) + static_cast<std::ptrdiff_t>(j) - half);
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const double gv = go[k * c + ch];
                    if (gx) gx[src * c + ch] += kv.at(ch, j) * gv;
                    if (gk) gk[ch * w + j] += xv.at(src, ch) * gv;
                }
            }
    });
}

namespace {

struct ConvGeom {
    std::size_t cin, h, w, cout, kh, kw, ho, wo, stride, dil, pad;
};

// col (cin*kh*kw, ho*wo)
void im2col(const double* x, const ConvGeom& g, double* col) {
    const std::size_t plane = g.ho * g.wo;
    for (std::size_t c = 0; c < g.cin; ++c)
        for (std::size_t ky = 0; ky < g.kh; ++ky)
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                double* row = col + ((c * g.kh + ky) * g.kw + kx) * plane;
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky * g.dil) -
                                              static_cast<std::ptrdiff_t>(g.pad);
                    double* dst = row + oy * g.wo;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
                        std::fill(dst, dst + g.wo, 0.0);
                        continue;
                    }
                    const double* src = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx * g.dil) -
                                                  static_cast<std::ptrdiff_t>(g.pad);
                        dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? 0.0 : src[ix];
                    }
                }
            }
}

void col2im_accumulate(const double* col, const ConvGeom& g, double* x) {
    const std::size_t plane = g.ho * g.wo;
    for (std::size_t c = 0; c < g.cin; ++c)
        for (std::size_t ky = 0; ky < g.kh; ++ky)
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const double* row = col + ((c * g.kh + ky) * g.kw + kx) * plane;
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky * g.dil) -
                                              static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    double* dst = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
                    const double* src = row + oy * g.wo;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx * g.dil) -
                                                  static_cast<std::ptrdiff_t>(g.pad);
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += src[ox];
                    }
                }
            }
}

}  // namespace

Var conv2d(Var x, Var weight, Var bias, Conv2dSpec spec) {
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    if (xv.rank() != 3 || wv.rank() != 4 || wv.dim(1) != xv.dim(0) || spec.stride == 0 || spec.dilation == 0)
        shape_fail("dilated_conv2d", {xv.shape(), wv.shape()}, "need x (Cin,H,W), weight (Cout,Cin,kh,kw)");
    ConvGeom geo{xv.dim(0), xv.dim(1), xv.dim(2), wv.dim(0), wv.dim(2), wv.dim(3), 0, 0,
                 spec.stride, spec.dilation, spec.padding};
    const std::ptrdiff_t eff_h = static_cast<std::ptrdiff_t>(geo.h + 2 * geo.pad) -
                                 static_cast<std::ptrdiff_t>(geo.dil * (geo.kh - 1) + 1);
    const std::ptrdiff_t eff_w = static_cast<std::ptrdiff_t>(geo.w + 2 * geo.pad) -
                                 static_cast<std::ptrdiff_t>(geo.dil * (geo.kw - 1) + 1);
    if (eff_h < 0 || eff_w < 0) shape_fail("dilated_conv2d", {xv.shape(), wv.shape()}, "kernel larger than input");
    geo.ho = static_cast<std::size_t>(eff_h) / geo.stride + 1;
    geo.wo = static_cast<std::size_t>(eff_w) / geo.stride + 1;
    const bool has_bias = bias.valid();
    if (has_bias && (bias.value().size() != geo.cout))
        shape_fail("dilated_conv2d", {wv.shape(), bias.value().shape()}, "bias length");

    const std::size_t kk = geo.cin * geo.kh * geo.kw;
    const std::size_t plane = geo.ho * geo.wo;
    auto col = std::make_shared<std::vector<double>>(kk * plane);
    im2col(xv.data().data(), geo, col->data());
    Tensor out({geo.cout, geo.ho, geo.wo});
    if (has_bias)
        for (std::size_t o = 0; o < geo.cout; ++o)
            std::fill(out.data().begin() + static_cast<std::ptrdiff_t>(o * plane),
                      out.data().begin() + static_cast<std::ptrdiff_t>((o + 1) * plane), bias.value()[o]);
    kernels::gemm_accumulate(wv.data().data(), col->data(), out.data().data(), geo.cout, kk, plane);

    const std::size_t ix = x.id(), iw = weight.id();
    const std::size_t ib = has_bias ? bias.id() : 0;
    std::vector<Var> parents{x, weight};
    if (has_bias) parents.push_back(bias);
    return x.graph().record("dilated_conv2d", std::move(out), parents, [=](Graph& g, std::size_t self) {
        const double* go = g.grad_of(self).data();
        if (double* gw = g.grad_buffer(iw)) kernels::gemm_nt_accumulate(go, col->data(), gw, geo.cout, plane, kk);
        if (has_bias)
            if (double* gb = g.grad_buffer(ib))
                for (std::size_t o = 0; o < geo.cout; ++o)
                    for (std::size_t p = 0; p < plane; ++p) gb[o] += go[o * plane + p];
        if (double* gx = g.grad_buffer(ix)) {
            std::vector<double> dcol(kk * plane, 0.0);
            kernels::gemm_tn_accumulate(g.value_of(iw).data().data(), go, dcol.data(), geo.cout, kk, plane);
            col2im_accumulate(dcol.data(), geo, gx);
        }
    });
}

Var upsample2x(Var x) {
    const Tensor& xv = x.value();
    if (xv.rank() != 3) shape_fail("upsample2x", {xv.shape()});
    const std::size_t c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    Tensor out({c, 2 * h, 2 * w});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < 2 * h; ++y)
            for (std::size_t xx = 0; xx < 2 * w; ++xx)
                out[(ch * 2 * h + y) * 2 * w + xx] = xv[(ch * h + y / 2) * w + xx / 2];
    const std::size_t ix = x.id();
    return x.graph().record("upsample2x", std::move(out), {x}, [=](Graph& g, std::size_t self) {
        double* gx = g.grad_buffer(ix);
        if (!gx) return;
        const auto& go = g.grad_of(self);
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t y = 0; y < 2 * h; ++y)
                for (std::size_t xx = 0; xx < 2 * w; ++xx)
                    gx[(ch * h + y / 2) * w + xx / 2] += go[(ch * 2 * h + y) * 2 * w + xx];
    });
}

namespace {

struct BilinearTap {
    std::size_t x0, y0;
    double fx, fy;
    bool clamp_x, clamp_y;
};

BilinearTap bilinear_tap(double px, double py, std::size_t h, std::size_t w) {
    BilinearTap t{};
    double u = px - 0.5, v = py - 0.5;
    const double umax = static_cast<double>(w - 1), vmax = static_cast<double>(h - 1);
    t.clamp_x = !(u > 0.0 && u < umax);
    t.clamp_y = !(v > 0.0 && v < vmax);
    u = std::clamp(u, 0.0, umax);
    v = std::clamp(v, 0.0, vmax);
    t.x0 = std::min(static_cast<std::size_t>(std::floor(u)), w >= 2 ? w - 2 : 0);
    t.y0 = std::min(static_cast<std::size_t>(std::floor(v)), h >= 2 ? h - 2 : 0);
    t.fx = w >= 2 ? u - static_cast<double>(t.x0) : 0.0;
    t.fy = h >= 2 ? v - static_cast<double>(t.y0) : 0.0;
    return t;
}

}  // namespace

Var bilinear_sample(Var feature, Var points) {
    const Tensor& fv = feature.value();
    const Tensor& pv = points.value();
    if (fv.rank() != 3 || pv.rank() != 2 || pv.dim(1) != 2)
        shape_fail("bilinear_sample", {fv.shape(), pv.shape()}, "need F (C,H,W), points (N,2)");
    const std::size_t c = fv.dim(0), h = fv.dim(1), w = fv.dim(2), n = pv.dim(0);
    if (h < 2 || w < 2) shape_fail("bilinear_sample", {fv.shape()}, "grid smaller than 2x2");
    const std::size_t plane = h * w;
    std::vector<BilinearTap> taps(n);
    Tensor out({n, c});
    for (std::size_t i = 0; i < n; ++i) {
        const BilinearTap t = taps[i] = bilinear_tap(pv.at(i, 0), pv.at(i, 1), h, w);
        const double w00 = (1 - t.fx) * (1 - t.fy), w01 = t.fx * (1 - t.fy), w10 = (1 - t.fx) * t.fy,
                     w11 = t.fx * t.fy;
        const std::size_t base = t.y0 * w + t.x0;
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* f = fv.data().data() + ch * plane + base;
            out.at(i, ch) = w00 * f[0] + w01 * f[1] + w10 * f[w] + w11 * f[w + 1];
        }
    }
    const std::size_t iff = feature.id(), ip = points.id();
    return feature.graph().record(
        "bilinear_sample", std::move(out), {feature, points},
        [=, taps = std::move(taps)](Graph& g, std::size_t self) {
            const auto& go = g.grad_of(self);
            const Tensor& fv = g.value_of(iff);
            double* gf = g.grad_buffer(iff);
            double* gp = g.grad_buffer(ip);
            for (std::size_t i = 0; i < n; ++i) {
                const BilinearTap& t = taps[i];
                const double w00 = (1 - t.fx) * (1 - t.fy), w01 = t.fx * (1 - t.fy), w10 = (1 - t.fx) * t.fy,
                             w11 = t.fx * t.fy;
                const std::size_t base = t.y0 * w + t.x0;
                double dx = 0, dy = 0;
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const double gv = go[i * c + ch];
                    if (gv == 0.0) continue;
                    if (gf) {
                        double* f = gf + ch * plane + base;
                        f[0] += w00 * gv;
                        f[1] += w01 * gv;
                        f[w] += w10 * gv;
                        f[w + 1] += w11 * gv;
                    }
                    if (gp) {
                        const double* f = fv.data().data() + ch * plane + base;
                        dx += gv * ((1 - t.fy) * (f[1] - f[0]) + t.fy * (f[w + 1] - f[w]));
                        dy += gv * ((1 - t.fx) * (f[w] - f[0]) + t.fx * (f[w + 1] - f[1]));
                    }
                }
                if (gp) {
                    if (!t.clamp_x) gp[2 * i] += dx;
                    if (!t.clamp_y) gp[2 * i + 1] += dy;
                }
            }
        });
}

Var gather_rows(Var a, std::vector<std::size_t> rows) {
    const Tensor& av = a.value();
    if (av.rank() != 2) shape_fail("gather", {av.shape()}, "need 2-D operand");
    const std::size_t m = av.dim(0), n = av.dim(1);
    for (std::size_t r : rows)
        if (r >= m) shape_fail("gather", {av.shape()}, "row index " + std::to_string(r) + " out of range");
    Tensor out({rows.size(), n});
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(av.data().data() + rows[i] * n, n, out.data().data() + i * n);
    const std::size_t ia = a.id();
    return a.graph().record("gather", std::move(out), {a}, [=, rows = std::move(rows)](Graph& g, std::size_t self) {
        double* ga = g.grad_buffer(ia);
        if (!ga) return;
        const auto& go = g.grad_of(self);
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t j = 0; j < n; ++j) ga[rows[i] * n + j] += go[i * n + j];
    });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no operands");
    if (axis > 1) throw ShapeError("concat: axis must be 0 or 1");
    const Tensor& first = parts.front().value();
    // Axis 0 accepts any rank with matching trailing dims; axis 1 is 2-D only.
    if (axis == 1 ? first.rank() != 2 : first.rank() == 0)
        shape_fail("concat", {first.shape()}, axis == 1 ? "need 2-D operands" : "need rank >= 1");
    const Shape trailing(first.shape().begin() + 1, first.shape().end());
    std::size_t rows = first.dim(0), cols = first.size() / std::max<std::size_t>(rows, 1);
    if (axis == 0) cols = shape_numel(trailing);
    std::size_t total = 0;
    for (const Var& p : parts) {
        const Tensor& v = p.value();
        const bool ok = axis == 0 ? v.rank() == first.rank() && Shape(v.shape().begin() + 1, v.shape().end()) == trailing
                                  : v.rank() == 2 && v.dim(0) == rows;
        if (!ok) shape_fail("concat", {first.shape(), v.shape()});
        total += v.dim(axis);
    }
    Shape out_shape = first.shape();
    out_shape[axis] = total;
    Tensor out(std::move(out_shape));
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const Var& p : parts) {
        const Tensor& v = p.value();
        offsets.push_back(off);
        if (axis == 0) {
            std::copy(v.data().begin(), v.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(off * cols));
        } else {
            const std::size_t pc = v.dim(1);
            for (std::size_t r = 0; r < rows; ++r)
                std::copy_n(v.data().data() + r * pc, pc, out.data().data() + r * total + off);
        }
        off += v.dim(axis);
    }
    std::vector<std::size_t> ids;
    std::vector<std::size_t> widths;
    for (const Var& p : parts) {
        ids.push_back(p.id());
        widths.push_back(p.value().dim(axis));
    }
    return parts.front().graph().record(
        "concat", std::move(out), parts, [=](Graph& g, std::size_t self) {
            const auto& go = g.grad_of(self);
            for (std::size_t k = 0; k < ids.size(); ++k) {
                double* gp = g.grad_buffer(ids[k]);
                if (!gp) continue;
                if (axis == 0) {
                    for (std::size_t i = 0; i < widths[k] * cols; ++i) gp[i] += go[offsets[k] * cols + i];
                } else {
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < widths[k]; ++j)
                            gp[r * widths[k] + j] += go[r * total + offsets[k] + j];
                }
            }
        });
}

Var reshape(Var a, Shape shape) {
    const Tensor& av = a.value();
    if (shape_numel(shape) != av.size()) shape_fail("reshape", {av.shape(), shape});
    Tensor out(std::move(shape), av.storage());
    const std::size_t ia = a.id();
    return a.graph().record("reshape", std::move(out), {a}, [=](Graph& g, std::size_t self) {
        if (double* ga = g.grad_buffer(ia)) {
            const auto& go = g.grad_of(self);
            kernels::active().axpy(1.0, go.data(), ga, go.size());
        }
    });
}

Var ssm_scan(Var x, Var b, Var c, Var gate, Var z0) {
    const Tensor& xv = x.value();
    const Tensor& bv = b.value();
    const Tensor& cv = c.value();
    const Tensor& gv = gate.value();
    const Tensor& zv = z0.value();
    if (xv.rank() != 2 || bv.rank() != 2 || cv.rank() != 2 || gv.rank() != 2 || zv.rank() != 2)
        shape_fail("ssm_scan", {xv.shape(), bv.shape(), cv.shape(), gv.shape(), zv.shape()}, "2-D operands");
    const std::size_t n = xv.dim(0), di = xv.dim(1), ds = bv.dim(1);
    if (bv.dim(0) != n || cv.dim(0) != n || cv.dim(1) != ds || gv.dim(0) != n || gv.dim(1) != 1 ||
        zv.dim(0) != ds || zv.dim(1) != di)
        shape_fail("ssm_scan", {xv.shape(), bv.shape(), cv.shape(), gv.shape(), zv.shape()});

    const auto& kt = kernels::active();
    // states[k] holds Z_k for k = 0..n (k = 0 is z0).
    auto states = std::make_shared<std::vector<double>>((n + 1) * ds * di);
    std::copy(zv.data().begin(), zv.data().end(), states->begin());
    Tensor out({n + ds, di});
    for (std::size_t k = 0; k < n; ++k) {
        double* zk = states->data() + (k + 1) * ds * di;
        std::copy_n(states->data() + k * ds * di, ds * di, zk);
        const double g = gv[k];
        const double* xk = xv.data().data() + k * di;
        double* yk = out.data().data() + k * di;
        for (std::size_t s = 0; s < ds; ++s) {
            kt.gated_accumulate(g, bv.at(k, s), xk, zk + s * di, di);
            kt.axpy(cv.at(k, s), zk + s * di, yk, di);
        }
    }
    std::copy_n(states->data() + n * ds * di, ds * di, out.data().data() + n * di);

    const std::size_t ix = x.id(), ib = b.id(), ic = c.id(), ig = gate.id(), iz = z0.id();
    return x.graph().record(
        "ssm_scan", std::move(out), {x, b, c, gate, z0}, [=](Graph& gr, std::size_t self) {
            const auto& kt = kernels::active();
            const auto& go = gr.grad_of(self);
            const Tensor& xv = gr.value_of(ix);
            const Tensor& bv = gr.value_of(ib);
            const Tensor& cv = gr.value_of(ic);
            const Tensor& gv = gr.value_of(ig);
            double* gx = gr.grad_buffer(ix);
            double* gb = gr.grad_buffer(ib);
            double* gc = gr.grad_buffer(ic);
            double* gg = gr.grad_buffer(ig);
            double* gz = gr.grad_buffer(iz);
            // G = dL/dZ_k, seeded with the gradient of the Z_N rows.
            std::vector<double> acc(go.begin() + static_cast<std::ptrdiff_t>(n * di), go.end());
            std::vector<double> pre(ds * di);
            for (std::size_t k = n; k-- > 0;) {
                const double* zk = states->data() + (k + 1) * ds * di;
                const double* zprev = states->data() + k * ds * di;
                const double* dy = go.data() + k * di;
                const double* xk = xv.data().data() + k * di;
                const double g = gv[k];
                for (std::size_t s = 0; s < ds; ++s) {
                    if (gc) gc[k * ds + s] += kt.dot(zk + s * di, dy, di);
                    kt.axpy(cv.at(k, s), dy, acc.data() + s * di, di);
                }
                // P = Z_{k-1} + B_k X_k^T ; Z_k = g P
                double dg = 0;
                for (std::size_t s = 0; s < ds; ++s) {
                    double* p = pre.data() + s * di;
                    std::copy_n(zprev + s * di, di, p);
                    kt.axpy(bv.at(k, s), xk, p, di);
                    dg += kt.dot(acc.data() + s * di, p, di);
                }
                if (gg) gg[k] += dg;
                for (double& v : acc) v *= g;  // now dL/dP
                for (std::size_t s = 0; s < ds; ++s) {
                    const double* dp = acc.data() + s * di;
                    if (gb) gb[k * ds + s] += kt.dot(dp, xk, di);
                    if (gx) kt.axpy(bv.at(k, s), dp, gx + k * di, di);
                }
            }
            if (gz) kt.axpy(1.0, acc.data(), gz, ds * di);
        });
}

// ---------------------------------------------------------------------------
// Generic dispatch
// ---------------------------------------------------------------------------

const char* op_name(OpKind kind) {
    switch (kind) {
        case OpKind::Matmul: return "matmul";
        case OpKind::Add: return "add";
        case OpKind::Mul: return "mul";
        case OpKind::Sigmoid: return "sigmoid";
        case OpKind::Softmax: return "softmax";
        case OpKind::Mean: return "mean";
        case OpKind::CircularConv1d: return "circular_conv1d";
        case OpKind::DilatedConv2d: return "dilated_conv2d";
        case OpKind::BilinearSample: return "bilinear_sample";
        case OpKind::Gather: return "gather";
        case OpKind::Concat: return "concat";
        case OpKind::Sqrt: return "sqrt";
        case OpKind::Log: return "log";
        case OpKind::Abs: return "abs";
    }
    return "?";
}

Var op_forward(OpKind kind, const std::vector<Var>& in, const OpAttrs& attrs) {
    auto need = [&](std::size_t k) {
        if (in.size() != k)
            throw ShapeError(std::string(op_name(kind)) + ": expected " + std::to_string(k) + " inputs, got " +
                             std::to_string(in.size()));
    };
    switch (kind) {
        case OpKind::Matmul: need(2); return matmul(in[0], in[1]);
        case OpKind::Add: need(2); return add(in[0], in[1]);
        case OpKind::Mul: need(2); return mul(in[0], in[1]);
        case OpKind::Sigmoid: need(1); return sigmoid(in[0]);
        case OpKind::Softmax: need(1); return softmax(in[0]);
        case OpKind::Mean: need(1); return mean(in[0]);
        case OpKind::CircularConv1d: need(2); return circular_conv1d(in[0], in[1]);
        case OpKind::DilatedConv2d:
            if (in.size() != 2 && in.size() != 3) need(3);
            return conv2d(in[0], in[1], in.size() == 3 ? in[2] : Var{},
                          Conv2dSpec{1, attrs.dilation, attrs.dilation * (in[1].value().dim(2) / 2)});
        case OpKind::BilinearSample: need(2); return bilinear_sample(in[0], in[1]);
        case OpKind::Gather: need(1); return gather_rows(in[0], attrs.indices);
        case OpKind::Concat: return concat(in, attrs.axis);
        case OpKind::Sqrt: need(1); return sqrt(in[0]);
        case OpKind::Log: need(1); return log(in[0]);
        case OpKind::Abs: need(1); return abs(in[0]);
    }
    throw Error("op_forward: unknown op");
}

}  // namespace ssmsnake
