#pragma once
// Reverse-mode differentiation over a fixed set of tensor operations.
//
// A Graph is a tape: every op appends a node holding its value and a closure
// that scatters the node's gradient back to its parents. Parameters are bound
// from a ParamStore so that Graph::backward leaves their gradients in the
// store for the optimizer.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "ssmsnake/params.hpp"
#include "ssmsnake/tensor.hpp"

namespace ssmsnake {

class Graph;

// Handle to a node on a Graph tape. Cheap to copy.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t size() const { return value().size(); }
    double item() const;
    bool requires_grad() const;
    bool valid() const { return graph_ != nullptr; }
    Graph& graph() const { return *graph_; }
    std::size_t id() const { return id_; }

private:
    friend class Graph;
    Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}
    Graph* graph_ = nullptr;
    std::size_t id_ = 0;
};

class Graph {
public:
    using BackwardFn = std::function<void(Graph&, std::size_t self)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Value that never receives a gradient.
    Var constant(Tensor value);
    // Leaf input; when requires_grad its gradient is readable via grad() after backward.
    Var input(Tensor value, bool requires_grad = true);
    // Parameter leaf bound to store[name]; repeated calls return the same node.
    Var param(ParamStore& store, const std::string& name);

    struct BackwardOptions {
        // Add into existing store gradients instead of resetting them first.
        bool accumulate = false;
        // Multiplier applied to d(loss)/d(loss).
        double scale = 1.0;
    };
    // Reverse pass from a scalar output. Every bound store is marked fresh;
    // parameters not reached by the loss end up with zero gradient.
    void backward(Var loss, BackwardOptions options);
    void backward(Var loss) { backward(loss, BackwardOptions{}); }

    // Gradient of an input leaf after backward (empty tensor if none reached it).
    Tensor grad(Var v) const;

    std::size_t node_count() const { return nodes_.size(); }

    // --- op-author interface ---------------------------------------------
    Var record(const char* op, Tensor value, std::initializer_list<Var> parents, BackwardFn fn);
    Var record(const char* op, Tensor value, const std::vector<Var>& parents, BackwardFn fn);
    const Tensor& value_of(std::size_t id) const { return nodes_[id].value; }
    bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
    // Gradient buffer of node id, or nullptr when that node does not need one.
    double* grad_buffer(std::size_t id);
    const std::vector<double>& grad_of(std::size_t id) const { return nodes_[id].grad; }

private:
    friend class Var;
    struct Node {
        Tensor value;
        std::vector<double> grad;
        bool needs_grad = false;
        BackwardFn backward;
    };
    struct Binding {
        std::size_t node;
        ParamStore* store;
        std::string name;
    };
    std::vector<Node> nodes_;
    std::vector<Binding> bindings_;
};

// ---------------------------------------------------------------------------
// Operations. Shape errors throw ShapeError naming the op and shapes; any
// non-finite result throws NumericalError.
// ---------------------------------------------------------------------------

// Elementwise with broadcasting of b: same shape, a single element, or a
// vector matching the last dimension of a (row broadcast).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double value);

Var matmul(Var a, Var b);  // (m,k) x (k,n)

Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);    // requires a > 0
Var sqrt(Var a);   // requires a > 0
Var abs(Var a);

// Along the last dimension.
Var softmax(Var a);
Var log_softmax(Var a);

Var mean(Var a);  // -> shape {1}
Var sum(Var a);   // -> shape {1}

// Depthwise convolution on a ring: x (N,C), kernel (C,W) with W odd, taps at
// offsets -(W-1)/2 .. +(W-1)/2:  y[k][c] = sum_j kernel[c][j] * x[(k + off_j) mod N][c].
Var circular_conv1d(Var x, Var kernel);

struct Conv2dSpec {
    std::size_t stride = 1;
    std::size_t dilation = 1;
    std::size_t padding = 1;
};
// x (Cin,H,W), weight (Cout,Cin,kh,kw), bias (Cout) or an invalid Var; zero padding.
Var conv2d(Var x, Var weight, Var bias, Conv2dSpec spec);
// Nearest-neighbour 2x upsampling of (C,H,W).
Var upsample2x(Var x);

// Samples F (C,H,W) at points (N,2) given as (x,y) image coordinates where grid
// site (r,c) sits at (c+0.5, r+0.5). Points outside clamp to the border.
// Returns (N,C).
Var bilinear_sample(Var feature, Var points);

Var gather_rows(Var a, std::vector<std::size_t> rows);  // (m,n) -> (k,n)
Var concat(const std::vector<Var>& parts, std::size_t axis);  // axis 0: any rank; axis 1: 2-D
Var reshape(Var a, Shape shape);

// Scalar-gated state-space scan.
//   Z_k = g_k * (Z_{k-1} + B_k X_k^T),  Z_0 = z0,  Y_k = C_k^T Z_k
// X (N,Di), B (N,Ds), C (N,Ds), g (N,1), z0 (Ds,Di).
// Returns (N+Ds, Di): rows [0,N) are Y, rows [N,N+Ds) are Z_N.
Var ssm_scan(Var x, Var b, Var c, Var gate, Var z0);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

// Generic dispatch over the base op set, used by the gradient harness.
enum class OpKind {
    Matmul,
    Add,
    Mul,
    Sigmoid,
    Softmax,
    Mean,
    CircularConv1d,
    DilatedConv2d,
    BilinearSample,
    Gather,
    Concat,
    Sqrt,
    Log,
    Abs,
};
struct OpAttrs {
    std::size_t dilation = 1;
    std::vector<std::size_t> indices;  // Gather
    std::size_t axis = 1;              // Concat
};
Var op_forward(OpKind kind, const std::vector<Var>& inputs, const OpAttrs& attrs = {});
const char* op_name(OpKind kind);

}  // namespace ssmsnake
