#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "unlearn/common.hpp"

namespace unlearn {

// Shapes are row-major dimension lists; an empty shape is a scalar.
using Shape = std::vector<int>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Graph;

namespace detail {

struct TensorState {
    Shape shape;
    Eigen::ArrayXd values;
    Eigen::ArrayXd grad;   // size 0 means "no gradient yet"
    bool requires_grad = false;
    Graph* graph = nullptr;
    int node_id = -1;
};

} // namespace detail

// Dense f64 tensor with shared state. Copies are shallow handles; ops
// allocate fresh states. When a Graph is active (see GraphScope) every op
// result is recorded on its tape so backward() can reach it.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, Eigen::ArrayXd values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::initializer_list<double> values, bool requires_grad = false);
    static Tensor from_vector(Shape shape, const std::vector<double>& values, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(st_); }
    const Shape& shape() const { return st_->shape; }
    int rank() const { return static_cast<int>(st_->shape.size()); }
    int dim(int axis) const { return st_->shape[static_cast<std::size_t>(axis)]; }
    std::int64_t size() const { return st_->values.size(); }

    Eigen::ArrayXd& values() { return st_->values; }
    const Eigen::ArrayXd& values() const { return st_->values; }

    // Value of a rank-0/size-1 tensor.
    double value() const;

    // Row-major element access, mostly for tests and rendering.
    double at(std::initializer_list<int> idx) const;
    void set(std::initializer_list<int> idx, double v);

    bool requires_grad() const { return st_->requires_grad; }
    void set_requires_grad(bool rg) { st_->requires_grad = rg; }

    bool has_grad() const { return st_ && st_->grad.size() > 0; }
    Eigen::ArrayXd& grad();
    const Eigen::ArrayXd& grad() const;
    void accumulate_grad(const Eigen::ArrayXd& g);
    void zero_grad() { st_->grad.resize(0); }

    Graph* graph() const { return st_->graph; }
    int node_id() const { return st_->node_id; }

    // Identity comparison of the underlying state.
    bool same_state(const Tensor& other) const { return st_ == other.st_; }

    const std::shared_ptr<detail::TensorState>& state() const { return st_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorState> st) : st_(std::move(st)) {}
    std::shared_ptr<detail::TensorState> st_;

    friend class Graph;
};

// Gradient callback of one recorded op: receives the upstream adjoint of the
// node output and accumulator arrays for each input, in input order.
using BackwardFn =
    std::function<void(const Eigen::ArrayXd& upstream, const std::vector<Eigen::ArrayXd*>& input_adjoints)>;

// Reverse-mode tape. Nodes are appended in forward order; every input id of
// a node refers to an earlier node, so backward() is a single reverse sweep.
// One Graph must only ever be used from one thread at a time.
class Graph {
public:
    Graph() = default;
    ~Graph() { clear(); }
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Drops all recorded nodes and detaches their tensors. Leaf tensors keep
    // their values and any accumulated gradients.
    void clear();

    std::size_t node_count() const { return nodes_.size(); }
    const std::string& node_op(int id) const { return nodes_[static_cast<std::size_t>(id)].op; }
    const std::vector<int>& node_inputs(int id) const { return nodes_[static_cast<std::size_t>(id)].inputs; }

    // Thread-local active tape, set by GraphScope. Null when not recording.
    static Graph* active();

    // Attaches a tensor as a leaf node if not already on this tape.
    int ensure_leaf(const Tensor& t);

    // Records one op and returns its output tensor, attached to this tape.
    Tensor record(std::string op, const std::vector<Tensor>& inputs, Shape out_shape,
                  Eigen::ArrayXd out_values, BackwardFn backward_fn);

private:
    struct Node {
        std::string op;
        std::vector<int> inputs;
        std::shared_ptr<detail::TensorState> out;
        BackwardFn backward;
    };

    std::vector<Node> nodes_;

    friend void backward(const Tensor& loss);
};

// RAII activation of a tape on the current thread. Scopes nest; the previous
// active tape is restored on destruction.
class GraphScope {
public:
    explicit GraphScope(Graph& g);
    ~GraphScope();
    GraphScope(const GraphScope&) = delete;
    GraphScope& operator=(const GraphScope&) = delete;

private:
    Graph* previous_;
};

// Reverse sweep from a scalar loss. Every requires_grad tensor reachable
// from the loss receives its gradient, added onto whatever was already in
// its grad buffer; resetting is explicit via zero_grad().
void backward(const Tensor& loss);

} // namespace unlearn
