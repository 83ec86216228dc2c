#include "unlearn/tensor.hpp"

#include <sstream>
#include <utility>

namespace unlearn {

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, Eigen::ArrayXd values, bool requires_grad) {
    for (int d : shape) {
        if (d <= 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    }
    if (numel(shape) != values.size()) {
        throw DimensionError("shape " + shape_str(shape) + " does not match value count " +
                             std::to_string(values.size()));
    }
    st_ = std::make_shared<detail::TensorState>();
    st_->shape = std::move(shape);
    st_->values = std::move(values);
    st_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    Eigen::ArrayXd v = Eigen::ArrayXd::Zero(numel(shape));
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    Eigen::ArrayXd v = Eigen::ArrayXd::Constant(numel(shape), value);
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return full(Shape{}, value, requires_grad);
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> values, bool requires_grad) {
    Eigen::ArrayXd v(static_cast<std::int64_t>(values.size()));
    std::int64_t i = 0;
    for (double x : values) v[i++] = x;
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::from_vector(Shape shape, const std::vector<double>& values, bool requires_grad) {
    Eigen::ArrayXd v(static_cast<std::int64_t>(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i) v[static_cast<std::int64_t>(i)] = values[i];
    return Tensor(std::move(shape), std::move(v), requires_grad);
}

double Tensor::value() const {
    if (size() != 1) throw ContractError("Tensor::value requires a scalar, got shape " + shape_str(shape()));
    return st_->values[0];
}

static std::int64_t flat_index(const Shape& shape, std::initializer_list<int> idx) {
    if (idx.size() != shape.size()) {
        throw DimensionError("index rank does not match tensor rank " + shape_str(shape));
    }
    std::int64_t flat = 0;
    std::size_t axis = 0;
    for (int i : idx) {
        if (i < 0 || i >= shape[axis]) throw DimensionError("index out of bounds for " + shape_str(shape));
        flat = flat * shape[axis] + i;
        ++axis;
    }
    return flat;
}

double Tensor::at(std::initializer_list<int> idx) const {
    return st_->values[flat_index(st_->shape, idx)];
}

void Tensor::set(std::initializer_list<int> idx, double v) {
    st_->values[flat_index(st_->shape, idx)] = v;
}

Eigen::ArrayXd& Tensor::grad() {
    if (!has_grad()) throw ContractError("tensor has no gradient; call backward() first");
    return st_->grad;
}

const Eigen::ArrayXd& Tensor::grad() const {
    if (!has_grad()) throw ContractError("tensor has no gradient; call backward() first");
    return st_->grad;
}

void Tensor::accumulate_grad(const Eigen::ArrayXd& g) {
    if (st_->grad.size() == 0) st_->grad = Eigen::ArrayXd::Zero(st_->values.size());
    st_->grad += g;
}

namespace {
thread_local Graph* t_active_graph = nullptr;
} // namespace

Graph* Graph::active() { return t_active_graph; }

GraphScope::GraphScope(Graph& g) : previous_(t_active_graph) { t_active_graph = &g; }

GraphScope::~GraphScope() { t_active_graph = previous_; }

void Graph::clear() {
    for (Node& n : nodes_) {
        if (n.out && n.out->graph == this) {
            n.out->graph = nullptr;
            n.out->node_id = -1;
        }
    }
    nodes_.clear();
}

int Graph::ensure_leaf(const Tensor& t) {
    auto& st = *t.state();
    if (st.graph == this) return st.node_id;
    if (st.graph != nullptr) {
        throw ContractError("tensor already belongs to a different graph");
    }
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{"leaf", {}, t.state(), nullptr});
    st.graph = this;
    st.node_id = id;
    return id;
}

Tensor Graph::record(std::string op, const std::vector<Tensor>& inputs, Shape out_shape,
                     Eigen::ArrayXd out_values, BackwardFn backward_fn) {
    std::vector<int> input_ids;
    input_ids.reserve(inputs.size());
    bool needs_grad = false;
    for (const Tensor& in : inputs) {
        input_ids.push_back(ensure_leaf(in));
        needs_grad = needs_grad || in.requires_grad();
    }
    Tensor out(std::move(out_shape), std::move(out_values), needs_grad);
    auto& st = *out.state();
    st.graph = this;
    st.node_id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{std::move(op), std::move(input_ids), out.state(), std::move(backward_fn)});
    return out;
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw ContractError("backward requires a scalar loss" +
                            (loss.defined() ? ", got shape " + shape_str(loss.shape()) : std::string()));
    }
    Graph* g = loss.graph();
    if (g == nullptr) throw ContractError("backward requires a graph-attached loss");
    if (!std::isfinite(loss.value())) throw NumericError("backward: loss value is not finite");

    const int root = loss.node_id();
    std::vector<Eigen::ArrayXd> adjoint(static_cast<std::size_t>(root) + 1);
    adjoint[static_cast<std::size_t>(root)] = Eigen::ArrayXd::Ones(1);

    std::vector<Eigen::ArrayXd*> input_adjoints;
    for (int id = root; id >= 0; --id) {
        Eigen::ArrayXd& up = adjoint[static_cast<std::size_t>(id)];
        if (up.size() == 0) continue;
        Graph::Node& node = g->nodes_[static_cast<std::size_t>(id)];
        if (!up.allFinite()) {
            throw NumericError("backward: non-finite gradient at node '" + node.op + "' (id " +
                               std::to_string(id) + ")");
        }
        if (!node.out->values.allFinite()) {
            throw NumericError("backward: non-finite values at node '" + node.op + "' (id " +
                               std::to_string(id) + ")");
        }
        if (!node.backward) continue;
        input_adjoints.clear();
        for (int in_id : node.inputs) {
            Eigen::ArrayXd& a = adjoint[static_cast<std::size_t>(in_id)];
            if (a.size() == 0) {
                a = Eigen::ArrayXd::Zero(g->nodes_[static_cast<std::size_t>(in_id)].out->values.size());
            }
            input_adjoints.push_back(&a);
        }
        node.backward(up, input_adjoints);
    }

    for (int id = 0; id <= root; ++id) {
        const Eigen::ArrayXd& a = adjoint[static_cast<std::size_t>(id)];
        if (a.size() == 0) continue;
        detail::TensorState& st = *g->nodes_[static_cast<std::size_t>(id)].out;
        if (!st.requires_grad) continue;
        if (st.grad.size() == 0) st.grad = Eigen::ArrayXd::Zero(st.values.size());
        st.grad += a;
    }
}

} // namespace unlearn
