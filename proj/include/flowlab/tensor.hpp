#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace flowlab {

// Raised when a computation produces NaN/Inf from finite inputs. Non-finite
// values are an error condition everywhere in this library, never silent.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<Eigen::Index>;

inline Eigen::Index shape_numel(const Shape& shape) {
    Eigen::Index n = 1;
    for (Eigen::Index d : shape) {
        if (d <= 0) throw std::invalid_argument("shape dimensions must be positive");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

template <class Scalar>
struct TensorNode {
    using Vec = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

    Vec value;
    Vec grad;  // sized lazily by backward()
    Shape shape;
    bool requires_grad = false;  // leaf flag; interior nodes track need via parents
    const char* op = "leaf";
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backprop;  // reads own grad, accumulates into parents

    bool is_interior() const { return static_cast<bool>(backprop); }
    bool needs_grad() const { return requires_grad || is_interior(); }
};

// Dense N-dimensional array with optional reverse-mode gradient participation.
// Handle semantics: copies share the underlying node. Storage is flat; 2-D
// tensors are column-major [rows, cols], image tensors index as c*H*W + y*W + x.
template <class Scalar>
class TensorT {
public:
    using Node = TensorNode<Scalar>;
    using Vec = typename Node::Vec;

    TensorT() = default;

    static TensorT leaf(Shape shape, Vec values, bool requires_grad = false) {
        if (values.size() != shape_numel(shape))
            throw std::invalid_argument("leaf: data length does not match shape " + shape_str(shape));
        TensorT t;
        t.node_ = std::make_shared<Node>();
        t.node_->value = std::move(values);
        t.node_->shape = std::move(shape);
        t.node_->requires_grad = requires_grad;
        return t;
    }

    static TensorT zeros(Shape shape, bool requires_grad = false) {
        const Eigen::Index n = shape_numel(shape);
        return leaf(std::move(shape), Vec::Zero(n), requires_grad);
    }

    static TensorT full(Shape shape, Scalar fill, bool requires_grad = false) {
        const Eigen::Index n = shape_numel(shape);
        return leaf(std::move(shape), Vec::Constant(n, fill), requires_grad);
    }

    static TensorT scalar(Scalar v) { return full({1}, v); }

    static TensorT from_data(Shape shape, const std::vector<Scalar>& data, bool requires_grad = false) {
        Vec v(static_cast<Eigen::Index>(data.size()));
        for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = data[static_cast<std::size_t>(i)];
        return leaf(std::move(shape), std::move(v), requires_grad);
    }

    // Interior-node constructor used by operations.
    static TensorT op_result(Shape shape, Vec values, const char* op,
                             std::vector<std::shared_ptr<Node>> parents,
                             std::function<void(Node&)> backprop) {
        TensorT t = leaf(std::move(shape), std::move(values), false);
        t.node_->op = op;
        t.node_->parents = std::move(parents);
        t.node_->backprop = std::move(backprop);
        return t;
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    Eigen::Index size() const { return node_->value.size(); }
    Eigen::Index dim(std::size_t i) const { return node_->shape.at(i); }
    Eigen::Index ndim() const { return static_cast<Eigen::Index>(node_->shape.size()); }

    const Vec& values() const { return node_->value; }
    Vec& values_mut() { return node_->value; }

    Scalar item() const {
        if (size() != 1) throw std::invalid_argument("item: tensor is not scalar");
        return node_->value[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    bool needs_grad() const { return node_->needs_grad(); }

    const Vec& grad() const {
        if (node_->grad.size() != node_->value.size())
            throw std::runtime_error("grad: not populated; run backward() first");
        return node_->grad;
    }

    void zero_grad() { node_->grad = Vec::Zero(node_->value.size()); }

    bool all_finite() const { return node_->value.isFinite().all(); }

    std::shared_ptr<Node> node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

using Tensor = TensorT<double>;

namespace detail {

template <class Scalar>
void topo_visit(const std::shared_ptr<TensorNode<Scalar>>& node,
                std::unordered_set<TensorNode<Scalar>*>& seen,
                std::vector<std::shared_ptr<TensorNode<Scalar>>>& order) {
    // Iterative post-order DFS; graphs can be deep for long sampling chains.
    struct Frame {
        std::shared_ptr<TensorNode<Scalar>> node;
        std::size_t next_parent = 0;
    };
    std::vector<Frame> stack;
    if (!seen.insert(node.get()).second) return;
    stack.push_back({node});
    while (!stack.empty()) {
        Frame& top = stack.back();
        if (top.next_parent < top.node->parents.size()) {
            auto parent = top.node->parents[top.next_parent++];
            if (seen.insert(parent.get()).second) stack.push_back({parent});
        } else {
            order.push_back(top.node);
            stack.pop_back();
        }
    }
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss. Interior-node grads are reset,
// leaf grads are accumulated (callers zero parameter grads between steps).
template <class Scalar>
void backward(const TensorT<Scalar>& loss) {
    using Node = TensorNode<Scalar>;
    if (loss.size() != 1) throw std::invalid_argument("backward: loss must be scalar");

    std::unordered_set<Node*> seen;
    std::vector<std::shared_ptr<Node>> order;
    detail::topo_visit(loss.node(), seen, order);

    for (auto& n : order) {
        if (!n->value.isFinite().all())
            throw NumericError(std::string("non-finite value produced by op '") + n->op + "'");
        if (n->is_interior() || n->grad.size() != n->value.size())
            n->grad = Node::Vec::Zero(n->value.size());
    }

    loss.node()->grad[0] = Scalar(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backprop) (*it)->backprop(**it);
    }
}

}  // namespace flowlab
