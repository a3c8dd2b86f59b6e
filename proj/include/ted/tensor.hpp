#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace ted {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

namespace detail {
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until a gradient arrives
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
        : node_(std::make_shared<Node>()) {
        if (shape.empty()) throw std::invalid_argument("tensor shape must have at least one dimension");
        for (auto d : shape)
            if (d == 0) throw std::invalid_argument("tensor dimensions must be positive: " + shape_str(shape));
        if (shape_numel(shape) != data.size())
            throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
        node_->shape = std::move(shape);
        node_->data = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }
    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
    }
    static Tensor scalar(double value, bool requires_grad = false) {
        return Tensor({1}, {value}, requires_grad);
    }
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data,
                         bool requires_grad = false) {
        return Tensor({rows, cols}, std::move(data), requires_grad);
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t dim() const { return node_->shape.size(); }
    std::size_t size() const { return node_->data.size(); }
    std::size_t rows() const { return node_->shape.size() == 1 ? 1 : node_->shape[0]; }
    std::size_t cols() const { return node_->shape.back(); }

    std::span<const double> data() const { return node_->data; }
    // Mutable access is for parameter updates between steps, never mid-graph.
    std::span<double> mutable_data() { return node_->data; }
    double operator[](std::size_t i) const { return node_->data[i]; }
    double at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }
    double item() const {
        if (size() != 1) throw std::invalid_argument("item() requires a single-element tensor, got " + shape_str(shape()));
        return node_->data[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool value) { node_->requires_grad = value; }
    bool has_grad() const { return node_->grad.size() == node_->data.size(); }
    std::span<const double> grad() const {
        if (!has_grad()) throw std::runtime_error("gradient has not been computed for this tensor");
        return node_->grad;
    }
    std::span<double> mutable_grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
    }

    // Copy of the values with no graph history.
    Tensor detach() const { return Tensor(shape(), node_->data, false); }

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& node_ptr() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// Resets gradients of every tensor in the list; accumulation is never reset implicitly.
inline void zero_grads(std::span<Tensor> tensors) {
    for (auto& t : tensors) t.zero_grad();
}

namespace detail {

// Builds an op result. Graph edges are only recorded when grad mode is on and
// some parent requires a gradient.
inline Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                          std::function<void(Node&)> backward_fn) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    bool needs = false;
    if (grad_enabled())
        for (const auto& p : parents) needs = needs || p.requires_grad();
    if (needs) {
        node->requires_grad = true;
        node->is_leaf = false;
        node->parents.reserve(parents.size());
        for (auto& p : parents) node->parents.push_back(p.node_ptr());
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(node));
}

}  // namespace detail

// Topologically ordered record of the graph reachable from a scalar loss.
class Tape {
public:
    static Tape record(const Tensor& loss) {
        Tape tape;
        std::unordered_set<const Node*> visited;
        // Iterative post-order DFS; parents land before children.
        std::vector<std::pair<Node*, std::size_t>> stack;
        if (loss.requires_grad()) stack.emplace_back(loss.node(), 0);
        if (loss.requires_grad()) visited.insert(loss.node());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                Node* parent = node->parents[next++].get();
                if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
            } else {
                tape.order_.push_back(node);
                stack.pop_back();
            }
        }
        return tape;
    }

    const std::vector<Node*>& nodes() const { return order_; }
    std::size_t size() const { return order_.size(); }

    // Runs the backward rules in reverse order, seeding d(loss)/d(loss) = 1.
    void backward() const {
        if (order_.empty()) return;
        for (Node* n : order_)
            if (!n->is_leaf) {
                n->ensure_grad();
                std::fill(n->grad.begin(), n->grad.end(), 0.0);
            }
        Node* root = order_.back();
        root->ensure_grad();
        root->grad[0] += 1.0;
        for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
            Node* n = *it;
            if (n->backward_fn) n->backward_fn(*n);
        }
    }

private:
    std::vector<Node*> order_;
};

inline void backward(const Tensor& loss) {
    if (loss.size() != 1)
        throw std::invalid_argument("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    Tape::record(loss).backward();
}

}  // namespace ted
