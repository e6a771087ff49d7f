#pragma once

#include <cmath>
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

namespace reprompt::numerics {

using Shape = std::vector<std::size_t>;

class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    // Empty means "absent".
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this->grad and accumulates into the parents' grads.
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
    }
};

inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

}  // namespace detail

/// True when operations record gradient rules. Disabled inside a NoGradGuard.
inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// RAII scope that suspends graph recording (evaluation, optimizer updates).
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Dense row-major float64 array with an optional gradient. Copies share storage.
class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>()) {
        if (shape_size(shape) != data.size()) {
            throw DimensionError("tensor shape " + shape_string(shape) + " does not match " +
                                 std::to_string(data.size()) + " values");
        }
        for (std::size_t d : shape) {
            if (d == 0) throw DimensionError("tensor shape " + shape_string(shape) + " has a zero dimension");
        }
        node_->shape = std::move(shape);
        node_->data = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        const std::size_t n = shape_size(shape);
        return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        const std::size_t n = shape_size(shape);
        return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
    }

    static Tensor scalar(double value, bool requires_grad = false) {
        return Tensor({1}, {value}, requires_grad);
    }

    static Tensor vector(std::vector<double> values, bool requires_grad = false) {
        const std::size_t n = values.size();
        return Tensor({n}, std::move(values), requires_grad);
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                         bool requires_grad = false) {
        return Tensor({rows, cols}, std::move(values), requires_grad);
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t ndim() const { return node_->shape.size(); }
    std::size_t size() const { return node_->data.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t rows() const { return ndim() == 2 ? node_->shape[0] : 1; }
    std::size_t cols() const { return node_->shape.back(); }

    std::span<const double> data() const { return node_->data; }
    double operator[](std::size_t i) const { return node_->data[i]; }
    double at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }
    double item() const {
        if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
        return node_->data[0];
    }

    /// Writable view; only leaves (no recorded gradient rule) may be mutated.
    std::span<double> mutable_data() {
        if (node_->backward_fn) throw std::logic_error("cannot mutate an interior graph node");
        return node_->data;
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool flag) { node_->requires_grad = flag; }
    bool is_leaf() const { return !node_->backward_fn; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    void zero_grad() { node_->grad.clear(); }

    std::vector<double> to_vector() const { return node_->data; }

    /// Deep copy with no graph history.
    Tensor detach() const { return Tensor(shape(), node_->data, false); }
    Tensor clone_leaf(bool requires_grad) const { return Tensor(shape(), node_->data, requires_grad); }

    bool same_storage(const Tensor& other) const { return node_ == other.node_; }

    const std::shared_ptr<detail::Node>& node() const { return node_; }

    /// Builds the output of a differentiable op. The rule is kept only if an input needs gradients.
    static Tensor from_op(Shape shape, std::vector<double> data,
                          std::vector<std::shared_ptr<detail::Node>> inputs,
                          std::function<void(detail::Node&)> backward_fn) {
        Tensor out(std::move(shape), std::move(data), false);
        if (!grad_enabled()) return out;
        bool needs = false;
        for (const auto& in : inputs) needs = needs || in->requires_grad;
        if (needs) {
            out.node_->requires_grad = true;
            out.node_->parents = std::move(inputs);
            out.node_->backward_fn = std::move(backward_fn);
        }
        return out;
    }

private:
    std::shared_ptr<detail::Node> node_;
};

/// Topologically ordered record of the differentiable operations reachable from a root.
class Tape {
public:
    static Tape trace(const Tensor& root) {
        Tape tape;
        if (!root.requires_grad()) return tape;
        std::unordered_set<const detail::Node*> visited;
        // Iterative post-order DFS; parents always land before children.
        std::vector<std::pair<detail::Node*, std::size_t>> stack;
        stack.emplace_back(root.node().get(), 0);
        visited.insert(root.node().get());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                detail::Node* parent = node->parents[next++].get();
                if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
            } else {
                tape.nodes_.push_back(node);
                stack.pop_back();
            }
        }
        return tape;
    }

    std::size_t size() const { return nodes_.size(); }
    const std::vector<detail::Node*>& nodes() const { return nodes_; }

    /// Seeds d(root)/d(root) = scale and runs every recorded rule once, in reverse order.
    void backward(double scale = 1.0) const {
        if (nodes_.empty()) return;
        detail::Node* root = nodes_.back();
        if (root->data.size() != 1) {
            throw DimensionError("backward requires a scalar loss, got shape " + shape_string(root->shape));
        }
        root->ensure_grad();
        root->grad[0] += scale;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            detail::Node* node = *it;
            if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
        }
    }

private:
    std::vector<detail::Node*> nodes_;
};

/// Accumulates d(loss)/d(x) into every reachable tensor with requires_grad.
inline void backward(const Tensor& loss, double scale = 1.0) {
    if (loss.size() != 1) {
        throw DimensionError("backward requires a scalar loss, got shape " + shape_string(loss.shape()));
    }
    Tape::trace(loss).backward(scale);
}

inline bool all_finite(const Tensor& t) {
    for (double v : t.data()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

}  // namespace reprompt::numerics
