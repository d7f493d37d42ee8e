#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "mildnet/errors.hpp"

namespace mild {

// Dense float32 tensor participating in a reverse-mode gradient graph.
// Image data is laid out NCHW, row-major. A tensor produced by an op keeps
// shared ownership of its inputs plus a closure that routes its gradient to
// them; leaves have no parents. The `grad` buffer is the only field mutated
// after construction, and only during backward().
struct Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;
    bool requires_grad = false;
    std::vector<float> grad;  // empty until first needed; same numel as data
    std::vector<TensorPtr> parents;
    std::function<void(Tensor&)> backward_fn;  // null for leaves
    std::string op;                            // producing op, for diagnostics

    size_t numel() const { return data.size(); }

    int dim(int i) const { return shape[static_cast<size_t>(i)]; }

    // NCHW accessors for the common 4-d case
    float& at(int n, int c, int y, int x) {
        return data[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }
    float at(int n, int c, int y, int x) const {
        return data[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
    }

    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0f);
    }
};

inline size_t numel_of(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
    std::string s = "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

inline TensorPtr make_tensor(std::vector<int> shape, bool requires_grad = false) {
    for (int d : shape)
        if (d <= 0) throw ConfigError("tensor extent must be positive, got " + shape_str(shape));
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->data.assign(numel_of(t->shape), 0.0f);
    t->requires_grad = requires_grad;
    return t;
}

inline TensorPtr make_tensor(std::vector<int> shape, std::vector<float> values, bool requires_grad = false) {
    auto t = make_tensor(std::move(shape), requires_grad);
    if (values.size() != t->data.size())
        throw ConfigError("tensor data size does not match shape " + shape_str(t->shape));
    t->data = std::move(values);
    return t;
}

inline TensorPtr make_scalar(float v, bool requires_grad = false) {
    return make_tensor({1}, {v}, requires_grad);
}

// NaN/Inf anywhere is an error state; every op verifies its output.
inline void check_finite(const Tensor& t, const std::string& where) {
    for (float v : t.data) {
        if (!std::isfinite(v)) throw NumericError("non-finite value produced by " + where);
    }
}

namespace detail {

inline void topo_visit(const TensorPtr& node, std::unordered_map<Tensor*, int>& state,
                       std::vector<TensorPtr>& order) {
    // iterative DFS; state: 1 = on stack, 2 = done
    std::vector<std::pair<TensorPtr, size_t>> stack;
    stack.emplace_back(node, 0);
    state[node.get()] = 1;
    while (!stack.empty()) {
        auto& [cur, next_child] = stack.back();
        if (next_child < cur->parents.size()) {
            TensorPtr child = cur->parents[next_child++];
            auto it = state.find(child.get());
            if (it == state.end()) {
                state[child.get()] = 1;
                stack.emplace_back(child, 0);
            } else if (it->second == 1) {
                throw ConfigError("cycle detected in gradient graph at op '" + child->op + "'");
            }
        } else {
            state[cur.get()] = 2;
            order.push_back(cur);
            stack.pop_back();
        }
    }
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss. Gradients accumulate into existing
// buffers; call zero_grad on the leaves between steps.
inline void backward(const TensorPtr& loss) {
    if (loss->numel() != 1) throw ConfigError("backward requires a scalar loss, got " + shape_str(loss->shape));
    std::unordered_map<Tensor*, int> state;
    std::vector<TensorPtr> order;  // children before parents
    detail::topo_visit(loss, state, order);

    loss->ensure_grad();
    loss->grad[0] += 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Tensor& node = **it;
        if (node.backward_fn && node.requires_grad && !node.grad.empty()) node.backward_fn(node);
    }
}

inline void zero_grads(const std::vector<TensorPtr>& tensors) {
    for (auto& t : tensors) t->zero_grad();
}

}  // namespace mild
