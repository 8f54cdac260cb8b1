#include "lidarsim/autodiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include "lidarsim/autodiff/ops.hpp"
#include "lidarsim/error.hpp"

namespace lidarsim::ad {

std::string Shape::str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
}

std::vector<float>& Node::ensure_grad() {
    if (grad.size() != data.size()) {
        grad.assign(data.size(), 0.0f);
    }
    return grad;
}

namespace {

std::shared_ptr<Node> new_leaf(Shape shape, std::vector<float> values, bool requires_grad) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
        throw Error(ErrorCode::Shape, "negative extent " + shape.str());
    }
    if (values.size() != shape.numel()) {
        throw Error(ErrorCode::Shape, "value count " + std::to_string(values.size()) +
                                          " does not match " + shape.str());
    }
    auto node = std::make_shared<Node>();
    node->shape = shape;
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    return node;
}

// Reverse topological order (output first), each node exactly once.
std::vector<Node*> reverse_topological(Node* root) {
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && !visited.contains(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    std::reverse(order.begin(), order.end());
    return order;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return Tensor(new_leaf(shape, std::vector<float>(shape.numel(), 0.0f), requires_grad));
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
    return Tensor(new_leaf(shape, std::vector<float>(shape.numel(), value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
    return Tensor(new_leaf(shape, std::move(values), requires_grad));
}

Tensor Tensor::scalar(float value, bool requires_grad) {
    return Tensor(new_leaf({1, 1, 1, 1}, {value}, requires_grad));
}

const Shape& Tensor::shape() const {
    static const Shape empty{};
    return node_ ? node_->shape : empty;
}

std::span<float> Tensor::data() { return node_->data; }
std::span<const float> Tensor::data() const { return node_->data; }
std::span<float> Tensor::grad() { return node_->grad; }
std::span<const float> Tensor::grad() const { return node_->grad; }

float Tensor::item() const {
    if (numel() != 1) {
        throw Error(ErrorCode::Shape, "item() on tensor of shape " + shape().str());
    }
    return node_->data[0];
}

float Tensor::at(int n, int c, int h, int w) const {
    const Shape& s = shape();
    return node_->data[((static_cast<std::size_t>(n) * s.c + c) * s.h + h) * s.w + w];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
    node_->requires_grad = flag;
    return *this;
}

void Tensor::zero_grad() {
    if (node_) {
        std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
    }
}

Tensor Tensor::detach() const {
    return Tensor(new_leaf(shape(), node_->data, false));
}

void Tensor::backward() const {
    if (!node_) {
        throw Error(ErrorCode::Detached, "backward on undefined tensor");
    }
    if (numel() != 1) {
        throw Error(ErrorCode::Shape, "backward requires a scalar loss, got " + shape().str());
    }
    if (!node_->requires_grad) {
        throw Error(ErrorCode::Detached, "loss does not depend on any tracked tensor");
    }
    const std::vector<Node*> order = reverse_topological(node_.get());
    node_->ensure_grad()[0] += 1.0f;
    for (Node* node : order) {
        if (node->is_leaf()) {
            continue;
        }
        if (!node->grad.empty()) {
            node->backward(*node);
        }
        // Intermediate buffers are released so the graph can be swept again.
        std::vector<float>().swap(node->grad);
    }
}

std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& inputs,
                         bool create_graph) {
    if (output.numel() != 1) {
        throw Error(ErrorCode::Shape, "grad() requires a scalar output");
    }
    if (!output.requires_grad()) {
        throw Error(ErrorCode::Detached, "output does not depend on any tracked tensor");
    }
    const std::vector<Node*> order = reverse_topological(output.node());

    // Nodes lying on some path from a requested input to the output.
    std::unordered_set<Node*> wanted;
    for (const Tensor& input : inputs) {
        wanted.insert(input.node());
    }
    std::unordered_set<Node*> on_path;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (wanted.contains(node)) {
            on_path.insert(node);
            continue;
        }
        for (const auto& parent : node->parents) {
            if (on_path.contains(parent.get())) {
                on_path.insert(node);
                break;
            }
        }
    }

    std::unordered_map<Node*, Tensor> grads;
    grads[output.node()] = Tensor::full(output.shape(), 1.0f);
    for (Node* node : order) {
        auto found = grads.find(node);
        if (found == grads.end() || node->is_leaf() || !on_path.contains(node)) {
            continue;
        }
        const Tensor upstream = found->second;
        std::vector<bool> needed(node->parents.size());
        for (std::size_t i = 0; i < node->parents.size(); ++i) {
            needed[i] = node->parents[i]->requires_grad && on_path.contains(node->parents[i].get());
        }
        std::vector<Tensor> parent_grads;
        if (create_graph) {
            if (!node->graph_backward) {
                throw Error(ErrorCode::Shape,
                            std::string("op '") + node->op + "' has no differentiable backward");
            }
            parent_grads = node->graph_backward(upstream, needed);
        } else {
            // Plain sweep through this node's first-order backward. A parent that
            // appears twice (mul(x, x)) is swapped out once and collected once.
            const std::vector<float> saved = node->grad;
            std::vector<std::vector<float>> saved_parent(node->parents.size());
            std::vector<bool> first(node->parents.size(), false);
            for (std::size_t i = 0; i < node->parents.size(); ++i) {
                if (!needed[i]) {
                    continue;
                }
                first[i] = true;
                for (std::size_t j = 0; j < i; ++j) {
                    if (first[j] && node->parents[j] == node->parents[i]) {
                        first[i] = false;
                    }
                }
                if (first[i]) {
                    saved_parent[i] = node->parents[i]->grad;
                    node->parents[i]->grad.assign(node->parents[i]->data.size(), 0.0f);
                }
            }
            node->grad.assign(upstream.data().begin(), upstream.data().end());
            node->backward(*node);
            node->grad = saved;
            parent_grads.resize(node->parents.size());
            for (std::size_t i = 0; i < node->parents.size(); ++i) {
                if (first[i]) {
                    parent_grads[i] =
                        Tensor::from(node->parents[i]->shape, std::move(node->parents[i]->grad));
                    node->parents[i]->grad = std::move(saved_parent[i]);
                }
            }
        }
        for (std::size_t i = 0; i < node->parents.size(); ++i) {
            if (!needed[i] || !parent_grads[i].defined()) {
                continue;
            }
            Node* parent = node->parents[i].get();
            auto existing = grads.find(parent);
            if (existing == grads.end()) {
                grads.emplace(parent, parent_grads[i]);
            } else if (create_graph) {
                existing->second = add(existing->second, parent_grads[i]);
            } else {
                auto acc = existing->second.data();
                auto inc = parent_grads[i].data();
                for (std::size_t j = 0; j < acc.size(); ++j) {
                    acc[j] += inc[j];
                }
            }
        }
    }

    std::vector<Tensor> result;
    result.reserve(inputs.size());
    for (const Tensor& input : inputs) {
        auto found = grads.find(input.node());
        result.push_back(found != grads.end() ? found->second : Tensor::zeros(input.shape()));
    }
    return result;
}

Tensor make_result(const char* op, Shape shape, std::vector<float> values,
                   std::vector<Tensor> parents) {
    for (float v : values) {
        if (!std::isfinite(v)) {
            throw Error(ErrorCode::TrainingFault, std::string("non-finite value produced by ") + op);
        }
    }
    auto node = std::make_shared<Node>();
    node->shape = shape;
    node->data = std::move(values);
    node->op = op;
    for (Tensor& parent : parents) {
        if (!parent.defined()) {
            continue;
        }
        node->requires_grad = node->requires_grad || parent.requires_grad();
        node->parents.push_back(parent.node_ptr());
    }
    return Tensor(std::move(node));
}

}  // namespace lidarsim::ad
