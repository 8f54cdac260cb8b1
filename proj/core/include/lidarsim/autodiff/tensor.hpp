#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace lidarsim::ad {

struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::size_t numel() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

class Tensor;
struct Node;

// Produces differentiable gradients for the parents flagged in `needed`, given
// the (differentiable) upstream gradient. Used when gradients themselves must be
// differentiated (gradient penalties).
using GraphBackwardFn =
    std::function<std::vector<Tensor>(const Tensor& grad_out, const std::vector<bool>& needed)>;

struct Node {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    // Accumulates self.grad into the parents' grad buffers.
    std::function<void(Node& self)> backward;
    GraphBackwardFn graph_backward;

    bool is_leaf() const { return !backward; }
    std::vector<float>& ensure_grad();
};

// Reference-counted handle onto a graph node. Copies alias the same storage.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);
    static Tensor scalar(float value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t numel() const { return shape().numel(); }

    std::span<float> data();
    std::span<const float> data() const;
    // Empty span when no gradient has been accumulated yet.
    std::span<float> grad();
    std::span<const float> grad() const;

    float item() const;
    float at(int n, int c, int h, int w) const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool flag);
    void zero_grad();

    // New leaf sharing no history (values copied).
    Tensor detach() const;
    Tensor clone() const { return detach(); }

    // Reverse sweep from a scalar. Leaf gradients accumulate across calls.
    void backward() const;

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& node_ptr() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// Gradients of `output` (scalar) with respect to `inputs`. With create_graph the
// returned tensors are themselves part of the graph and can be differentiated.
std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& inputs,
                         bool create_graph);

// Builds an op output node; throws a training fault if any value is non-finite.
Tensor make_result(const char* op, Shape shape, std::vector<float> values,
                   std::vector<Tensor> parents);

}  // namespace lidarsim::ad
