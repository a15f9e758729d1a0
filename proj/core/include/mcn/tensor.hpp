#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mcn {

// Tensor extents, outermost first. 4-D tensors use NCHW order. The empty
// shape denotes a scalar with one element.
using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Thread-local switch for graph recording. When disabled, operators produce
// plain leaf tensors and no backward closures are kept.
class GradMode {
public:
    static bool is_enabled();
    static void set_enabled(bool enabled);
};

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

namespace detail {

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    // Reads this node's grad and accumulates into the grads of `inputs`.
    std::function<void(Node&)> backward;
    std::string_view op = "leaf";

    bool is_leaf() const { return !backward; }
};

}  // namespace detail

// Dense row-major tensor handle. Copies share storage and graph linkage, so a
// parameter held by two modules is one tensor. Use clone() for a deep copy.
template <typename T>
class Tensor {
public:
    using value_type = T;
    using NodeType = detail::Node<T>;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T{0});
    Tensor(Shape shape, std::vector<T> data);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T{0}); }
    static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }
    static Tensor scalar(T value) { return Tensor(Shape{}, value); }
    static Tensor from_node(std::shared_ptr<NodeType> node);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const { return data().size(); }

    std::span<const T> data() const;
    // Mutable access for leaves (parameters, freshly built inputs). Mutating a
    // tensor that already feeds a recorded graph invalidates that graph.
    std::span<T> mutable_data();

    // Element of a rank-4 tensor.
    T at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const;
    T item() const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool flag);
    bool has_grad() const;
    std::span<const T> grad() const;
    std::span<T> mutable_grad();
    Tensor grad_tensor() const;
    void zero_grad();

    // Same values, no graph linkage, fresh storage.
    Tensor detach() const;
    Tensor clone() const { return detach(); }
    Tensor reshaped(Shape shape) const;

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(numel());
        auto src = data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(src[i]);
        return Tensor<U>(shape(), std::move(out));
    }

    bool shares_storage_with(const Tensor& other) const { return node_ == other.node_; }
    const std::shared_ptr<NodeType>& node() const { return node_; }

private:
    std::shared_ptr<NodeType> node_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace mcn
