#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "mcn/tensor.hpp"

namespace mcn {

// Recorded operations reachable from a root, in topological order: every
// entry appears after all producers of its inputs. Only nodes that require a
// gradient are recorded.
template <typename T>
class Tape {
public:
    using NodeType = detail::Node<T>;

    static Tape record(const Tensor<T>& root);

    std::size_t size() const { return nodes_.size(); }
    const std::vector<NodeType*>& nodes() const { return nodes_; }

    // Walks the tape in reverse, invoking each backward rule exactly once.
    // The root's gradient is seeded with one.
    void run_backward() const;

private:
    std::vector<NodeType*> nodes_;
    // Keeps every recorded node alive while the tape exists.
    std::vector<std::shared_ptr<NodeType>> owners_;
};

// Populates the gradient of every requires_grad leaf reachable from `output`
// with d(output)/d(leaf). Leaf gradients accumulate across calls until
// zero_grad(). `output` must hold exactly one element.
template <typename T>
void backward(const Tensor<T>& output);

// Builds the graph once for analytic gradients and compares against central
// finite differences. Returns max_i |analytic - numeric| / max(|numeric|, 1e-8).
// Throws NumericError if the builder produces a non-finite value.
template <typename T>
double check_gradients(const std::function<Tensor<T>(const Tensor<T>&)>& graph_builder,
                       const Tensor<T>& input, double eps);

}  // namespace mcn
