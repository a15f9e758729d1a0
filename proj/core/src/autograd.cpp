#include "mcn/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>
#include <utility>

#include "mcn/error.hpp"

namespace mcn {

template <typename T>
Tape<T> Tape<T>::record(const Tensor<T>& root) {
    Tape tape;
    if (!root.defined() || !root.requires_grad()) return tape;

    // Iterative post-order DFS; a node is emitted once all its inputs are.
    std::unordered_set<const NodeType*> visited;
    std::vector<std::pair<NodeType*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    tape.owners_.push_back(root.node());

    while (!stack.empty()) {
        auto& [node, next_input] = stack.back();
        if (next_input < node->inputs.size()) {
            const auto& child = node->inputs[next_input++];
            if (child && child->requires_grad && visited.insert(child.get()).second) {
                tape.owners_.push_back(child);
                stack.emplace_back(child.get(), 0);
            }
            continue;
        }
        tape.nodes_.push_back(node);
        stack.pop_back();
    }
    return tape;
}

template <typename T>
void Tape<T>::run_backward() const {
    if (nodes_.empty()) return;
    // Each pass is computed into zeroed buffers and only then added to what
    // leaves already hold, so two identical passes give exactly twice the
    // gradient.
    std::vector<std::vector<T>> previous(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        NodeType* node = nodes_[i];
        if (node->is_leaf() && node->grad.size() == node->data.size()) previous[i].swap(node->grad);
        node->grad.assign(node->data.size(), T{0});
    }
    NodeType* root = nodes_.back();
    root->grad[0] += T{1};

    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        NodeType* node = *it;
        if (!node->is_leaf()) {
            node->backward(*node);
        }
    }
    // Intermediate buffers are scratch space; only leaves keep gradients.
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        NodeType* node = nodes_[i];
        if (!node->is_leaf()) {
            std::vector<T>().swap(node->grad);
        } else if (!previous[i].empty()) {
            for (std::size_t k = 0; k < node->grad.size(); ++k) node->grad[k] = previous[i][k] + node->grad[k];
        }
    }
}

template <typename T>
void backward(const Tensor<T>& output) {
    if (!output.defined()) throw ContractError("backward() on undefined tensor");
    if (output.numel() != 1) {
        throw ContractError("backward() needs a scalar output, got shape " +
                            shape_to_string(output.shape()));
    }
    Tape<T>::record(output).run_backward();
}

template <typename T>
double check_gradients(const std::function<Tensor<T>(const Tensor<T>&)>& graph_builder,
                       const Tensor<T>& input, double eps) {
    if (!(eps > 0.0)) throw ParameterError("check_gradients: eps must be positive");

    auto require_finite = [](T v, const char* what) {
        if (!std::isfinite(static_cast<double>(v))) {
            throw NumericError(std::string("check_gradients: non-finite ") + what);
        }
    };

    Tensor<T> x = input.detach();
    x.set_requires_grad(true);
    Tensor<T> y = graph_builder(x);
    if (y.numel() != 1) throw ContractError("check_gradients: graph must produce a scalar");
    require_finite(y.item(), "graph output");
    backward(y);
    std::vector<T> analytic(x.numel(), T{0});
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());

    NoGradGuard no_grad;
    double max_err = 0.0;
    Tensor<T> probe = input.detach();
    auto values = probe.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
        const T original = values[i];
        values[i] = static_cast<T>(original + eps);
        const T plus = graph_builder(probe).item();
        values[i] = static_cast<T>(original - eps);
        const T minus = graph_builder(probe).item();
        values[i] = original;
        require_finite(plus, "perturbed output");
        require_finite(minus, "perturbed output");

        const double numeric = (static_cast<double>(plus) - static_cast<double>(minus)) / (2.0 * eps);
        const double err = std::abs(static_cast<double>(analytic[i]) - numeric) /
                           std::max(std::abs(numeric), 1e-8);
        max_err = std::max(max_err, err);
    }
    return max_err;
}

template class Tape<float>;
template class Tape<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);
template double check_gradients<float>(const std::function<Tensor<float>(const Tensor<float>&)>&,
                                       const Tensor<float>&, double);
template double check_gradients<double>(const std::function<Tensor<double>(const Tensor<double>&)>&,
                                        const Tensor<double>&, double);

}  // namespace mcn
