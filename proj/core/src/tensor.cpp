#include "mcn/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "mcn/error.hpp"

namespace mcn {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ')';
    return os.str();
}

bool GradMode::is_enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool enabled) { g_grad_enabled = enabled; }

NoGradGuard::NoGradGuard() : previous_(GradMode::is_enabled()) { GradMode::set_enabled(false); }
NoGradGuard::~NoGradGuard() { GradMode::set_enabled(previous_); }

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : node_(std::make_shared<NodeType>()) {
    node_->data.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : node_(std::make_shared<NodeType>()) {
    if (shape_numel(shape) != data.size()) {
        throw DimensionError("tensor shape " + shape_to_string(shape) + " holds " +
                             std::to_string(shape_numel(shape)) + " elements, got " +
                             std::to_string(data.size()));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
}

template <typename T>
Tensor<T> Tensor<T>::from_node(std::shared_ptr<NodeType> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
}

template <typename T>
const Shape& Tensor<T>::shape() const {
    if (!node_) throw ContractError("use of undefined tensor");
    return node_->shape;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                             shape_to_string(s));
    }
    return s[axis];
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
    if (!node_) throw ContractError("use of undefined tensor");
    return node_->data;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
    if (!node_) throw ContractError("use of undefined tensor");
    return node_->data;
}

template <typename T>
T Tensor<T>::at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    const auto& s = shape();
    if (s.size() != 4) throw DimensionError("at(n,c,y,x) needs a rank-4 tensor");
    return node_->data[((n * s[1] + c) * s[2] + y) * s[3] + x];
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) {
        throw DimensionError("item() on tensor of shape " + shape_to_string(shape()));
    }
    return node_->data[0];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
    return node_ && node_->requires_grad;
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool flag) {
    if (!node_) throw ContractError("use of undefined tensor");
    if (!node_->is_leaf()) throw ContractError("requires_grad can only be set on leaf tensors");
    node_->requires_grad = flag;
    return *this;
}

template <typename T>
bool Tensor<T>::has_grad() const {
    return node_ && !node_->grad.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
    if (!node_) throw ContractError("use of undefined tensor");
    return node_->grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
    if (!node_) throw ContractError("use of undefined tensor");
    if (node_->grad.empty()) node_->grad.assign(node_->data.size(), T{0});
    return node_->grad;
}

template <typename T>
Tensor<T> Tensor<T>::grad_tensor() const {
    if (!has_grad()) return Tensor(shape(), T{0});
    return Tensor(shape(), node_->grad);
}

template <typename T>
void Tensor<T>::zero_grad() {
    if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T{0});
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    return Tensor(shape(), node_->data);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
    if (shape_numel(shape) != numel()) {
        throw DimensionError("cannot reshape " + shape_to_string(this->shape()) + " to " +
                             shape_to_string(shape));
    }
    return Tensor(std::move(shape), node_->data);
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace mcn
