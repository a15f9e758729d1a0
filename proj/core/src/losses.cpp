#include "mcn/losses.hpp"

#include <cmath>

#include "mcn/error.hpp"
#include "mcn/ops.hpp"

namespace mcn {

namespace {

template <typename T>
std::vector<Tensor<T>> supervised(const McnOutputs<T>& outputs) {
    std::vector<Tensor<T>> out = outputs.outputs;
    out.push_back(outputs.back_output);
    return out;
}

template <typename T>
Tensor<T> sum_all(const std::vector<Tensor<T>>& terms) {
    const std::vector<double> ones(terms.size(), 1.0);
    return weighted_sum<T>(terms, ones);
}

}  // namespace

void LossWeights::validate() const {
    if (!(lambda_r >= 0.0) || !(lambda_s >= 0.0) || !std::isfinite(lambda_r) || !std::isfinite(lambda_s)) {
        throw ParameterError("loss weights must be finite and non-negative");
    }
}

template <typename T>
Tensor<T> reconstruction_loss(const McnOutputs<T>& outputs, const Tensor<T>& target) {
    std::vector<Tensor<T>> terms;
    for (const auto& o : supervised(outputs)) {
        if (o.shape() != target.shape()) {
            throw DimensionError("reconstruction_loss: output " + shape_to_string(o.shape()) + " vs target " +
                                 shape_to_string(target.shape()));
        }
        terms.push_back(l1_mean(o, target));
    }
    return sum_all(terms);
}

template <typename T>
Tensor<T> smoothness_loss(const McnOutputs<T>& outputs) {
    std::vector<Tensor<T>> terms;
    for (const auto& o : supervised(outputs)) terms.push_back(total_variation(o));
    return sum_all(terms);
}

template <typename T>
LossTerms<T> multi_granulation_loss(const McnOutputs<T>& outputs, const Tensor<T>& target,
                                    const LossWeights& weights) {
    weights.validate();
    LossTerms<T> terms;
    terms.recon = reconstruction_loss(outputs, target);
    terms.smooth = smoothness_loss(outputs);
    const Tensor<T> parts[2] = {terms.recon, terms.smooth};
    const double w[2] = {weights.lambda_r, weights.lambda_s};
    terms.total = weighted_sum<T>(parts, w);
    return terms;
}

#define MCN_INSTANTIATE_LOSSES(T)                                                                      \
    template Tensor<T> reconstruction_loss<T>(const McnOutputs<T>&, const Tensor<T>&);                 \
    template Tensor<T> smoothness_loss<T>(const McnOutputs<T>&);                                       \
    template LossTerms<T> multi_granulation_loss<T>(const McnOutputs<T>&, const Tensor<T>&, const LossWeights&);

MCN_INSTANTIATE_LOSSES(float)
MCN_INSTANTIATE_LOSSES(double)

#undef MCN_INSTANTIATE_LOSSES

}  // namespace mcn
