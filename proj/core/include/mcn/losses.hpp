#pragma once

#include "mcn/network.hpp"
#include "mcn/tensor.hpp"

namespace mcn {

struct LossWeights {
    double lambda_r = 1.0;
    double lambda_s = 1.0;

    void validate() const;
};

template <typename T>
struct LossTerms {
    Tensor<T> total;
    Tensor<T> recon;
    Tensor<T> smooth;
};

/// Sum of mean |o - target| over SGN-2..N and the back-connected SGN-1
/// output. The plain SGN-1 output is not supervised.
template <typename T>
Tensor<T> reconstruction_loss(const McnOutputs<T>& outputs, const Tensor<T>& target);

/// Sum of total variation over the same outputs.
template <typename T>
Tensor<T> smoothness_loss(const McnOutputs<T>& outputs);

/// lambda_r * recon + lambda_s * smooth. Per-pixel means already include the
/// batch axis, so the result is the batch average of per-image losses.
template <typename T>
LossTerms<T> multi_granulation_loss(const McnOutputs<T>& outputs, const Tensor<T>& target, const LossWeights& weights);

}  // namespace mcn
