#pragma once

#include <span>

#include "odtta/nn.hpp"

// Training-only interface. Dense-weight gradients exist solely behind this
// header; the adaptation path (detector, adapter, harness run loop) never
// includes it, so deployed-model updates are physically restricted to BN
// state.
namespace odtta::train {

struct DenseGrad {
    std::vector<double> weight;
    std::vector<double> bias;
};

struct FullGrad {
    std::vector<DenseGrad> dense;
    std::vector<BnAffineGrad> bn;
};

// Reverse pass producing gradients for every parameter (dense weights and
// biases plus BN affine). Same cache contract as backward_bn_affine.
FullGrad backward_full(const Model& model, const ActivationCache& cache,
                       const Tensor& loss_grad_logits);

struct CeLoss {
    double loss;
    Tensor grad_logits; // d(mean CE)/d(logits)
};

// Mean cross-entropy over the batch with its logit gradient.
CeLoss cross_entropy(const Tensor& logits, std::span<const int> labels);

} // namespace odtta::train
