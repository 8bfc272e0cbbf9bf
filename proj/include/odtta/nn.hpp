#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "odtta/batchnorm.hpp"
#include "odtta/tensor.hpp"

namespace odtta {

enum class LayerKind { Dense, Relu, BatchNorm };

struct LayerSpec {
    LayerKind kind;
    std::size_t in = 0;  // Dense
    std::size_t out = 0; // Dense
    std::size_t dim = 0; // Relu / BatchNorm

    static LayerSpec dense(std::size_t in, std::size_t out) { return {LayerKind::Dense, in, out, 0}; }
    static LayerSpec relu(std::size_t dim) { return {LayerKind::Relu, 0, 0, dim}; }
    static LayerSpec batchnorm(std::size_t dim) { return {LayerKind::BatchNorm, 0, 0, dim}; }
};

// Architecture description. Must hold at least two BatchNorm layers (the
// pipeline reads domain features from the second one) and end in a layer
// whose output width equals class_count.
struct ModelSpec {
    std::vector<LayerSpec> layers;
    std::size_t class_count = 0;
    double bn_eps = 1e-5;

    void validate() const;
    std::size_t input_dim() const;
    std::size_t bn_count() const;
    std::size_t dense_count() const;
    // Structural hash over layer kinds, dims, class_count and bn_eps.
    std::uint64_t fingerprint() const;
};

// Input `d` -> [Dense(h) BN(h) ReLU(h)]* -> Dense(C). Needs >= 2 hidden widths.
ModelSpec make_mlp_spec(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                        std::size_t class_count, double bn_eps = 1e-5);

struct DenseLayer {
    std::vector<double> weight; // out x in, row-major
    std::vector<double> bias;   // out
};

struct Model {
    ModelSpec spec;
    std::vector<DenseLayer> dense; // one per Dense layer, in model order
    std::vector<BnLayerState> bn;  // one per BatchNorm layer, in model order

    std::uint64_t fingerprint() const { return spec.fingerprint(); }
};

// Seeded parameter initialization: He-scaled dense weights, identity BN.
Model init_model(const ModelSpec& spec, std::uint64_t seed);

enum class BnMode { RunningStats, BatchStats };
enum class CachePolicy { None, ForBackward };

// Intermediate values retained by a forward pass. With CachePolicy::None
// only the per-BN-layer statistic buffers are kept (constant in batch
// size); ForBackward additionally keeps every layer input and the BN
// normalized activations (linear in batch size). retained_count() is the
// retained-activation proxy reported to the harness: the total number of
// scalars held.
struct ActivationCache {
    BnMode mode = BnMode::RunningStats;
    CachePolicy policy = CachePolicy::None;
    std::size_t batch_size = 0;
    std::uint64_t model_fingerprint = 0;

    std::vector<BnStats> bn_stats;   // statistics used by each BN layer
    std::vector<Tensor> layer_input; // ForBackward: input of every layer
    std::vector<Tensor> bn_xhat;     // ForBackward: normalized activations

    std::size_t retained_count() const;
};

struct ForwardResult {
    Tensor logits;
    ActivationCache cache;
};

// Forward pass. BatchStats normalizes by the current batch's statistics and
// requires B >= 2; RunningStats uses the stored statistics. Never mutates
// the model. Throws on dimension mismatch or non-finite intermediates.
ForwardResult forward(const Model& model, const Tensor& batch, BnMode mode, CachePolicy policy);

// Forward pass that additionally returns the output of the bn_ordinal-th
// BatchNorm layer (1-based). Retains no more than a CachePolicy::None pass.
struct TapResult {
    Tensor logits;
    Tensor tapped; // B x dim of the tapped BN layer
    ActivationCache cache;
};
TapResult forward_bn_tap(const Model& model, const Tensor& batch, BnMode mode, std::size_t bn_ordinal);

struct SoftmaxEntropy {
    Tensor probs;                // B x C, rows sum to 1
    std::vector<double> entropy; // per sample, in [0, log C]
};

// Numerically stable softmax (max subtraction) and per-row entropy.
SoftmaxEntropy softmax_entropy(const Tensor& logits);

struct BnAffineGrad {
    std::vector<double> gamma;
    std::vector<double> beta;
};

// Reverse pass from d(loss)/d(logits) to the BN affine parameters only.
// No gradients are formed for dense weights. Requires a ForBackward cache
// produced under the same (model, batch, mode).
std::vector<BnAffineGrad> backward_bn_affine(const Model& model, const ActivationCache& cache,
                                             const Tensor& loss_grad_logits);

// d(mean entropy over selected rows)/d(logits). Rows not in `selected` get
// zero gradient. `selected` empty means all rows.
Tensor entropy_loss_grad(const SoftmaxEntropy& se, const std::vector<std::size_t>& selected = {});

} // namespace odtta
