#include "odtta/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "odtta/rng.hpp"
#include "odtta/train.hpp"

namespace odtta {

namespace {

const char* kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Dense: return "dense";
        case LayerKind::Relu: return "relu";
        case LayerKind::BatchNorm: return "batchnorm";
    }
    return "?";
}

} // namespace

void ModelSpec::validate() const {
    if (layers.empty()) throw std::invalid_argument("model spec: empty layer list");
    if (class_count < 2) throw std::invalid_argument("model spec: class_count must be >= 2");
    if (!(bn_eps > 0.0)) throw std::invalid_argument("model spec: bn_eps must be positive");

    std::size_t width = input_dim();
    std::size_t bn = 0;
    for (const auto& l : layers) {
        switch (l.kind) {
            case LayerKind::Dense:
                if (l.in == 0 || l.out == 0) throw std::invalid_argument("model spec: zero dense dim");
                if (l.in != width) throw std::invalid_argument("model spec: dense input width mismatch");
                width = l.out;
                break;
            case LayerKind::Relu:
            case LayerKind::BatchNorm:
                if (l.dim == 0 || l.dim != width)
                    throw std::invalid_argument(std::string("model spec: ") + kind_name(l.kind) +
                                                " width mismatch");
                if (l.kind == LayerKind::BatchNorm) ++bn;
                break;
        }
    }
    if (bn < 2) throw std::invalid_argument("model spec: needs at least two BatchNorm layers");
    if (width != class_count)
        throw std::invalid_argument("model spec: final width != class_count");
}

std::size_t ModelSpec::input_dim() const {
    if (layers.empty()) return 0;
    const auto& l = layers.front();
    return l.kind == LayerKind::Dense ? l.in : l.dim;
}

std::size_t ModelSpec::bn_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.kind == LayerKind::BatchNorm;
    return n;
}

std::size_t ModelSpec::dense_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.kind == LayerKind::Dense;
    return n;
}

std::uint64_t ModelSpec::fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    h = hash_u64(0x6f64747461u, h); // format tag
    h = hash_u64(class_count, h);
    std::uint64_t eps_bits;
    static_assert(sizeof eps_bits == sizeof bn_eps);
    std::memcpy(&eps_bits, &bn_eps, sizeof eps_bits);
    h = hash_u64(eps_bits, h);
    for (const auto& l : layers) {
        h = hash_u64(static_cast<std::uint64_t>(l.kind), h);
        h = hash_u64(l.in, h);
        h = hash_u64(l.out, h);
        h = hash_u64(l.dim, h);
    }
    return h;
}

ModelSpec make_mlp_spec(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                        std::size_t class_count, double bn_eps) {
    if (hidden.size() < 2)
        throw std::invalid_argument("make_mlp_spec: need >= 2 hidden widths for two BN layers");
    ModelSpec spec;
    spec.class_count = class_count;
    spec.bn_eps = bn_eps;
    std::size_t width = input_dim;
    for (std::size_t h : hidden) {
        spec.layers.push_back(LayerSpec::dense(width, h));
        spec.layers.push_back(LayerSpec::batchnorm(h));
        spec.layers.push_back(LayerSpec::relu(h));
        width = h;
    }
    spec.layers.push_back(LayerSpec::dense(width, class_count));
    spec.validate();
    return spec;
}

Model init_model(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    Model m;
    m.spec = spec;
    Rng rng(seed);
    for (const auto& l : spec.layers) {
        if (l.kind == LayerKind::Dense) {
            DenseLayer d;
            d.weight.resize(l.out * l.in);
            d.bias.assign(l.out, 0.0);
            double scale = std::sqrt(2.0 / static_cast<double>(l.in));
            for (auto& w : d.weight) w = rng.normal() * scale;
            m.dense.push_back(std::move(d));
        } else if (l.kind == LayerKind::BatchNorm) {
            m.bn.push_back(BnLayerState::identity(l.dim, spec.bn_eps));
        }
    }
    return m;
}

std::size_t ActivationCache::retained_count() const {
    std::size_t n = 0;
    for (const auto& s : bn_stats) n += s.mean.size() + s.var.size();
    for (const auto& t : layer_input) n += t.size();
    for (const auto& t : bn_xhat) n += t.size();
    return n;
}

namespace {

// y[b,:] = x[b,:] W^T + bias
Tensor dense_forward(const DenseLayer& d, const LayerSpec& spec, const Tensor& x) {
    std::size_t B = x.dim(0);
    Tensor y = Tensor::zeros({B, spec.out});
    for (std::size_t b = 0; b < B; ++b) {
        const double* xin = x.data() + b * spec.in;
        double* yout = y.data() + b * spec.out;
        for (std::size_t o = 0; o < spec.out; ++o) {
            const double* w = d.weight.data() + o * spec.in;
            double acc = d.bias[o];
            for (std::size_t i = 0; i < spec.in; ++i) acc += w[i] * xin[i];
            yout[o] = acc;
        }
    }
    return y;
}

struct BnForwardOut {
    Tensor y;
    Tensor xhat;
    BnStats used;
};

BnForwardOut bn_forward(const BnLayerState& bn, const Tensor& x, BnMode mode) {
    std::size_t B = x.dim(0);
    std::size_t D = x.dim(1);
    BnStats used;
    if (mode == BnMode::BatchStats) {
        used.mean.assign(D, 0.0);
        used.var.assign(D, 0.0);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t j = 0; j < D; ++j) used.mean[j] += x.at(b, j);
        for (std::size_t j = 0; j < D; ++j) used.mean[j] /= static_cast<double>(B);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t j = 0; j < D; ++j) {
                double c = x.at(b, j) - used.mean[j];
                used.var[j] += c * c;
            }
        for (std::size_t j = 0; j < D; ++j) used.var[j] /= static_cast<double>(B);
    } else {
        used.mean = bn.running_mean;
        used.var = bn.running_var;
    }
    Tensor xhat = Tensor::zeros({B, D});
    Tensor y = Tensor::zeros({B, D});
    for (std::size_t j = 0; j < D; ++j) {
        double inv = 1.0 / std::sqrt(used.var[j] + bn.eps);
        for (std::size_t b = 0; b < B; ++b) {
            double h = (x.at(b, j) - used.mean[j]) * inv;
            xhat.at(b, j) = h;
            y.at(b, j) = bn.gamma[j] * h + bn.beta[j];
        }
    }
    return {std::move(y), std::move(xhat), std::move(used)};
}

struct ForwardInternal {
    Tensor logits;
    ActivationCache cache;
    Tensor tapped;
};

ForwardInternal forward_impl(const Model& model, const Tensor& batch, BnMode mode,
                             CachePolicy policy, std::size_t tap_bn_ordinal) {
    model.spec.validate();
    if (batch.rank() != 2) throw std::invalid_argument("forward: batch must be rank 2");
    std::size_t B = batch.dim(0);
    if (B == 0) throw std::invalid_argument("forward: empty batch");
    if (batch.dim(1) != model.spec.input_dim())
        throw std::invalid_argument("forward: batch width != model input dim");
    if (mode == BnMode::BatchStats && B < 2)
        throw std::invalid_argument("forward: BatchStats requires batch size >= 2");
    if (tap_bn_ordinal > model.spec.bn_count())
        throw std::invalid_argument("forward: tap ordinal exceeds BN layer count");

    ForwardInternal out;
    out.cache.mode = mode;
    out.cache.policy = policy;
    out.cache.batch_size = B;
    out.cache.model_fingerprint = model.fingerprint();

    Tensor x = batch;
    std::size_t di = 0, bi = 0;
    for (const auto& l : model.spec.layers) {
        if (policy == CachePolicy::ForBackward) out.cache.layer_input.push_back(x);
        Tensor y;
        switch (l.kind) {
            case LayerKind::Dense:
                y = dense_forward(model.dense[di], l, x);
                ++di;
                break;
            case LayerKind::Relu: {
                y = x;
                for (std::size_t i = 0; i < y.size(); ++i)
                    if (y.data()[i] < 0.0) y.data()[i] = 0.0;
                break;
            }
            case LayerKind::BatchNorm: {
                auto bno = bn_forward(model.bn[bi], x, mode);
                y = std::move(bno.y);
                out.cache.bn_stats.push_back(std::move(bno.used));
                if (policy == CachePolicy::ForBackward)
                    out.cache.bn_xhat.push_back(std::move(bno.xhat));
                ++bi;
                if (bi == tap_bn_ordinal) out.tapped = y;
                break;
            }
        }
        require_finite(y, "forward intermediate");
        x = std::move(y);
    }
    out.logits = std::move(x);
    return out;
}

} // namespace

ForwardResult forward(const Model& model, const Tensor& batch, BnMode mode, CachePolicy policy) {
    auto r = forward_impl(model, batch, mode, policy, 0);
    return {std::move(r.logits), std::move(r.cache)};
}

TapResult forward_bn_tap(const Model& model, const Tensor& batch, BnMode mode,
                         std::size_t bn_ordinal) {
    if (bn_ordinal == 0) throw std::invalid_argument("forward_bn_tap: ordinal is 1-based");
    auto r = forward_impl(model, batch, mode, CachePolicy::None, bn_ordinal);
    return {std::move(r.logits), std::move(r.tapped), std::move(r.cache)};
}

SoftmaxEntropy softmax_entropy(const Tensor& logits) {
    if (logits.rank() != 2) throw std::invalid_argument("softmax_entropy: logits must be rank 2");
    std::size_t B = logits.dim(0), C = logits.dim(1);
    SoftmaxEntropy out;
    out.probs = Tensor::zeros({B, C});
    out.entropy.resize(B);
    for (std::size_t b = 0; b < B; ++b) {
        const double* z = logits.data() + b * C;
        double zmax = *std::max_element(z, z + C);
        double sum = 0.0;
        for (std::size_t c = 0; c < C; ++c) sum += std::exp(z[c] - zmax);
        double logsum = std::log(sum);
        double h = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            double logp = z[c] - zmax - logsum;
            double p = std::exp(logp);
            out.probs.at(b, c) = p;
            h -= p * logp;
        }
        out.entropy[b] = std::max(0.0, h);
    }
    require_finite(out.entropy, "entropy");
    return out;
}

namespace {

void check_backward_cache(const Model& model, const ActivationCache& cache,
                          const Tensor& loss_grad_logits) {
    if (cache.policy != CachePolicy::ForBackward)
        throw std::invalid_argument("backward: cache was not built with ForBackward");
    if (cache.model_fingerprint != model.fingerprint())
        throw std::invalid_argument("backward: cache/model mismatch");
    if (cache.layer_input.size() != model.spec.layers.size())
        throw std::invalid_argument("backward: incomplete cache");
    if (loss_grad_logits.rank() != 2 || loss_grad_logits.dim(0) != cache.batch_size)
        throw std::invalid_argument("backward: loss gradient batch mismatch");
}

// Shared reverse walk. Dense parameter gradients are only formed when
// dense_grads is non-null (the training-only entry point).
std::vector<BnAffineGrad> backward_impl(const Model& model, const ActivationCache& cache,
                                        const Tensor& loss_grad_logits,
                                        std::vector<train::DenseGrad>* dense_grads) {
    check_backward_cache(model, cache, loss_grad_logits);
    std::size_t B = cache.batch_size;

    std::vector<BnAffineGrad> bn_grads(model.bn.size());
    if (dense_grads) dense_grads->resize(model.dense.size());

    Tensor g = loss_grad_logits;
    std::size_t di = model.dense.size();
    std::size_t bi = model.bn.size();
    for (std::size_t li = model.spec.layers.size(); li-- > 0;) {
        const auto& l = model.spec.layers[li];
        const Tensor& x = cache.layer_input[li];
        switch (l.kind) {
            case LayerKind::Dense: {
                --di;
                const DenseLayer& d = model.dense[di];
                if (dense_grads) {
                    auto& dg = (*dense_grads)[di];
                    dg.weight.assign(l.out * l.in, 0.0);
                    dg.bias.assign(l.out, 0.0);
                    for (std::size_t b = 0; b < B; ++b)
                        for (std::size_t o = 0; o < l.out; ++o) {
                            double go = g.at(b, o);
                            dg.bias[o] += go;
                            double* row = dg.weight.data() + o * l.in;
                            const double* xin = x.data() + b * l.in;
                            for (std::size_t i = 0; i < l.in; ++i) row[i] += go * xin[i];
                        }
                }
                Tensor gx = Tensor::zeros({B, l.in});
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t o = 0; o < l.out; ++o) {
                        double go = g.at(b, o);
                        const double* w = d.weight.data() + o * l.in;
                        double* gr = gx.data() + b * l.in;
                        for (std::size_t i = 0; i < l.in; ++i) gr[i] += go * w[i];
                    }
                g = std::move(gx);
                break;
            }
            case LayerKind::Relu: {
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (x.data()[i] <= 0.0) g.data()[i] = 0.0;
                break;
            }
            case LayerKind::BatchNorm: {
                --bi;
                const BnLayerState& bn = model.bn[bi];
                const BnStats& used = cache.bn_stats[bi];
                const Tensor& xhat = cache.bn_xhat[bi];
                std::size_t D = l.dim;
                auto& bg = bn_grads[bi];
                bg.gamma.assign(D, 0.0);
                bg.beta.assign(D, 0.0);
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t j = 0; j < D; ++j) {
                        bg.gamma[j] += g.at(b, j) * xhat.at(b, j);
                        bg.beta[j] += g.at(b, j);
                    }
                Tensor gx = Tensor::zeros({B, D});
                if (cache.mode == BnMode::RunningStats) {
                    for (std::size_t j = 0; j < D; ++j) {
                        double inv = 1.0 / std::sqrt(used.var[j] + bn.eps);
                        double s = bn.gamma[j] * inv;
                        for (std::size_t b = 0; b < B; ++b) gx.at(b, j) = g.at(b, j) * s;
                    }
                } else {
                    // batch statistics participate in the gradient
                    for (std::size_t j = 0; j < D; ++j) {
                        double inv = 1.0 / std::sqrt(used.var[j] + bn.eps);
                        double sum_g = 0.0, sum_gx = 0.0;
                        for (std::size_t b = 0; b < B; ++b) {
                            double gh = g.at(b, j) * bn.gamma[j];
                            sum_g += gh;
                            sum_gx += gh * xhat.at(b, j);
                        }
                        double nB = static_cast<double>(B);
                        for (std::size_t b = 0; b < B; ++b) {
                            double gh = g.at(b, j) * bn.gamma[j];
                            gx.at(b, j) = inv / nB * (nB * gh - sum_g - xhat.at(b, j) * sum_gx);
                        }
                    }
                }
                g = std::move(gx);
                break;
            }
        }
        require_finite(g, "backward intermediate");
    }
    return bn_grads;
}

} // namespace

std::vector<BnAffineGrad> backward_bn_affine(const Model& model, const ActivationCache& cache,
                                             const Tensor& loss_grad_logits) {
    return backward_impl(model, cache, loss_grad_logits, nullptr);
}

Tensor entropy_loss_grad(const SoftmaxEntropy& se, const std::vector<std::size_t>& selected) {
    std::size_t B = se.probs.dim(0), C = se.probs.dim(1);
    std::vector<std::size_t> rows = selected;
    if (rows.empty()) {
        rows.resize(B);
        for (std::size_t b = 0; b < B; ++b) rows[b] = b;
    }
    Tensor grad = Tensor::zeros({B, C});
    double scale = 1.0 / static_cast<double>(rows.size());
    for (std::size_t b : rows) {
        if (b >= B) throw std::invalid_argument("entropy_loss_grad: row out of range");
        double h = se.entropy[b];
        for (std::size_t c = 0; c < C; ++c) {
            double p = se.probs.at(b, c);
            if (p > 0.0) grad.at(b, c) = -scale * p * (std::log(p) + h);
        }
    }
    return grad;
}

namespace train {

FullGrad backward_full(const Model& model, const ActivationCache& cache,
                       const Tensor& loss_grad_logits) {
    FullGrad fg;
    fg.bn = backward_impl(model, cache, loss_grad_logits, &fg.dense);
    return fg;
}

CeLoss cross_entropy(const Tensor& logits, std::span<const int> labels) {
    std::size_t B = logits.dim(0), C = logits.dim(1);
    if (labels.size() != B) throw std::invalid_argument("cross_entropy: label count mismatch");
    auto se = softmax_entropy(logits);
    double loss = 0.0;
    Tensor grad = Tensor::zeros({B, C});
    double scale = 1.0 / static_cast<double>(B);
    for (std::size_t b = 0; b < B; ++b) {
        int y = labels[b];
        if (y < 0 || static_cast<std::size_t>(y) >= C)
            throw std::invalid_argument("cross_entropy: label out of range");
        const double* z = logits.data() + b * C;
        double zmax = *std::max_element(z, z + C);
        double sum = 0.0;
        for (std::size_t c = 0; c < C; ++c) sum += std::exp(z[c] - zmax);
        loss -= (z[y] - zmax - std::log(sum)) * scale;
        for (std::size_t c = 0; c < C; ++c)
            grad.at(b, c) = (se.probs.at(b, c) - (static_cast<std::size_t>(y) == c ? 1.0 : 0.0)) * scale;
    }
    if (!std::isfinite(loss)) throw std::runtime_error("cross_entropy: non-finite loss");
    return {loss, std::move(grad)};
}

} // namespace train

} // namespace odtta
