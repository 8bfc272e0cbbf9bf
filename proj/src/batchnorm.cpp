#include "odtta/batchnorm.hpp"

#include <cmath>
#include <stdexcept>

#include "odtta/nn.hpp"

namespace odtta {

BnLayerState BnLayerState::identity(std::size_t dim, double eps) {
    BnLayerState s;
    s.running_mean.assign(dim, 0.0);
    s.running_var.assign(dim, 1.0);
    s.gamma.assign(dim, 1.0);
    s.beta.assign(dim, 0.0);
    s.eps = eps;
    return s;
}

void BnLayerState::validate() const {
    std::size_t d = gamma.size();
    if (beta.size() != d || running_mean.size() != d || running_var.size() != d)
        throw std::invalid_argument("bn state: array length mismatch");
    if (!(eps > 0.0)) throw std::invalid_argument("bn state: eps must be positive");
    for (double v : running_var) {
        if (!(v >= 0.0)) throw std::invalid_argument("bn state: negative running variance");
        if (!std::isfinite(v)) throw std::invalid_argument("bn state: non-finite variance");
    }
}

BnStats merge_stats(const BnStats& prev, const BnStats& batch, double momentum) {
    if (!(momentum > 0.0 && momentum < 1.0))
        throw std::invalid_argument("merge_stats: momentum must be in (0,1)");
    std::size_t d = prev.dim();
    if (batch.dim() != d || prev.var.size() != d || batch.var.size() != d)
        throw std::invalid_argument("merge_stats: dimension mismatch");
    BnStats out;
    out.mean.resize(d);
    out.var.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
        if (!(batch.var[j] >= 0.0))
            throw std::invalid_argument("merge_stats: negative batch variance");
        out.mean[j] = momentum * prev.mean[j] + (1.0 - momentum) * batch.mean[j];
        out.var[j] = momentum * prev.var[j] + (1.0 - momentum) * batch.var[j];
    }
    return out;
}

BnSnapshot snapshot(const Model& model) {
    BnSnapshot snap;
    snap.fingerprint = model.fingerprint();
    snap.layers = model.bn;
    return snap;
}

void restore(Model& model, const BnSnapshot& snap) {
    if (snap.fingerprint != model.fingerprint())
        throw std::invalid_argument("restore: snapshot fingerprint mismatch");
    if (snap.layers.size() != model.bn.size())
        throw std::invalid_argument("restore: BN layer count mismatch");
    for (std::size_t i = 0; i < snap.layers.size(); ++i)
        if (snap.layers[i].dim() != model.bn[i].dim())
            throw std::invalid_argument("restore: BN layer dim mismatch");
    model.bn = snap.layers;
}

} // namespace odtta
