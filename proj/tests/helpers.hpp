#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "odtta/config.hpp"
#include "odtta/nn.hpp"
#include "odtta/oracles.hpp"
#include "odtta/pool.hpp"
#include "odtta/rng.hpp"
#include "odtta/stream_lab.hpp"

namespace odtta::testing {

// Small fixed model used across suites: 4 -> 5 -> 4 -> 3 with two BN layers.
inline Model tiny_model(std::uint64_t seed = 7) {
    return init_model(make_mlp_spec(4, {5, 4}, 3), seed);
}

inline Tensor random_batch(std::size_t b, std::size_t d, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    std::vector<double> v(b * d);
    for (auto& x : v) x = rng.normal() * scale;
    return Tensor({b, d}, std::move(v));
}

// random small architecture: <= 4 dense layers, dims <= 16, >= 2 BN layers
inline Model random_model(Rng& rng) {
    std::size_t input = 2 + rng.index(14);
    std::size_t classes = 2 + rng.index(6);
    std::size_t n_hidden = 2 + rng.index(2);
    std::vector<std::size_t> hidden;
    for (std::size_t i = 0; i < n_hidden; ++i) hidden.push_back(2 + rng.index(14));
    Model m = init_model(make_mlp_spec(input, hidden, classes), rng.next_u64());
    // move the model off the identity-BN initialization point
    for (auto& bn : m.bn) {
        for (auto& g : bn.gamma) g = 0.6 + rng.uniform() * 0.9;
        for (auto& b : bn.beta) b = rng.normal() * 0.3;
        for (auto& mu : bn.running_mean) mu = rng.normal() * 0.4;
        for (auto& v : bn.running_var) v = 0.4 + rng.uniform() * 1.2;
    }
    return m;
}

// mean entropy over the whole batch, as a loss over logits
inline double mean_entropy_loss(const Tensor& logits) {
    auto se = softmax_entropy(logits);
    double s = 0.0;
    for (double h : se.entropy) s += h;
    return s / static_cast<double>(se.entropy.size());
}

inline double max_rel_err(const std::vector<BnAffineGrad>& got,
                          const std::vector<BnAffineGrad>& want) {
    double worst = 0.0;
    for (std::size_t b = 0; b < got.size(); ++b) {
        for (std::size_t j = 0; j < got[b].gamma.size(); ++j) {
            worst = std::max(worst, relative_error(got[b].gamma[j], want[b].gamma[j]));
            worst = std::max(worst, relative_error(got[b].beta[j], want[b].beta[j]));
        }
    }
    return worst;
}

// Shared expensive fixture: the default-config source model and initial
// pool, built once per test binary.
struct Workbench {
    ExperimentConfig cfg;
    Model source;
    PoolBuildResult built;
    LabeledSet heldout;

    static const Workbench& instance() {
        static Workbench w = [] {
            Workbench wb;
            wb.cfg = default_config();
            wb.source = build_source_model(wb.cfg);
            wb.built = build_pool(wb.cfg, wb.source);
            wb.heldout = sample_task(wb.cfg.task, 1500, 987654);
            return wb;
        }();
        return w;
    }
};

} // namespace odtta::testing
