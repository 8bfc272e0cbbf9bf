#include "odtta/adapter.hpp"

#include <cmath>
#include <stdexcept>

namespace odtta {

void AdaptConfig::validate() const {
    if (stats_batch < 2) throw std::invalid_argument("adapt config: stats_batch must be >= 2");
    if (cache_size < stats_batch)
        throw std::invalid_argument("adapt config: cache_size must be >= stats_batch");
    if (param_batch < 1) throw std::invalid_argument("adapt config: param_batch must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("adapt config: lr must be positive");
    if (!(stats_momentum > 0.0 && stats_momentum < 1.0))
        throw std::invalid_argument("adapt config: stats_momentum must be in (0,1)");
    if (!(tau_coeff > 0.0)) throw std::invalid_argument("adapt config: tau_coeff must be positive");
}

std::size_t stats_phase(Model& model, const Tensor& cached, const AdaptConfig& cfg,
                        ResourceCounters* counters) {
    cfg.validate();
    std::size_t n = cached.dim(0);
    std::size_t batches = n / cfg.stats_batch;
    for (std::size_t k = 0; k < batches; ++k) {
        Tensor bx = cached.slice_rows(k * cfg.stats_batch, (k + 1) * cfg.stats_batch);
        auto fwd = forward(model, bx, BnMode::BatchStats, CachePolicy::None);
        if (counters) counters->note_forward(cfg.stats_batch, fwd.cache.retained_count());
        for (std::size_t b = 0; b < model.bn.size(); ++b) {
            auto merged =
                merge_stats(model.bn[b].stats(), fwd.cache.bn_stats[b], cfg.stats_momentum);
            model.bn[b].running_mean = std::move(merged.mean);
            model.bn[b].running_var = std::move(merged.var);
        }
    }
    return batches;
}

ParamPhaseResult param_phase(Model& model, const Tensor& cached, const AdaptConfig& cfg,
                             ResourceCounters* counters) {
    cfg.validate();
    ParamPhaseResult res;
    double tau = cfg.tau_coeff * std::log(static_cast<double>(model.spec.class_count));
    BnSnapshot before = snapshot(model);
    std::size_t n = cached.dim(0);
    try {
        for (std::size_t pass = 0; pass < cfg.param_passes; ++pass) {
            for (std::size_t off = 0; off < n; off += cfg.param_batch) {
                std::size_t end = std::min(off + cfg.param_batch, n);
                Tensor bx = cached.slice_rows(off, end);
                auto fwd = forward(model, bx, BnMode::RunningStats, CachePolicy::None);
                if (counters) counters->note_forward(end - off, fwd.cache.retained_count());
                auto se = softmax_entropy(fwd.logits);
                std::vector<std::size_t> survivors;
                for (std::size_t i = 0; i < se.entropy.size(); ++i)
                    if (se.entropy[i] < tau) survivors.push_back(i);
                res.filtered += (end - off) - survivors.size();
                if (survivors.empty()) continue;

                Tensor sx = bx.gather_rows(survivors);
                auto sfwd = forward(model, sx, BnMode::RunningStats, CachePolicy::ForBackward);
                if (counters) counters->note_forward(survivors.size(), sfwd.cache.retained_count());
                auto sse = softmax_entropy(sfwd.logits);
                double loss = 0.0;
                for (double h : sse.entropy) loss += h;
                loss /= static_cast<double>(sse.entropy.size());
                if (!std::isfinite(loss)) throw std::runtime_error("param_phase: non-finite loss");

                auto grads = backward_bn_affine(model, sfwd.cache, entropy_loss_grad(sse));
                if (counters) counters->note_backward(survivors.size());
                for (std::size_t b = 0; b < model.bn.size(); ++b) {
                    auto& bn = model.bn[b];
                    for (std::size_t j = 0; j < bn.dim(); ++j) {
                        bn.gamma[j] -= cfg.lr * grads[b].gamma[j];
                        bn.beta[j] -= cfg.lr * grads[b].beta[j];
                    }
                }
                ++res.steps;
                res.losses.push_back(loss);
            }
        }
    } catch (const std::runtime_error&) {
        // numerical failure: roll the BN state back and report, don't throw
        restore(model, before);
        res.failed = true;
    }
    return res;
}

AdaptOutcome adapt(Model& model, const CandidatePool& pool, const Tensor& cached,
                   const AdaptConfig& cfg, ResourceCounters& counters) {
    cfg.validate();
    if (pool.empty()) throw std::invalid_argument("adapt: empty candidate pool");
    if (cached.dim(0) != cfg.cache_size)
        throw std::invalid_argument("adapt: cached sample count != cache_size");
    if (pool.fingerprint() != model.fingerprint())
        throw std::invalid_argument("adapt: pool/model fingerprint mismatch");

    AdaptOutcome out;
    ResourceCounters local; // call-scoped deltas for the report

    // domain estimate from the cached samples, in the pool's reference frame
    out.domain_feature = pool.query_feature(model, cached, cfg.stats_batch, &local);

    const Candidate& chosen = pool.select(out.domain_feature);
    out.report.selected_candidate = chosen.id;
    restore(model, chosen.snap);

    out.report.stats_batches_processed = stats_phase(model, cached, cfg, &local);

    if (cfg.param_passes > 0) {
        auto pp = param_phase(model, cached, cfg, &local);
        out.report.param_steps_taken = pp.steps;
        out.report.samples_filtered_out = pp.filtered;
        out.report.loss_trajectory = std::move(pp.losses);
        out.report.param_phase_failed = pp.failed;
    }

    out.report.forward_samples = local.forward_sample_count;
    out.report.backward_samples = local.backward_sample_count;
    out.report.peak_retained = local.peak_retained_activations;

    counters.forward_sample_count += local.forward_sample_count;
    counters.backward_sample_count += local.backward_sample_count;
    counters.peak_retained_activations =
        std::max(counters.peak_retained_activations, local.peak_retained_activations);
    counters.adaptations_triggered += 1;

    out.adapted_snapshot = snapshot(model);
    return out;
}

} // namespace odtta
