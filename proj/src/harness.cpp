#include "odtta/harness.hpp"

#include <cmath>
#include <stdexcept>

namespace odtta {

const char* policy_name(PolicyKind k) {
    switch (k) {
        case PolicyKind::SourceOnly: return "source";
        case PolicyKind::Continual: return "continual";
        case PolicyKind::OnDemand: return "ondemand";
    }
    return "?";
}

PolicyKind policy_from_name(const std::string& name) {
    if (name == "source") return PolicyKind::SourceOnly;
    if (name == "continual") return PolicyKind::Continual;
    if (name == "ondemand") return PolicyKind::OnDemand;
    throw std::invalid_argument("unknown policy: " + name);
}

namespace {

char phase_char(DetectorPhase p) {
    switch (p) {
        case DetectorPhase::CollectingBaseline: return 'B';
        case DetectorPhase::Monitoring: return 'M';
        case DetectorPhase::Suppressed: return 'S';
    }
    return '?';
}

struct SamplePrediction {
    int predicted;
    double entropy;
};

SamplePrediction predict_one(const Model& model, const Tensor& samples, std::size_t row,
                             ResourceCounters& counters) {
    Tensor x = samples.slice_rows(row, row + 1);
    auto fwd = forward(model, x, BnMode::RunningStats, CachePolicy::None);
    counters.note_forward(1, fwd.cache.retained_count());
    auto se = softmax_entropy(fwd.logits);
    return {predict_class(fwd.logits.row(0)), se.entropy[0]};
}

RunResult run_source_only(Model model, const Tensor& samples, const PolicyConfig& policy) {
    RunResult res;
    std::size_t n = samples.dim(0);
    res.trace.reserve(n);
    double ema = 0.0;
    bool ema_init = false;
    for (std::size_t i = 0; i < n; ++i) {
        auto p = predict_one(model, samples, i, res.counters);
        ema = ema_init ? policy.detector.momentum * ema + (1.0 - policy.detector.momentum) * p.entropy
                       : p.entropy;
        ema_init = true;
        res.trace.push_back({i, p.predicted, p.entropy, ema, '-', false, -1, res.counters});
    }
    return res;
}

RunResult run_continual(Model model, const Tensor& samples, const PolicyConfig& policy) {
    const auto& cc = policy.continual;
    if (cc.batch < 2) throw std::invalid_argument("continual: batch must be >= 2");
    RunResult res;
    std::size_t n = samples.dim(0);
    res.trace.reserve(n);
    double tau = cc.tau_coeff * std::log(static_cast<double>(model.spec.class_count));
    double ema = 0.0;
    bool ema_init = false;

    std::size_t off = 0;
    for (; off + cc.batch <= n; off += cc.batch) {
        Tensor bx = samples.slice_rows(off, off + cc.batch);

        // adapt on the batch: one filtered-entropy step with batch statistics
        auto fwd = forward(model, bx, BnMode::BatchStats, CachePolicy::ForBackward);
        res.counters.note_forward(cc.batch, fwd.cache.retained_count());
        auto se = softmax_entropy(fwd.logits);
        std::vector<std::size_t> survivors;
        for (std::size_t i = 0; i < se.entropy.size(); ++i)
            if (se.entropy[i] < tau) survivors.push_back(i);
        Tensor grad = survivors.empty() ? Tensor::zeros({cc.batch, model.spec.class_count})
                                        : entropy_loss_grad(se, survivors);
        auto grads = backward_bn_affine(model, fwd.cache, grad);
        res.counters.note_backward(cc.batch);
        for (std::size_t b = 0; b < model.bn.size(); ++b) {
            auto& bn = model.bn[b];
            for (std::size_t j = 0; j < bn.dim(); ++j) {
                bn.gamma[j] -= cc.lr * grads[b].gamma[j];
                bn.beta[j] -= cc.lr * grads[b].beta[j];
            }
            auto merged = merge_stats(bn.stats(), fwd.cache.bn_stats[b], cc.stats_momentum);
            bn.running_mean = std::move(merged.mean);
            bn.running_var = std::move(merged.var);
        }
        res.counters.adaptations_triggered += 1;

        // then predict the batch with the updated model (standard inference)
        auto pfwd = forward(model, bx, BnMode::RunningStats, CachePolicy::None);
        res.counters.note_forward(cc.batch, pfwd.cache.retained_count());
        auto pse = softmax_entropy(pfwd.logits);
        for (std::size_t i = 0; i < cc.batch; ++i) {
            double h = pse.entropy[i];
            ema = ema_init ? policy.detector.momentum * ema + (1.0 - policy.detector.momentum) * h
                           : h;
            ema_init = true;
            res.trace.push_back({off + i, predict_class(pfwd.logits.row(i)), h, ema, '-', false, -1,
                                 res.counters});
        }
    }
    // trailing samples that never filled a batch: inference only
    for (; off < n; ++off) {
        auto p = predict_one(model, samples, off, res.counters);
        ema = ema_init ? policy.detector.momentum * ema + (1.0 - policy.detector.momentum) * p.entropy
                       : p.entropy;
        ema_init = true;
        res.trace.push_back({off, p.predicted, p.entropy, ema, '-', false, -1, res.counters});
    }
    return res;
}

RunResult run_on_demand(Model model, CandidatePool pool, const Tensor& samples,
                        const PolicyConfig& policy) {
    RunResult res;
    std::size_t n = samples.dim(0);
    res.trace.reserve(n);
    ShiftDetector detector(policy.detector);
    std::vector<std::size_t> cache_rows;
    cache_rows.reserve(policy.adapter.cache_size);
    bool caching = false;
    long long active = -1;

    for (std::size_t i = 0; i < n; ++i) {
        auto p = predict_one(model, samples, i, res.counters);
        bool trigger = false;
        auto decision = detector.ingest(p.entropy);
        if (caching) {
            cache_rows.push_back(i);
            res.counters.samples_cached += 1;
            if (cache_rows.size() == policy.adapter.cache_size) {
                Tensor cached = samples.gather_rows(cache_rows);
                auto outcome = adapt(model, pool, cached, policy.adapter, res.counters);
                pool.add_progressive(outcome.adapted_snapshot, outcome.domain_feature);
                active = static_cast<long long>(outcome.report.selected_candidate);
                res.adapt_reports.push_back(outcome.report);
                detector.reset_after_adaptation();
                caching = false;
                cache_rows.clear();
            }
        } else if (decision == ShiftDecision::ShiftDetected) {
            trigger = true;
            caching = true; // the next cache_size samples feed the adaptation
        }
        res.trace.push_back({i, p.predicted, p.entropy, detector.ema_sample(),
                             phase_char(detector.phase()), trigger, active, res.counters});
    }
    res.final_pool = std::move(pool);
    return res;
}

} // namespace

RunResult run(Model model, CandidatePool pool, const Tensor& samples, const PolicyConfig& policy) {
    if (samples.rank() != 2 || samples.dim(0) == 0)
        throw std::invalid_argument("run: empty sample stream");
    RunResult res;
    switch (policy.kind) {
        case PolicyKind::SourceOnly:
            res = run_source_only(std::move(model), samples, policy);
            res.final_pool = std::move(pool);
            break;
        case PolicyKind::Continual:
            res = run_continual(std::move(model), samples, policy);
            res.final_pool = std::move(pool);
            break;
        case PolicyKind::OnDemand: {
            if (pool.empty()) throw std::invalid_argument("run: on-demand needs a non-empty pool");
            if (pool.fingerprint() != model.fingerprint())
                throw std::invalid_argument("run: pool/model fingerprint mismatch");
            res = run_on_demand(std::move(model), std::move(pool), samples, policy);
            break;
        }
    }
    return res;
}

Summary evaluate(const std::vector<TraceRecord>& trace, std::span<const SampleMeta> meta,
                 const StreamSchedule& schedule, std::size_t drop_window) {
    schedule.validate();
    if (trace.size() != meta.size() || trace.size() != schedule.total_length())
        throw std::invalid_argument("evaluate: trace/labels/schedule length mismatch");

    Summary s;
    std::size_t n = trace.size();
    std::size_t correct_total = 0;
    std::vector<char> correct(n);
    for (std::size_t i = 0; i < n; ++i) {
        correct[i] = trace[i].predicted == meta[i].label;
        correct_total += correct[i];
    }
    s.overall_accuracy = static_cast<double>(correct_total) / static_cast<double>(n);

    // span boundaries
    std::vector<std::size_t> start(schedule.spans.size());
    std::size_t acc = 0;
    for (std::size_t j = 0; j < schedule.spans.size(); ++j) {
        start[j] = acc;
        acc += schedule.spans[j].length;
    }

    auto window_accuracy = [&](std::size_t begin, std::size_t end) {
        std::size_t hits = 0;
        for (std::size_t i = begin; i < end; ++i) hits += correct[i];
        return end > begin ? static_cast<double>(hits) / static_cast<double>(end - begin) : 0.0;
    };

    for (std::size_t j = 0; j < schedule.spans.size(); ++j) {
        std::size_t end = start[j] + schedule.spans[j].length;
        DomainOutcome d;
        d.span_index = j;
        d.domain_id = schedule.spans[j].domain.domain_id();
        d.start = start[j];
        d.length = schedule.spans[j].length;
        d.accuracy = window_accuracy(start[j], end);
        s.per_domain.push_back(d);

        std::size_t triggers_here = 0;
        std::size_t first_trigger = 0;
        for (std::size_t i = start[j]; i < end; ++i) {
            if (trace[i].trigger) {
                if (triggers_here == 0) first_trigger = i;
                ++triggers_here;
            }
        }
        if (j == 0) {
            s.false_triggers += triggers_here; // nothing shifted into span 0
            continue;
        }
        ShiftOutcome sh;
        sh.span_index = j;
        sh.boundary = start[j];
        sh.detected = triggers_here > 0;
        sh.latency = sh.detected ? first_trigger - start[j] : 0;
        sh.extra_triggers = triggers_here > 0 ? triggers_here - 1 : 0;
        std::size_t w = std::min({drop_window, schedule.spans[j].length, schedule.spans[j - 1].length});
        sh.measured_drop = window_accuracy(start[j] - w, start[j]) - window_accuracy(start[j], start[j] + w);
        s.shifts.push_back(sh);
        s.detected += sh.detected;
        s.missed += !sh.detected;
        s.false_triggers += sh.extra_triggers;
    }

    s.counters = trace.back().counters;
    s.energy_proxy = s.counters.energy_proxy();
    return s;
}

} // namespace odtta
