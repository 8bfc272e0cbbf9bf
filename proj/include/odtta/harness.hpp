#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "odtta/adapter.hpp"
#include "odtta/counters.hpp"
#include "odtta/detector.hpp"
#include "odtta/pool.hpp"
#include "odtta/stream_lab.hpp"

namespace odtta {

enum class PolicyKind { SourceOnly, Continual, OnDemand };

const char* policy_name(PolicyKind k);
PolicyKind policy_from_name(const std::string& name);

// Continual baseline: buffer `batch` samples, run one filtered-entropy step
// at that batch size with the batch's own statistics, then predict the
// batch with the updated model.
struct ContinualConfig {
    std::size_t batch = 16;
    double lr = 0.005;
    double stats_momentum = 0.9;
    double tau_coeff = 0.4;
};

struct PolicyConfig {
    PolicyKind kind = PolicyKind::OnDemand;
    ContinualConfig continual;
    DetectorConfig detector;
    AdaptConfig adapter;
    std::uint64_t seed = 0;
};

// One row per stream sample. The correctness flag is absent by design: it
// is filled in by evaluate(), the only label consumer.
struct TraceRecord {
    std::size_t index = 0;
    int predicted = 0;
    double entropy = 0.0;
    double ema_value = 0.0;
    char phase = '-'; // B/M/S for on-demand, '-' otherwise
    bool trigger = false;
    long long active_candidate = -1;
    ResourceCounters counters;
};

struct RunResult {
    std::vector<TraceRecord> trace;
    ResourceCounters counters;
    std::vector<AdaptReport> adapt_reports;
    CandidatePool final_pool;
};

// Executes one policy over a sample stream. Takes the runtime model and
// pool by value (a run owns its deployed state). The sample tensor is the
// only data channel: labels and domain ids never reach this function.
RunResult run(Model model, CandidatePool pool, const Tensor& samples, const PolicyConfig& policy);

struct DomainOutcome {
    std::size_t span_index = 0;
    std::uint64_t domain_id = 0;
    std::size_t start = 0;
    std::size_t length = 0;
    double accuracy = 0.0;
};

struct ShiftOutcome {
    std::size_t span_index = 0;   // span the stream shifted into
    std::size_t boundary = 0;     // first sample index of that span
    bool detected = false;
    std::size_t latency = 0;      // boundary -> first trigger, when detected
    double measured_drop = 0.0;   // windowed accuracy drop at the boundary
    std::size_t extra_triggers = 0;
};

struct Summary {
    double overall_accuracy = 0.0;
    std::vector<DomainOutcome> per_domain;
    std::vector<ShiftOutcome> shifts;
    std::size_t detected = 0;
    std::size_t missed = 0;
    std::size_t false_triggers = 0;
    ResourceCounters counters;
    double energy_proxy = 0.0;
};

// Scores a trace against the hidden labels and the ground-truth schedule.
// Convention: the first trigger inside a span detects the shift into that
// span; any further triggers in the span (and all triggers in span 0) are
// false triggers.
Summary evaluate(const std::vector<TraceRecord>& trace, std::span<const SampleMeta> meta,
                 const StreamSchedule& schedule, std::size_t drop_window = 200);

} // namespace odtta
