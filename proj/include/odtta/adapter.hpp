#pragma once

#include <cstdint>
#include <vector>

#include "odtta/counters.hpp"
#include "odtta/nn.hpp"
#include "odtta/pool.hpp"

namespace odtta {

struct AdaptConfig {
    std::size_t cache_size = 128;  // N samples cached after a trigger
    std::size_t stats_batch = 16;  // forward-only statistics batches
    std::size_t param_batch = 1;   // backprop batches for gamma/beta
    double lr = 0.02;
    double stats_momentum = 0.5;
    double tau_coeff = 0.4;        // entropy filter at tau_coeff * log C
    std::size_t param_passes = 2;

    void validate() const;
};

struct AdaptReport {
    std::size_t selected_candidate = 0;
    std::size_t stats_batches_processed = 0;
    std::size_t param_steps_taken = 0;
    std::size_t samples_filtered_out = 0;
    std::vector<double> loss_trajectory; // filtered entropy loss per step
    bool param_phase_failed = false;
    // resource deltas over the whole call
    std::uint64_t forward_samples = 0;
    std::uint64_t backward_samples = 0;
    std::uint64_t peak_retained = 0;
};

struct AdaptOutcome {
    AdaptReport report;
    BnSnapshot adapted_snapshot;   // progressive-candidate payload
    DomainFeature domain_feature;  // estimated from the cached samples
};

// Phase 1: batch-by-batch statistics merge at stats_batch, forward only.
// Statistics start from whatever snapshot the model carries. Returns the
// number of batches processed (leftover samples beyond the last full batch
// are skipped).
std::size_t stats_phase(Model& model, const Tensor& cached, const AdaptConfig& cfg,
                        ResourceCounters* counters = nullptr);

struct ParamPhaseResult {
    std::size_t steps = 0;
    std::size_t filtered = 0;
    std::vector<double> losses;
    bool failed = false;
};

// Phase 2: entropy minimization on gamma/beta in param_batch chunks under
// RunningStats, keeping only samples with entropy below tau. Fully
// filtered chunks are skipped. Running statistics are never touched. A
// non-finite loss restores the pre-phase snapshot and marks the phase
// failed instead of throwing.
ParamPhaseResult param_phase(Model& model, const Tensor& cached, const AdaptConfig& cfg,
                             ResourceCounters* counters = nullptr);

// Full on-demand adaptation: estimate the domain feature from the cached
// samples, select the nearest candidate, restore it, run the two phases in
// order, and package the resulting snapshot + feature as the next
// progressive candidate. The pool itself is not modified here. The model
// has no access to labels anywhere on this path.
AdaptOutcome adapt(Model& model, const CandidatePool& pool, const Tensor& cached,
                   const AdaptConfig& cfg, ResourceCounters& counters);

} // namespace odtta
