#pragma once

#include <algorithm>
#include <cstdint>

namespace odtta {

// Latency/energy proxies kept by the harness and updated by every forward
// and backward pass. All fields are monotone non-decreasing during a run;
// no wall-clock or hardware measurement is involved.
struct ResourceCounters {
    std::uint64_t forward_sample_count = 0;
    std::uint64_t backward_sample_count = 0;
    std::uint64_t peak_retained_activations = 0;
    std::uint64_t adaptations_triggered = 0;
    std::uint64_t samples_cached = 0;

    void note_forward(std::uint64_t batch, std::uint64_t retained) {
        forward_sample_count += batch;
        peak_retained_activations = std::max(peak_retained_activations, retained);
    }
    void note_backward(std::uint64_t batch) { backward_sample_count += batch; }

    // backward costs roughly two forwards plus the update
    double energy_proxy() const {
        return static_cast<double>(forward_sample_count) +
               3.0 * static_cast<double>(backward_sample_count);
    }
};

} // namespace odtta
