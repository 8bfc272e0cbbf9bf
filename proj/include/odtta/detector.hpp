#pragma once

#include <cstdint>
#include <optional>

namespace odtta {

struct DetectorConfig {
    double momentum = 0.995;        // history weight of the entropy EMA
    double threshold = 0.06;        // trigger when ema_sample - ema_base exceeds this
    std::size_t baseline_window = 100;
    double entropy_cap = 0.0;       // log C; ingests outside [0, cap] are rejected

    void validate() const;
};

enum class DetectorPhase { CollectingBaseline, Monitoring, Suppressed };
enum class ShiftDecision { NoShift, ShiftDetected };

// Per-sample EMA-entropy shift detector. Consumes prediction entropies
// only; it has no access to labels or inputs. Lifecycle: a baseline is
// collected over the first baseline_window samples (arithmetic mean), the
// EMA is seeded to that baseline and monitoring begins. A trigger moves
// the detector to Suppressed, where ingests are recorded no-ops until
// reset_after_adaptation() starts the next baseline collection.
class ShiftDetector {
public:
    explicit ShiftDetector(DetectorConfig cfg);

    ShiftDecision ingest(double sample_entropy);
    void reset_after_adaptation();

    DetectorPhase phase() const { return phase_; }
    double ema_sample() const { return ema_; }
    std::optional<double> ema_base() const {
        return has_base_ ? std::optional<double>(base_) : std::nullopt;
    }
    std::uint64_t samples_seen() const { return seen_; }
    const DetectorConfig& config() const { return cfg_; }

private:
    DetectorConfig cfg_;
    DetectorPhase phase_ = DetectorPhase::CollectingBaseline;
    double ema_ = 0.0;
    double base_ = 0.0;
    double base_sum_ = 0.0;
    std::size_t base_count_ = 0;
    bool has_base_ = false;
    std::uint64_t seen_ = 0;
};

} // namespace odtta
