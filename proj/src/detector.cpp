#include "odtta/detector.hpp"

#include <cmath>
#include <stdexcept>

namespace odtta {

void DetectorConfig::validate() const {
    if (!(momentum > 0.0 && momentum < 1.0))
        throw std::invalid_argument("detector: momentum must be in (0,1)");
    if (!(threshold > 0.0)) throw std::invalid_argument("detector: threshold must be positive");
    if (baseline_window == 0) throw std::invalid_argument("detector: baseline_window must be >= 1");
    if (!(entropy_cap > 0.0)) throw std::invalid_argument("detector: entropy_cap must be positive");
}

ShiftDetector::ShiftDetector(DetectorConfig cfg) : cfg_(cfg) { cfg_.validate(); }

ShiftDecision ShiftDetector::ingest(double x) {
    if (!std::isfinite(x) || x < 0.0 || x > cfg_.entropy_cap + 1e-9)
        throw std::invalid_argument("detector: entropy outside [0, log C]");
    ++seen_;
    switch (phase_) {
        case DetectorPhase::Suppressed:
            // detection paused while the harness caches adaptation samples
            return ShiftDecision::NoShift;
        case DetectorPhase::CollectingBaseline: {
            base_sum_ += x;
            ++base_count_;
            ema_ = base_sum_ / static_cast<double>(base_count_);
            if (base_count_ == cfg_.baseline_window) {
                base_ = ema_;
                has_base_ = true;
                phase_ = DetectorPhase::Monitoring;
                // seed the EMA at the baseline so monitoring starts without
                // a cold-start transient
            }
            return ShiftDecision::NoShift;
        }
        case DetectorPhase::Monitoring: {
            ema_ = cfg_.momentum * ema_ + (1.0 - cfg_.momentum) * x;
            if (ema_ - base_ > cfg_.threshold) {
                phase_ = DetectorPhase::Suppressed;
                return ShiftDecision::ShiftDetected;
            }
            return ShiftDecision::NoShift;
        }
    }
    return ShiftDecision::NoShift;
}

void ShiftDetector::reset_after_adaptation() {
    if (phase_ != DetectorPhase::Suppressed)
        throw std::logic_error("detector: reset_after_adaptation outside Suppressed phase");
    phase_ = DetectorPhase::CollectingBaseline;
    has_base_ = false;
    base_ = 0.0;
    base_sum_ = 0.0;
    base_count_ = 0;
}

} // namespace odtta
