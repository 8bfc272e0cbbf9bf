#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "odtta/harness.hpp"
#include "odtta/pool.hpp"
#include "odtta/stream_lab.hpp"

namespace odtta {

// One structured document drives a whole experiment: task generation,
// source fitting, pool construction, the policy configs, and the stream
// schedule. Every random choice is pinned by an explicit seed.
struct ExperimentConfig {
    TaskSpec task;
    std::vector<std::size_t> hidden = {24, 16};
    FitConfig fit;
    std::size_t train_samples = 4096;
    PoolBuildConfig pool;
    DetectorConfig detector;
    AdaptConfig adapter;
    ContinualConfig continual;
    StreamSchedule schedule;
    PolicyKind policy = PolicyKind::OnDemand;

    ModelSpec arch() const;
    PolicyConfig policy_config() const;
    void validate() const;
};

// Defaults reproduce the reference desk-scale setup: d=32, C=10, source
// model fit to >= 95% clean accuracy, detector threshold preset 0.05.
ExperimentConfig default_config();

nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const nlohmann::json& j);

// Deterministic end-to-end pieces shared by the CLI and the test suites.
Model build_source_model(const ExperimentConfig& cfg);
PoolBuildResult build_pool(const ExperimentConfig& cfg, const Model& source);

struct ExperimentResult {
    RunResult run;
    Summary summary;
    Stream stream;
};

// fit source -> build pool -> generate stream -> run policy -> evaluate.
// Fully determined by the config document.
ExperimentResult run_experiment(const ExperimentConfig& cfg);
ExperimentResult run_experiment(const ExperimentConfig& cfg, const Model& source,
                                const CandidatePool& pool);

} // namespace odtta
