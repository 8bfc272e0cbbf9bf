#include "odtta/config.hpp"

#include <cmath>
#include <stdexcept>

#include "odtta/rng.hpp"

namespace odtta {

using nlohmann::json;

ModelSpec ExperimentConfig::arch() const {
    return make_mlp_spec(task.input_dim, hidden, task.class_count);
}

PolicyConfig ExperimentConfig::policy_config() const {
    PolicyConfig pc;
    pc.kind = policy;
    pc.continual = continual;
    pc.detector = detector;
    pc.detector.entropy_cap = std::log(static_cast<double>(task.class_count));
    pc.adapter = adapter;
    pc.seed = schedule.seed;
    return pc;
}

void ExperimentConfig::validate() const {
    arch().validate();
    adapter.validate();
    schedule.validate();
    policy_config().detector.validate();
    if (train_samples < 2 * pool.batch_size * pool.m_clusters)
        throw std::invalid_argument("config: train_samples too small for pool construction");
}

ExperimentConfig default_config() {
    ExperimentConfig cfg;
    cfg.task = TaskSpec{};
    cfg.hidden = {24, 16};
    cfg.fit = FitConfig{};
    cfg.train_samples = 4096;
    cfg.pool = PoolBuildConfig{};
    cfg.detector = DetectorConfig{};
    cfg.detector.threshold = 0.03;
    cfg.detector.baseline_window = 200;
    cfg.adapter = AdaptConfig{};
    cfg.continual = ContinualConfig{};
    cfg.schedule = make_random_schedule(8, 2000, 7);
    cfg.policy = PolicyKind::OnDemand;
    return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
    json spans = json::array();
    for (const auto& s : cfg.schedule.spans)
        spans.push_back({{"kind", corruption_name(s.domain.kind)},
                         {"severity", s.domain.severity},
                         {"length", s.length}});
    return {
        {"version", 1},
        {"kind", "experiment_config"},
        {"task",
         {{"input_dim", cfg.task.input_dim},
          {"class_count", cfg.task.class_count},
          {"prototype_scale", cfg.task.prototype_scale},
          {"noise_scale", cfg.task.noise_scale},
          {"seed", cfg.task.seed}}},
        {"arch", {{"hidden", cfg.hidden}}},
        {"fit",
         {{"epochs", cfg.fit.epochs},
          {"lr", cfg.fit.lr},
          {"batch", cfg.fit.batch},
          {"stats_momentum", cfg.fit.stats_momentum},
          {"min_accuracy", cfg.fit.min_accuracy},
          {"seed", cfg.fit.seed},
          {"train_samples", cfg.train_samples}}},
        {"pool",
         {{"m_clusters", cfg.pool.m_clusters},
          {"supervised_epochs", cfg.pool.supervised_epochs},
          {"lr", cfg.pool.lr},
          {"batch_size", cfg.pool.batch_size},
          {"cluster_group", cfg.pool.cluster_group},
          {"stats_momentum", cfg.pool.stats_momentum},
          {"feature_layer_index", cfg.pool.feature_layer_index},
          {"capacity", cfg.pool.capacity},
          {"seed", cfg.pool.seed}}},
        {"detector",
         {{"momentum", cfg.detector.momentum},
          {"threshold", cfg.detector.threshold},
          {"baseline_window", cfg.detector.baseline_window}}},
        {"adapter",
         {{"cache_size", cfg.adapter.cache_size},
          {"stats_batch", cfg.adapter.stats_batch},
          {"param_batch", cfg.adapter.param_batch},
          {"lr", cfg.adapter.lr},
          {"stats_momentum", cfg.adapter.stats_momentum},
          {"tau_coeff", cfg.adapter.tau_coeff},
          {"param_passes", cfg.adapter.param_passes}}},
        {"continual",
         {{"batch", cfg.continual.batch},
          {"lr", cfg.continual.lr},
          {"stats_momentum", cfg.continual.stats_momentum},
          {"tau_coeff", cfg.continual.tau_coeff}}},
        {"schedule", {{"seed", cfg.schedule.seed}, {"spans", std::move(spans)}}},
        {"policy", policy_name(cfg.policy)},
    };
}

ExperimentConfig config_from_json(const json& j) {
    if (j.value("version", 0) != 1 || j.value("kind", std::string()) != "experiment_config")
        throw std::runtime_error("config: missing version/kind header");
    ExperimentConfig cfg = default_config();

    const auto& t = j.at("task");
    cfg.task.input_dim = t.at("input_dim").get<std::size_t>();
    cfg.task.class_count = t.at("class_count").get<std::size_t>();
    cfg.task.prototype_scale = t.at("prototype_scale").get<double>();
    cfg.task.noise_scale = t.at("noise_scale").get<double>();
    cfg.task.seed = t.at("seed").get<std::uint64_t>();

    cfg.hidden = j.at("arch").at("hidden").get<std::vector<std::size_t>>();

    const auto& f = j.at("fit");
    cfg.fit.epochs = f.at("epochs").get<std::size_t>();
    cfg.fit.lr = f.at("lr").get<double>();
    cfg.fit.batch = f.at("batch").get<std::size_t>();
    cfg.fit.stats_momentum = f.at("stats_momentum").get<double>();
    cfg.fit.min_accuracy = f.at("min_accuracy").get<double>();
    cfg.fit.seed = f.at("seed").get<std::uint64_t>();
    cfg.train_samples = f.at("train_samples").get<std::size_t>();

    const auto& p = j.at("pool");
    cfg.pool.m_clusters = p.at("m_clusters").get<std::size_t>();
    cfg.pool.supervised_epochs = p.at("supervised_epochs").get<std::size_t>();
    cfg.pool.lr = p.at("lr").get<double>();
    cfg.pool.batch_size = p.at("batch_size").get<std::size_t>();
    cfg.pool.cluster_group = p.at("cluster_group").get<std::size_t>();
    cfg.pool.stats_momentum = p.at("stats_momentum").get<double>();
    cfg.pool.feature_layer_index = p.at("feature_layer_index").get<std::size_t>();
    cfg.pool.capacity = p.at("capacity").get<std::size_t>();
    cfg.pool.seed = p.at("seed").get<std::uint64_t>();

    const auto& d = j.at("detector");
    cfg.detector.momentum = d.at("momentum").get<double>();
    cfg.detector.threshold = d.at("threshold").get<double>();
    cfg.detector.baseline_window = d.at("baseline_window").get<std::size_t>();

    const auto& a = j.at("adapter");
    cfg.adapter.cache_size = a.at("cache_size").get<std::size_t>();
    cfg.adapter.stats_batch = a.at("stats_batch").get<std::size_t>();
    cfg.adapter.param_batch = a.at("param_batch").get<std::size_t>();
    cfg.adapter.lr = a.at("lr").get<double>();
    cfg.adapter.stats_momentum = a.at("stats_momentum").get<double>();
    cfg.adapter.tau_coeff = a.at("tau_coeff").get<double>();
    cfg.adapter.param_passes = a.at("param_passes").get<std::size_t>();

    const auto& c = j.at("continual");
    cfg.continual.batch = c.at("batch").get<std::size_t>();
    cfg.continual.lr = c.at("lr").get<double>();
    cfg.continual.stats_momentum = c.at("stats_momentum").get<double>();
    cfg.continual.tau_coeff = c.at("tau_coeff").get<double>();

    const auto& s = j.at("schedule");
    cfg.schedule.seed = s.at("seed").get<std::uint64_t>();
    cfg.schedule.spans.clear();
    for (const auto& sp : s.at("spans")) {
        SchedSpan span;
        span.domain.kind = corruption_from_name(sp.at("kind").get<std::string>());
        span.domain.severity = sp.at("severity").get<int>();
        span.length = sp.at("length").get<std::size_t>();
        cfg.schedule.spans.push_back(span);
    }

    cfg.policy = policy_from_name(j.at("policy").get<std::string>());
    cfg.validate();
    return cfg;
}

Model build_source_model(const ExperimentConfig& cfg) {
    auto train = sample_task(cfg.task, cfg.train_samples, hash_u64(cfg.task.seed, 0x747261696eull));
    return fit_source_model(cfg.task, cfg.arch(), train, cfg.fit);
}

PoolBuildResult build_pool(const ExperimentConfig& cfg, const Model& source) {
    auto train = sample_task(cfg.task, cfg.train_samples, hash_u64(cfg.task.seed, 0x747261696eull));
    return build_initial_pool(source, train.x, train.y, cfg.pool);
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const Model& source,
                                const CandidatePool& pool) {
    cfg.validate();
    ExperimentResult out;
    out.stream = generate(cfg.task, cfg.schedule);
    out.run = run(source, pool, out.stream.samples, cfg.policy_config());
    out.summary = evaluate(out.run.trace, out.stream.meta, cfg.schedule);
    return out;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    Model source = build_source_model(cfg);
    auto built = build_pool(cfg, source);
    return run_experiment(cfg, source, built.pool);
}

} // namespace odtta
