// odtta — on-demand test-time adaptation workbench.
//
// Subcommands cover the whole experiment lifecycle: synthesize a task and
// fit the source model, build a candidate pool, dump streams, execute a
// policy over a stream with full tracing, evaluate traces against the
// generator's ground truth, and compare summaries.
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "odtta/adapter.hpp"
#include "odtta/config.hpp"
#include "odtta/harness.hpp"
#include "odtta/serialize.hpp"

using namespace odtta;
namespace fs = std::filesystem;

namespace {

ExperimentConfig load_config(const std::string& path) {
    return config_from_json(read_json_file(path));
}

Model obtain_model(const ExperimentConfig& cfg, const std::string& model_path) {
    if (!model_path.empty()) return model_from_json(read_json_file(model_path));
    std::printf("fitting source model (epochs=%zu, lr=%g)...\n", cfg.fit.epochs, cfg.fit.lr);
    return build_source_model(cfg);
}

CandidatePool obtain_pool(const ExperimentConfig& cfg, const Model& model,
                          const std::string& pool_path) {
    if (!pool_path.empty()) return pool_from_json(read_json_file(pool_path));
    std::printf("building initial candidate pool (m_clusters=%zu)...\n", cfg.pool.m_clusters);
    return build_pool(cfg, model).pool;
}

void print_summary(const Summary& s, const char* policy) {
    std::printf("policy %s: accuracy %.4f | detected %zu missed %zu false %zu | "
                "fwd %llu bwd %llu peak %llu | energy proxy %.0f\n",
                policy, s.overall_accuracy, s.detected, s.missed, s.false_triggers,
                (unsigned long long)s.counters.forward_sample_count,
                (unsigned long long)s.counters.backward_sample_count,
                (unsigned long long)s.counters.peak_retained_activations, s.energy_proxy);
    for (const auto& d : s.per_domain)
        std::printf("  span %zu (domain %llu, %zu samples): accuracy %.4f\n", d.span_index,
                    (unsigned long long)d.domain_id, d.length, d.accuracy);
    for (const auto& sh : s.shifts) {
        if (sh.detected)
            std::printf("  shift @%zu: detected, latency %zu, drop %.3f\n", sh.boundary,
                        sh.latency, sh.measured_drop);
        else
            std::printf("  shift @%zu: missed, drop %.3f\n", sh.boundary, sh.measured_drop);
    }
}

const char* provenance_label(const Provenance& p) {
    switch (p.kind) {
        case Provenance::Kind::InitialCluster: return "initial-cluster";
        case Provenance::Kind::Progressive: return "progressive";
        case Provenance::Kind::SourceModel: return "source";
    }
    return "?";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"on-demand test-time adaptation workbench"};
    app.require_subcommand(1);

    std::string config_path, model_path, pool_path, out_path, out_dir, probe_path;
    std::string samples_path, meta_path, trace_path, out_model, out_pool, policy_override;
    std::vector<std::string> summary_paths;
    std::vector<double> thresholds;
    std::size_t probe_batch = 16;

    auto* init = app.add_subcommand("init-config", "write the default experiment config");
    init->add_option("--out", out_path, "output config path")->required();

    auto* fit = app.add_subcommand("fit-source", "fit the source model from the config's task");
    fit->add_option("--config", config_path)->required();
    fit->add_option("--out", out_path, "output model path")->required();

    auto* pool_cmd = app.add_subcommand("pool", "candidate pool operations");
    pool_cmd->require_subcommand(1);
    auto* pool_build = pool_cmd->add_subcommand("build", "cluster the training data and fit candidates");
    pool_build->add_option("--config", config_path)->required();
    pool_build->add_option("--model", model_path, "source model file (fit from config if omitted)");
    pool_build->add_option("--out", out_path)->required();
    auto* pool_inspect = pool_cmd->add_subcommand("inspect", "list pool candidates");
    pool_inspect->add_option("--pool", pool_path)->required();
    auto* pool_select = pool_cmd->add_subcommand("select", "select the nearest candidate for probe samples");
    pool_select->add_option("--pool", pool_path)->required();
    pool_select->add_option("--model", model_path, "deployed model file")->required();
    pool_select->add_option("--probe", probe_path, "samples file")->required();
    pool_select->add_option("--batch", probe_batch, "feature extraction batch size");

    auto* dump = app.add_subcommand("stream", "stream operations");
    dump->require_subcommand(1);
    auto* stream_dump = dump->add_subcommand("dump", "write the configured stream to a samples file");
    stream_dump->add_option("--config", config_path)->required();
    stream_dump->add_option("--out", out_path, "samples file")->required();
    stream_dump->add_option("--meta", meta_path, "evaluation-side labels/domains file");

    auto* run_cmd = app.add_subcommand("run", "execute a policy over the configured stream");
    run_cmd->add_option("--config", config_path)->required();
    run_cmd->add_option("--policy", policy_override, "source|continual|ondemand (overrides config)");
    run_cmd->add_option("--model", model_path, "source model file (fit from config if omitted)");
    run_cmd->add_option("--pool", pool_path, "pool file (built from config if omitted)");
    run_cmd->add_option("--out", out_dir, "output directory for trace + summary")->required();

    auto* eval_cmd = app.add_subcommand("evaluate", "score a trace against the configured stream");
    eval_cmd->add_option("--config", config_path)->required();
    eval_cmd->add_option("--trace", trace_path)->required();
    eval_cmd->add_option("--out", out_path, "summary file");

    auto* report_cmd = app.add_subcommand("report", "tabulate one or more summary files");
    report_cmd->add_option("summaries", summary_paths, "summary files")->required();

    auto* adapt_cmd = app.add_subcommand("adapt", "run one adaptation from cached samples");
    adapt_cmd->add_option("--config", config_path)->required();
    adapt_cmd->add_option("--model", model_path)->required();
    adapt_cmd->add_option("--pool", pool_path)->required();
    adapt_cmd->add_option("--samples", samples_path)->required();
    adapt_cmd->add_option("--out-model", out_model);
    adapt_cmd->add_option("--out-pool", out_pool);

    auto* calib = app.add_subcommand(
        "calibrate", "sweep detector thresholds and tabulate per-severity accuracy drops");
    calib->add_option("--config", config_path)->required();
    calib->add_option("--thresholds", thresholds, "threshold values to sweep");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*init) {
            write_json_file(out_path, config_to_json(default_config()));
            std::printf("wrote %s\n", out_path.c_str());
        } else if (*fit) {
            auto cfg = load_config(config_path);
            Model model = build_source_model(cfg);
            write_json_file(out_path, model_to_json(model));
            auto heldout = sample_task(cfg.task, 1000, 991);
            std::printf("wrote %s (held-out accuracy %.4f)\n", out_path.c_str(),
                        accuracy(model, heldout.x, heldout.y));
        } else if (*pool_build) {
            auto cfg = load_config(config_path);
            Model model = obtain_model(cfg, model_path);
            auto built = build_pool(cfg, model);
            write_json_file(out_path, pool_to_json(built.pool));
            std::printf("wrote %s (%zu candidates from %zu samples)\n", out_path.c_str(),
                        built.pool.size(), built.samples_used);
        } else if (*pool_inspect) {
            auto pool = pool_from_json(read_json_file(pool_path));
            std::printf("pool fingerprint %016llx, feature layer %zu, capacity %zu, %zu candidates\n",
                        (unsigned long long)pool.fingerprint(), pool.feature_layer_index(),
                        pool.capacity(), pool.size());
            for (const auto& c : pool.candidates()) {
                double norm = 0;
                for (double v : c.feature.vector) norm += v * v;
                std::printf("  id %zu  %-15s index %zu  |feature| %.4f\n", c.id,
                            provenance_label(c.provenance), c.provenance.index, std::sqrt(norm));
            }
        } else if (*pool_select) {
            auto pool = pool_from_json(read_json_file(pool_path));
            auto model = model_from_json(read_json_file(model_path));
            auto samples = samples_from_json(read_json_file(probe_path));
            auto feat = pool.query_feature(model, samples, probe_batch);
            const auto& chosen = pool.select(feat);
            std::printf("distances:\n");
            for (const auto& c : pool.candidates())
                std::printf("  id %zu  %-15s d=%.6f%s\n", c.id, provenance_label(c.provenance),
                            pool.distance(c, feat), c.id == chosen.id ? "  <- selected" : "");
        } else if (*stream_dump) {
            auto cfg = load_config(config_path);
            auto stream = generate(cfg.task, cfg.schedule);
            write_json_file(out_path, samples_to_json(stream.samples));
            std::printf("wrote %s (%zu samples)\n", out_path.c_str(), stream.meta.size());
            if (!meta_path.empty()) {
                nlohmann::json rows = nlohmann::json::array();
                for (const auto& m : stream.meta)
                    rows.push_back({{"label", m.label},
                                    {"domain_id", m.domain_id},
                                    {"span", m.span_index}});
                write_json_file(meta_path, {{"version", 1}, {"kind", "stream_meta"},
                                            {"rows", std::move(rows)}});
                std::printf("wrote %s\n", meta_path.c_str());
            }
        } else if (*run_cmd) {
            auto cfg = load_config(config_path);
            if (!policy_override.empty()) cfg.policy = policy_from_name(policy_override);
            Model model = obtain_model(cfg, model_path);
            CandidatePool pool = obtain_pool(cfg, model, pool_path);
            auto stream = generate(cfg.task, cfg.schedule);
            auto result = run(model, pool, stream.samples, cfg.policy_config());
            auto summary = evaluate(result.trace, stream.meta, cfg.schedule);

            fs::create_directories(out_dir);
            auto trace_file = (fs::path(out_dir) / "trace.csv").string();
            auto summary_file = (fs::path(out_dir) / "summary.json").string();
            write_text_file(trace_file, trace_to_text(result.trace));
            write_json_file(summary_file, summary_to_json(summary, policy_name(cfg.policy),
                                                          &result.adapt_reports));
            std::printf("wrote %s and %s\n", trace_file.c_str(), summary_file.c_str());
            print_summary(summary, policy_name(cfg.policy));
        } else if (*eval_cmd) {
            auto cfg = load_config(config_path);
            auto stream = generate(cfg.task, cfg.schedule);
            auto trace = trace_from_text(read_text_file(trace_path));
            auto summary = evaluate(trace, stream.meta, cfg.schedule);
            if (!out_path.empty()) {
                write_json_file(out_path, summary_to_json(summary, policy_name(cfg.policy)));
                std::printf("wrote %s\n", out_path.c_str());
            }
            print_summary(summary, policy_name(cfg.policy));
        } else if (*report_cmd) {
            std::printf("%-12s %9s %9s %7s %6s %11s %11s %9s %12s\n", "policy", "accuracy",
                        "detected", "missed", "false", "fwd", "bwd", "peak", "energy");
            for (const auto& path : summary_paths) {
                auto j = read_json_file(path);
                std::printf("%-12s %9.4f %9llu %7llu %6llu %11llu %11llu %9llu %12.0f\n",
                            j.value("policy", std::string("?")).c_str(),
                            j.at("overall_accuracy").get<double>(),
                            (unsigned long long)j.at("detected").get<std::uint64_t>(),
                            (unsigned long long)j.at("missed").get<std::uint64_t>(),
                            (unsigned long long)j.at("false_triggers").get<std::uint64_t>(),
                            (unsigned long long)j.at("counters").at("forward_sample_count").get<std::uint64_t>(),
                            (unsigned long long)j.at("counters").at("backward_sample_count").get<std::uint64_t>(),
                            (unsigned long long)j.at("counters").at("peak_retained_activations").get<std::uint64_t>(),
                            j.at("energy_proxy").get<double>());
            }
        } else if (*adapt_cmd) {
            auto cfg = load_config(config_path);
            auto model = model_from_json(read_json_file(model_path));
            auto pool = pool_from_json(read_json_file(pool_path));
            auto samples = samples_from_json(read_json_file(samples_path));
            if (samples.dim(0) < cfg.adapter.cache_size)
                throw std::runtime_error("adapt: samples file smaller than the configured cache");
            Tensor cached = samples.slice_rows(0, cfg.adapter.cache_size);
            ResourceCounters counters;
            auto outcome = adapt(model, pool, cached, cfg.adapter, counters);
            pool.add_progressive(outcome.adapted_snapshot, outcome.domain_feature);
            std::printf("selected candidate %zu | stats batches %zu | param steps %zu | "
                        "filtered %zu | fwd %llu bwd %llu%s\n",
                        outcome.report.selected_candidate,
                        outcome.report.stats_batches_processed,
                        outcome.report.param_steps_taken, outcome.report.samples_filtered_out,
                        (unsigned long long)outcome.report.forward_samples,
                        (unsigned long long)outcome.report.backward_samples,
                        outcome.report.param_phase_failed ? " | param phase FAILED" : "");
            if (!out_model.empty()) {
                write_json_file(out_model, model_to_json(model));
                std::printf("wrote %s\n", out_model.c_str());
            }
            if (!out_pool.empty()) {
                write_json_file(out_pool, pool_to_json(pool));
                std::printf("wrote %s\n", out_pool.c_str());
            }
        } else if (*calib) {
            auto cfg = load_config(config_path);
            Model model = obtain_model(cfg, model_path);
            auto built = build_pool(cfg, model);
            auto heldout = sample_task(cfg.task, 1000, 991);
            double clean = accuracy(model, heldout.x, heldout.y);
            std::printf("clean held-out accuracy %.4f\n\nsource accuracy by severity:\n%-12s",
                        clean, "kind");
            for (int s = 1; s <= 5; ++s) std::printf("      s%d", s);
            std::printf("\n");
            for (int k = 1; k <= 5; ++k) {
                std::printf("%-12s", corruption_name(static_cast<CorruptionKind>(k)));
                for (int s = 1; s <= 5; ++s) {
                    auto dom = sample_domain(cfg.task, {static_cast<CorruptionKind>(k), s}, 600,
                                             1000 + 10 * k + s);
                    std::printf("  %6.3f", accuracy(model, dom.x, dom.y));
                }
                std::printf("\n");
            }
            if (thresholds.empty()) thresholds = {0.02, 0.03, 0.05, 0.08, 0.12};
            std::printf("\nthreshold sweep on the configured schedule:\n");
            for (double thr : thresholds) {
                ExperimentConfig c2 = cfg;
                c2.policy = PolicyKind::OnDemand;
                c2.detector.threshold = thr;
                auto res = run_experiment(c2, model, built.pool);
                std::printf("  thr %.3f: detected %zu missed %zu false %zu accuracy %.4f "
                            "bwd %llu\n",
                            thr, res.summary.detected, res.summary.missed,
                            res.summary.false_triggers, res.summary.overall_accuracy,
                            (unsigned long long)res.summary.counters.backward_sample_count);
            }
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
