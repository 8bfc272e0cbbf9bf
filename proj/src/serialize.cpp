#include "odtta/serialize.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace odtta {

using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

void check_header(const json& j, const char* kind) {
    if (!j.is_object() || j.value("version", 0) != kFormatVersion)
        throw std::runtime_error(std::string("document: missing/unsupported version for ") + kind);
    if (j.value("kind", std::string()) != kind)
        throw std::runtime_error(std::string("document: expected kind '") + kind + "'");
}

std::string fingerprint_hex(std::uint64_t fp) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fp));
    return buf;
}

std::uint64_t fingerprint_parse(const std::string& s) {
    return std::stoull(s, nullptr, 16);
}

json bn_layer_to_json(const BnLayerState& bn) {
    return {{"dim", bn.dim()},
            {"eps", bn.eps},
            {"gamma", bn.gamma},
            {"beta", bn.beta},
            {"running_mean", bn.running_mean},
            {"running_var", bn.running_var}};
}

BnLayerState bn_layer_from_json(const json& j) {
    BnLayerState bn;
    bn.eps = j.at("eps").get<double>();
    bn.gamma = j.at("gamma").get<std::vector<double>>();
    bn.beta = j.at("beta").get<std::vector<double>>();
    bn.running_mean = j.at("running_mean").get<std::vector<double>>();
    bn.running_var = j.at("running_var").get<std::vector<double>>();
    if (bn.dim() != j.at("dim").get<std::size_t>())
        throw std::runtime_error("bn layer: dim field mismatch");
    bn.validate();
    return bn;
}

} // namespace

std::string format_double(double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

json model_to_json(const Model& model) {
    model.spec.validate();
    json layers = json::array();
    std::size_t di = 0, bi = 0;
    for (const auto& l : model.spec.layers) {
        switch (l.kind) {
            case LayerKind::Dense:
                layers.push_back({{"type", "dense"},
                                  {"in", l.in},
                                  {"out", l.out},
                                  {"weight", model.dense[di].weight},
                                  {"bias", model.dense[di].bias}});
                ++di;
                break;
            case LayerKind::Relu:
                layers.push_back({{"type", "relu"}, {"dim", l.dim}});
                break;
            case LayerKind::BatchNorm: {
                json b = bn_layer_to_json(model.bn[bi]);
                b["type"] = "batchnorm";
                layers.push_back(std::move(b));
                ++bi;
                break;
            }
        }
    }
    return {{"version", kFormatVersion},
            {"kind", "model"},
            {"class_count", model.spec.class_count},
            {"bn_eps", model.spec.bn_eps},
            {"fingerprint", fingerprint_hex(model.fingerprint())},
            {"layers", std::move(layers)}};
}

Model model_from_json(const json& j) {
    check_header(j, "model");
    Model m;
    m.spec.class_count = j.at("class_count").get<std::size_t>();
    m.spec.bn_eps = j.at("bn_eps").get<double>();
    for (const auto& lj : j.at("layers")) {
        std::string type = lj.at("type").get<std::string>();
        if (type == "dense") {
            LayerSpec l = LayerSpec::dense(lj.at("in").get<std::size_t>(),
                                           lj.at("out").get<std::size_t>());
            DenseLayer d;
            d.weight = lj.at("weight").get<std::vector<double>>();
            d.bias = lj.at("bias").get<std::vector<double>>();
            if (d.weight.size() != l.in * l.out || d.bias.size() != l.out)
                throw std::runtime_error("model: dense parameter size mismatch");
            m.spec.layers.push_back(l);
            m.dense.push_back(std::move(d));
        } else if (type == "relu") {
            m.spec.layers.push_back(LayerSpec::relu(lj.at("dim").get<std::size_t>()));
        } else if (type == "batchnorm") {
            auto bn = bn_layer_from_json(lj);
            m.spec.layers.push_back(LayerSpec::batchnorm(bn.dim()));
            m.bn.push_back(std::move(bn));
        } else {
            throw std::runtime_error("model: unknown layer type " + type);
        }
    }
    m.spec.validate();
    if (j.contains("fingerprint") &&
        fingerprint_parse(j.at("fingerprint").get<std::string>()) != m.fingerprint())
        throw std::runtime_error("model: fingerprint mismatch");
    return m;
}

json snapshot_to_json(const BnSnapshot& snap) {
    json layers = json::array();
    for (const auto& bn : snap.layers) layers.push_back(bn_layer_to_json(bn));
    return {{"version", kFormatVersion},
            {"kind", "bn_snapshot"},
            {"fingerprint", fingerprint_hex(snap.fingerprint)},
            {"layers", std::move(layers)}};
}

BnSnapshot snapshot_from_json(const json& j) {
    check_header(j, "bn_snapshot");
    BnSnapshot snap;
    snap.fingerprint = fingerprint_parse(j.at("fingerprint").get<std::string>());
    for (const auto& lj : j.at("layers")) snap.layers.push_back(bn_layer_from_json(lj));
    return snap;
}

namespace {

const char* provenance_name(Provenance::Kind k) {
    switch (k) {
        case Provenance::Kind::InitialCluster: return "initial_cluster";
        case Provenance::Kind::Progressive: return "progressive";
        case Provenance::Kind::SourceModel: return "source_model";
    }
    return "?";
}

Provenance::Kind provenance_from_name(const std::string& s) {
    if (s == "initial_cluster") return Provenance::Kind::InitialCluster;
    if (s == "progressive") return Provenance::Kind::Progressive;
    if (s == "source_model") return Provenance::Kind::SourceModel;
    throw std::runtime_error("pool: unknown provenance " + s);
}

} // namespace

json pool_to_json(const CandidatePool& pool) {
    json cands = json::array();
    for (const auto& c : pool.candidates()) {
        json snap = snapshot_to_json(c.snap);
        cands.push_back({{"id", c.id},
                         {"provenance",
                          {{"kind", provenance_name(c.provenance.kind)},
                           {"index", c.provenance.index}}},
                         {"feature", c.feature.vector},
                         {"feature_source",
                          c.feature.source == FeatureSource::CandidateStored ? "stored" : "estimated"},
                         {"snapshot", std::move(snap)}});
    }
    return {{"version", kFormatVersion},
            {"kind", "candidate_pool"},
            {"fingerprint", fingerprint_hex(pool.fingerprint())},
            {"reference", snapshot_to_json(pool.reference())},
            {"feature_layer_index", pool.feature_layer_index()},
            {"capacity", pool.capacity()},
            {"next_id", pool.next_id()},
            {"candidates", std::move(cands)}};
}

CandidatePool pool_from_json(const json& j) {
    check_header(j, "candidate_pool");
    CandidatePool pool(snapshot_from_json(j.at("reference")),
                       j.at("feature_layer_index").get<std::size_t>(),
                       j.at("capacity").get<std::size_t>());
    if (fingerprint_parse(j.at("fingerprint").get<std::string>()) != pool.fingerprint())
        throw std::runtime_error("pool: fingerprint/reference mismatch");
    for (const auto& cj : j.at("candidates")) {
        Candidate c;
        c.id = cj.at("id").get<std::size_t>();
        c.snap = snapshot_from_json(cj.at("snapshot"));
        c.feature.vector = cj.at("feature").get<std::vector<double>>();
        c.feature.source = cj.at("feature_source").get<std::string>() == "stored"
                               ? FeatureSource::CandidateStored
                               : FeatureSource::StreamEstimated;
        c.provenance.kind = provenance_from_name(cj.at("provenance").at("kind").get<std::string>());
        c.provenance.index = cj.at("provenance").at("index").get<std::size_t>();
        pool.restore_candidate(std::move(c));
    }
    pool.set_next_id(std::max(pool.next_id(), j.at("next_id").get<std::size_t>()));
    return pool;
}

json samples_to_json(const Tensor& samples) {
    if (samples.rank() != 2) throw std::invalid_argument("samples_to_json: rank 2 required");
    json rows = json::array();
    for (std::size_t r = 0; r < samples.dim(0); ++r) {
        auto row = samples.row(r);
        rows.push_back(std::vector<double>(row.begin(), row.end()));
    }
    return {{"version", kFormatVersion},
            {"kind", "samples"},
            {"dim", samples.dim(1)},
            {"count", samples.dim(0)},
            {"data", std::move(rows)}};
}

Tensor samples_from_json(const json& j) {
    check_header(j, "samples");
    std::size_t dim = j.at("dim").get<std::size_t>();
    std::vector<double> values;
    std::size_t count = 0;
    for (const auto& row : j.at("data")) {
        auto v = row.get<std::vector<double>>();
        if (v.size() != dim) throw std::runtime_error("samples: ragged row");
        values.insert(values.end(), v.begin(), v.end());
        ++count;
    }
    return Tensor({count, dim}, std::move(values));
}

json summary_to_json(const Summary& s, const std::string& policy,
                     const std::vector<AdaptReport>* adapt_reports) {
    json domains = json::array();
    for (const auto& d : s.per_domain)
        domains.push_back({{"span", d.span_index},
                           {"domain_id", d.domain_id},
                           {"start", d.start},
                           {"length", d.length},
                           {"accuracy", d.accuracy}});
    json shifts = json::array();
    for (const auto& sh : s.shifts)
        shifts.push_back({{"span", sh.span_index},
                          {"boundary", sh.boundary},
                          {"detected", sh.detected},
                          {"latency", sh.latency},
                          {"measured_drop", sh.measured_drop},
                          {"extra_triggers", sh.extra_triggers}});
    json out = {{"version", kFormatVersion},
                {"kind", "summary"},
                {"policy", policy},
                {"overall_accuracy", s.overall_accuracy},
                {"per_domain", std::move(domains)},
                {"shifts", std::move(shifts)},
                {"detected", s.detected},
                {"missed", s.missed},
                {"false_triggers", s.false_triggers},
                {"counters",
                 {{"forward_sample_count", s.counters.forward_sample_count},
                  {"backward_sample_count", s.counters.backward_sample_count},
                  {"peak_retained_activations", s.counters.peak_retained_activations},
                  {"adaptations_triggered", s.counters.adaptations_triggered},
                  {"samples_cached", s.counters.samples_cached}}},
                {"energy_proxy", s.energy_proxy}};
    if (adapt_reports) {
        json rows = json::array();
        for (const auto& r : *adapt_reports)
            rows.push_back({{"selected_candidate", r.selected_candidate},
                            {"stats_batches", r.stats_batches_processed},
                            {"param_steps", r.param_steps_taken},
                            {"samples_filtered_out", r.samples_filtered_out},
                            {"param_phase_failed", r.param_phase_failed},
                            {"forward_samples", r.forward_samples},
                            {"backward_samples", r.backward_samples},
                            {"peak_retained", r.peak_retained},
                            {"loss_trajectory", r.loss_trajectory}});
        out["adaptations"] = std::move(rows);
    }
    return out;
}

std::string trace_to_text(const std::vector<TraceRecord>& trace) {
    std::string out =
        "index,pred,entropy,ema,phase,trigger,candidate,fwd,bwd,peak_retained,adaptations,cached\n";
    for (const auto& r : trace) {
        out += std::to_string(r.index);
        out += ',';
        out += std::to_string(r.predicted);
        out += ',';
        out += format_double(r.entropy);
        out += ',';
        out += format_double(r.ema_value);
        out += ',';
        out += r.phase;
        out += ',';
        out += r.trigger ? '1' : '0';
        out += ',';
        out += std::to_string(r.active_candidate);
        out += ',';
        out += std::to_string(r.counters.forward_sample_count);
        out += ',';
        out += std::to_string(r.counters.backward_sample_count);
        out += ',';
        out += std::to_string(r.counters.peak_retained_activations);
        out += ',';
        out += std::to_string(r.counters.adaptations_triggered);
        out += ',';
        out += std::to_string(r.counters.samples_cached);
        out += '\n';
    }
    return out;
}

std::vector<TraceRecord> trace_from_text(const std::string& text) {
    std::vector<TraceRecord> out;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("trace: empty file");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string field;
        TraceRecord r;
        auto next = [&]() {
            if (!std::getline(ls, field, ',')) throw std::runtime_error("trace: short row");
            return field;
        };
        r.index = std::stoull(next());
        r.predicted = std::stoi(next());
        r.entropy = std::stod(next());
        r.ema_value = std::stod(next());
        r.phase = next().at(0);
        r.trigger = next() == "1";
        r.active_candidate = std::stoll(next());
        r.counters.forward_sample_count = std::stoull(next());
        r.counters.backward_sample_count = std::stoull(next());
        r.counters.peak_retained_activations = std::stoull(next());
        r.counters.adaptations_triggered = std::stoull(next());
        r.counters.samples_cached = std::stoull(next());
        out.push_back(r);
    }
    return out;
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f << content;
    if (!f) throw std::runtime_error("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_json_file(const std::string& path, const json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

json read_json_file(const std::string& path) { return json::parse(read_text_file(path)); }

} // namespace odtta
