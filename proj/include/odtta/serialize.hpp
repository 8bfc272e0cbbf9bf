#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "odtta/harness.hpp"
#include "odtta/nn.hpp"
#include "odtta/pool.hpp"

namespace odtta {

// All documents are versioned JSON with a top-level "version" and "kind".
// Doubles serialize at shortest round-trip precision, so every file
// round-trips value-exactly.

nlohmann::json model_to_json(const Model& model);
Model model_from_json(const nlohmann::json& j);

nlohmann::json snapshot_to_json(const BnSnapshot& snap);
BnSnapshot snapshot_from_json(const nlohmann::json& j);

nlohmann::json pool_to_json(const CandidatePool& pool);
CandidatePool pool_from_json(const nlohmann::json& j);

nlohmann::json samples_to_json(const Tensor& samples);
Tensor samples_from_json(const nlohmann::json& j);

nlohmann::json summary_to_json(const Summary& summary, const std::string& policy,
                               const std::vector<AdaptReport>* adapt_reports = nullptr);

// Line-delimited trace with a header row; doubles at full round-trip
// precision so replayed runs compare byte-for-byte.
std::string trace_to_text(const std::vector<TraceRecord>& trace);
std::vector<TraceRecord> trace_from_text(const std::string& text);

std::string format_double(double v); // shortest round-trip decimal

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

void write_json_file(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::string& path);

} // namespace odtta
