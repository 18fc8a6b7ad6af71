#pragma once

#include <filesystem>

#include <json.hpp>

#include "cll/config.hpp"
#include "cll/metrics.hpp"
#include "cll/train.hpp"

namespace cll {

using Json = nlohmann::ordered_json;

Json to_json(const RunConfig& config);
Json to_json(const NetworkSpec& spec);
Json to_json(const ProviderConfig& providers);
// Loss curve summary plus validation PSNRs; the full curve goes to CSV.
Json to_json(const PhaseResult& result);
Json to_json(const SimilarityReport& report);
Json to_json(const MacsReport& report);
Json to_json(const SweepResult& result);

// A run report: the echoed config plus whatever sections the command adds.
Json make_report(const std::string& command, const RunConfig& config);

void write_json(const Json& value, const std::filesystem::path& path);

}  // namespace cll
