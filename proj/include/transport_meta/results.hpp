#pragma once

#include "transport_meta/diagnostics.hpp"
#include "transport_meta/estimate.hpp"
#include "transport_meta/inference.hpp"
#include "transport_meta/transport.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace tmeta {

inline constexpr int kResultsSchemaVersion = 1;

struct ResultsDocument {
  std::string tool_version;
  std::string analysis;
  nlohmann::json config = nlohmann::json::object();
  std::vector<ContrastEstimate> estimates;
  // Keyed by diagnostic name: "falsification", "homogeneity", ...
  nlohmann::json diagnostics = nlohmann::json::object();
  std::vector<std::string> warnings;
};

nlohmann::json estimate_to_json(const ContrastEstimate& e);
ContrastEstimate estimate_from_json(const nlohmann::json& j);

nlohmann::json to_json(const FalsificationReport& r);
nlohmann::json to_json(const HomogeneityReport& r);
nlohmann::json to_json(const ConstraintReport& r);
nlohmann::json to_json(const PositivityReport& r);
nlohmann::json to_json(const WaldTest& t);
nlohmann::json to_json(const SweepFailure& f);

nlohmann::json document_to_json(const ResultsDocument& doc);
ResultsDocument document_from_json(const nlohmann::json& j);

// Two-space indented, keys sorted, trailing newline.
std::string serialize(const ResultsDocument& doc);
ResultsDocument parse_results(std::string_view text);
ResultsDocument load_results(const std::filesystem::path& path);

// One row per source with unadjusted / outcome-model / weighting columns.
std::string render_table(const ResultsDocument& doc);

// Throws EmptyResults when there is nothing to plot.
std::string render_forest_svg(const ResultsDocument& doc);
std::string render_forest_text(const ResultsDocument& doc, std::size_t width = 48);

// results.json, results.txt, and (with estimates) forest.svg / forest.txt.
void write_outputs(const ResultsDocument& doc, const std::filesystem::path& dir);

}  // namespace tmeta
