#pragma once

// JSON and CSV formats. Infinite bounds are written as the strings "inf" and
// "-inf". Readers throw InputError with the offending field or line.

#include <string>
#include <vector>

#include <json.hpp>

#include "raresim/accel.hpp"
#include "raresim/monoset.hpp"
#include "raresim/scenario.hpp"
#include "raresim/tgmm.hpp"

namespace raresim {

using Json = nlohmann::ordered_json;

/// A fitted model: parameters and support in standardized coordinates plus
/// the map z -> raw = shift + scale * z.
struct StoredModel {
  TruncatedGMM model;
  AffineStandardizer standardizer;
  std::vector<std::string> columns;  ///< optional column names
};

/// Array of numbers, infinities as "inf" / "-inf".
Json vector_to_json(const VectorXd& v);

Json model_to_json(const StoredModel& m);
StoredModel model_from_json(const Json& j);

/// {"mask": [...], "s1": [[...]], "s0": [[...]]}, points in canonical
/// coordinates (signs * x).
Json frontier_to_json(const FrontierStore& f);
FrontierStore frontier_from_json(const Json& j);

Json report_to_json(const EstimateReport& r);

Json av_config_to_json(const AVConfig& c);
/// Unknown keys are rejected; missing keys keep their defaults.
AVConfig av_config_from_json(const Json& j);

/// Scenario document in raw model coordinates. Either an AVConfig (the
/// lane-change simulator) or {"type": ...} with type one of
///   "halfspace"    {"weights": [...], "threshold": c}
///   "orthant"      {"corner": [...]}
///   "mixture-tail" {"threshold": c}
///   "union"        {"members": [ ... ]}
///   "lane-change"  {"config": { AVConfig fields }}
Scenario scenario_from_json(const Json& j);

/// Numeric CSV with a header row. Throws InputError naming the line of the
/// first malformed row, and when there are no data rows.
struct CsvTable {
  std::vector<std::string> header;
  MatrixXd rows;
  std::vector<long> lines;  ///< 1-based file line of each row
};
CsvTable read_numeric_csv(const std::string& path);

/// Events with columns v, ttc, range (header required, any column order).
std::vector<LaneChangeEvent> read_events_csv(const std::string& path);

/// "lo:hi,lo:hi,..." with "-inf"/"inf" tokens.
Rect parse_support(const std::string& text);

/// Comma-separated finite numbers; `what` names the value in errors.
VectorXd parse_number_list(const std::string& text, const std::string& what);

/// Shortest round-trip decimal form of x ("inf", "-inf", "nan" for specials).
std::string format_double(double x);

Json read_json_file(const std::string& path);
std::string read_text_file(const std::string& path);
/// Writes to a temporary file in the same directory, then renames it over
/// `path`, so readers never see a partial file.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace raresim
