#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "scenewatch/cluster.hpp"
#include "scenewatch/eval.hpp"

namespace scenewatch {

// Flagged-vs-unflagged mean and population std of one physical metric.
struct ContrastRow {
  double flagged_mean = 0.0;
  double flagged_std = 0.0;
  double unflagged_mean = 0.0;
  double unflagged_std = 0.0;
};

// Label cross-tabulation against the baselines (only when ground-truth
// labels exist, i.e. synthetic runs).
struct EnrichmentReport {
  bool available = false;
  // fraction of scenes labeled lateral_drift or follow_instability
  double unique_ours_subtle_fraction = 0.0;
  double ttc_flagged_subtle_fraction = 0.0;
  std::map<std::string, std::int64_t> unique_ours_by_kind;
  std::map<std::string, std::int64_t> ttc_flagged_by_kind;
  std::map<std::string, std::int64_t> ours_by_kind;
};

// Everything the evaluate stage knows, persisted as eval.json.
struct EvalReport {
  std::vector<StabilityRow> stability;
  std::vector<AlignmentRow> alignment;
  SelectedConfig selected;
  OverlapReport overlap;
  std::vector<CcdfPoint> ccdf;  // of the selected aggregator's residual scores
  std::map<std::string, ContrastRow> contrast;  // min_ttc, min_dist, max_dv, max_acc
  EnrichmentReport enrichment;
  double ade = 0.0;
  double fde = 0.0;
  double ttc_cap = 100.0;  // cap applied to min_ttc in contrast and baseline
  double harsh_threshold = 3.0;
};

std::string eval_report_to_json(const EvalReport& report);
EvalReport eval_report_from_json(const std::string& text);

// The JSON Schema report.json is validated against; also written into every
// run directory as report.schema.json.
const std::string& report_schema_text();

// Structural validation of a JSON document against the subset of JSON Schema
// the shipped schema uses (type / required / properties / items / enum).
// Returns human-readable violations; empty means valid.
std::vector<std::string> validate_json_against_schema(const std::string& document_text,
                                                      const std::string& schema_text);

// Consolidates a completed run directory into report.json + summary.md +
// report.schema.json. Throws IncompleteRunError when stage outputs are
// missing, and Error if the produced report fails schema validation.
void emit_report(const std::filesystem::path& run_dir);

}  // namespace scenewatch
