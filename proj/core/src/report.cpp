#include "scenewatch/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "scenewatch/errors.hpp"
#include "scenewatch/util.hpp"

namespace scenewatch {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr const char* kToolVersionLocal = "0.1.0";

ordered_json stability_to_json(std::span<const StabilityRow> rows) {
  auto out = ordered_json::array();
  for (const auto& row : rows) {
    out.push_back({{"aggregator", row.aggregator},
                   {"c1", row.c1},
                   {"c2", row.c2},
                   {"kendall_tau", row.kendall_tau},
                   {"jaccard", row.jaccard}});
  }
  return out;
}

ordered_json alignment_to_json(std::span<const AlignmentRow> rows) {
  auto out = ordered_json::array();
  for (const auto& row : rows) {
    out.push_back({{"aggregator", row.aggregator},
                   {"proxy", row.proxy},
                   {"spearman_rho", row.spearman_rho}});
  }
  return out;
}

}  // namespace

std::string eval_report_to_json(const EvalReport& report) {
  ordered_json j;
  j["prediction"] = {{"ade", report.ade}, {"fde", report.fde}};
  j["stability"] = stability_to_json(report.stability);
  j["alignment"] = alignment_to_json(report.alignment);
  j["selected"] = {{"aggregator", report.selected.aggregator},
                   {"contamination", report.selected.contamination},
                   {"fallback", report.selected.fallback}};
  j["overlap"] = {{"ours_total", report.overlap.ours_total},
                  {"ttc_total", report.overlap.ttc_total},
                  {"if_total", report.overlap.if_total},
                  {"unique_ours", report.overlap.unique_ours},
                  {"ours_ttc_only", report.overlap.ours_ttc_only},
                  {"ours_if_only", report.overlap.ours_if_only},
                  {"ours_both", report.overlap.ours_both}};
  auto ccdf = ordered_json::array();
  for (const auto& point : report.ccdf) {
    ccdf.push_back(ordered_json::array({point.score, point.prob}));
  }
  j["ccdf"] = std::move(ccdf);
  auto contrast = ordered_json::object();
  for (const auto& [metric, row] : report.contrast) {
    contrast[metric] = {{"flagged_mean", row.flagged_mean},
                        {"flagged_std", row.flagged_std},
                        {"unflagged_mean", row.unflagged_mean},
                        {"unflagged_std", row.unflagged_std}};
  }
  j["contrast"] = std::move(contrast);
  j["ttc_cap"] = report.ttc_cap;
  j["harsh_threshold"] = report.harsh_threshold;
  if (report.enrichment.available) {
    j["enrichment"] = {
        {"unique_ours_subtle_fraction", report.enrichment.unique_ours_subtle_fraction},
        {"ttc_flagged_subtle_fraction", report.enrichment.ttc_flagged_subtle_fraction},
        {"unique_ours_by_kind", report.enrichment.unique_ours_by_kind},
        {"ttc_flagged_by_kind", report.enrichment.ttc_flagged_by_kind},
        {"ours_by_kind", report.enrichment.ours_by_kind}};
  }
  return j.dump(2) + "\n";
}

EvalReport eval_report_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  EvalReport report;
  report.ade = j.at("prediction").at("ade").get<double>();
  report.fde = j.at("prediction").at("fde").get<double>();
  for (const auto& row : j.at("stability")) {
    report.stability.push_back({row.at("aggregator").get<std::string>(), row.at("c1").get<double>(),
                                row.at("c2").get<double>(), row.at("kendall_tau").get<double>(),
                                row.at("jaccard").get<double>()});
  }
  for (const auto& row : j.at("alignment")) {
    report.alignment.push_back({row.at("aggregator").get<std::string>(),
                                row.at("proxy").get<std::string>(),
                                row.at("spearman_rho").get<double>()});
  }
  report.selected.aggregator = j.at("selected").at("aggregator").get<std::string>();
  report.selected.contamination = j.at("selected").at("contamination").get<double>();
  report.selected.fallback = j.at("selected").at("fallback").get<bool>();
  const auto& ov = j.at("overlap");
  report.overlap = {ov.at("ours_total").get<std::int64_t>(),
                    ov.at("ttc_total").get<std::int64_t>(),
                    ov.at("if_total").get<std::int64_t>(),
                    ov.at("unique_ours").get<std::int64_t>(),
                    ov.at("ours_ttc_only").get<std::int64_t>(),
                    ov.at("ours_if_only").get<std::int64_t>(),
                    ov.at("ours_both").get<std::int64_t>()};
  for (const auto& point : j.at("ccdf")) {
    report.ccdf.push_back({point[0].get<double>(), point[1].get<double>()});
  }
  for (const auto& [metric, row] : j.at("contrast").items()) {
    report.contrast[metric] = {
        row.at("flagged_mean").get<double>(), row.at("flagged_std").get<double>(),
        row.at("unflagged_mean").get<double>(), row.at("unflagged_std").get<double>()};
  }
  report.ttc_cap = j.value("ttc_cap", 100.0);
  report.harsh_threshold = j.value("harsh_threshold", 3.0);
  if (j.contains("enrichment")) {
    const auto& e = j.at("enrichment");
    report.enrichment.available = true;
    report.enrichment.unique_ours_subtle_fraction =
        e.at("unique_ours_subtle_fraction").get<double>();
    report.enrichment.ttc_flagged_subtle_fraction =
        e.at("ttc_flagged_subtle_fraction").get<double>();
    report.enrichment.unique_ours_by_kind =
        e.at("unique_ours_by_kind").get<std::map<std::string, std::int64_t>>();
    report.enrichment.ttc_flagged_by_kind =
        e.at("ttc_flagged_by_kind").get<std::map<std::string, std::int64_t>>();
    report.enrichment.ours_by_kind =
        e.at("ours_by_kind").get<std::map<std::string, std::int64_t>>();
  }
  return report;
}

const std::string& report_schema_text() {
  static const std::string schema = R"SCHEMA({
  "$schema": "http://json-schema.org/draft-07/schema#",
  "title": "scenewatch run report",
  "type": "object",
  "required": ["tool_version", "prediction", "stability", "alignment", "selected",
               "overlap", "ccdf", "clusters", "contrast"],
  "properties": {
    "tool_version": {"type": "string"},
    "prediction": {
      "type": "object",
      "required": ["ade", "fde"],
      "properties": {"ade": {"type": "number"}, "fde": {"type": "number"}}
    },
    "stability": {
      "type": "array",
      "items": {
        "type": "object",
        "required": ["aggregator", "c1", "c2", "kendall_tau", "jaccard"],
        "properties": {
          "aggregator": {"type": "string", "enum": ["max", "mean", "q95", "topk"]},
          "c1": {"type": "number"},
          "c2": {"type": "number"},
          "kendall_tau": {"type": "number"},
          "jaccard": {"type": "number"}
        }
      }
    },
    "alignment": {
      "type": "array",
      "items": {
        "type": "object",
        "required": ["aggregator", "proxy", "spearman_rho"],
        "properties": {
          "aggregator": {"type": "string"},
          "proxy": {"type": "string"},
          "spearman_rho": {"type": "number"}
        }
      }
    },
    "selected": {
      "type": "object",
      "required": ["aggregator", "contamination", "fallback"],
      "properties": {
        "aggregator": {"type": "string"},
        "contamination": {"type": "number"},
        "fallback": {"type": "boolean"}
      }
    },
    "overlap": {
      "type": "object",
      "required": ["ours_total", "ttc_total", "if_total", "unique_ours",
                   "ours_ttc_only", "ours_if_only", "ours_both"],
      "properties": {
        "ours_total": {"type": "integer"},
        "ttc_total": {"type": "integer"},
        "if_total": {"type": "integer"},
        "unique_ours": {"type": "integer"},
        "ours_ttc_only": {"type": "integer"},
        "ours_if_only": {"type": "integer"},
        "ours_both": {"type": "integer"}
      }
    },
    "ccdf": {
      "type": "array",
      "items": {"type": "array", "items": {"type": "number"}}
    },
    "clusters": {
      "type": "object",
      "required": ["k", "assignments", "centers_raw", "centers_minmax",
                   "silhouette_by_k", "inertia"],
      "properties": {
        "k": {"type": "integer"},
        "inertia": {"type": "number"},
        "assignments": {"type": "object"},
        "centers_raw": {"type": "array"},
        "centers_minmax": {"type": "array"},
        "silhouette_by_k": {"type": "object"}
      }
    },
    "contrast": {"type": "object"},
    "enrichment": {"type": "object"}
  }
}
)SCHEMA";
  return schema;
}

namespace {

bool type_matches(const nlohmann::json& value, const std::string& type) {
  if (type == "object") return value.is_object();
  if (type == "array") return value.is_array();
  if (type == "string") return value.is_string();
  if (type == "boolean") return value.is_boolean();
  if (type == "integer") return value.is_number_integer() || value.is_number_unsigned();
  if (type == "number") return value.is_number();
  return false;
}

void validate_node(const nlohmann::json& value, const nlohmann::json& schema,
                   const std::string& path, std::vector<std::string>& errors) {
  if (schema.contains("type")) {
    const auto type = schema.at("type").get<std::string>();
    if (!type_matches(value, type)) {
      errors.push_back(path + ": expected " + type);
      return;
    }
  }
  if (schema.contains("enum")) {
    bool found = false;
    for (const auto& allowed : schema.at("enum")) found |= allowed == value;
    if (!found) errors.push_back(path + ": value not in enum");
  }
  if (schema.contains("required")) {
    for (const auto& key : schema.at("required")) {
      if (!value.contains(key.get<std::string>())) {
        errors.push_back(path + ": missing required key '" + key.get<std::string>() + "'");
      }
    }
  }
  if (schema.contains("properties") && value.is_object()) {
    for (const auto& [key, sub] : schema.at("properties").items()) {
      if (value.contains(key)) validate_node(value.at(key), sub, path + "/" + key, errors);
    }
  }
  if (schema.contains("items") && value.is_array()) {
    std::size_t idx = 0;
    for (const auto& item : value) {
      validate_node(item, schema.at("items"), path + "/" + std::to_string(idx++), errors);
    }
  }
}

}  // namespace

std::vector<std::string> validate_json_against_schema(const std::string& document_text,
                                                      const std::string& schema_text) {
  std::vector<std::string> errors;
  nlohmann::json doc, schema;
  try {
    doc = nlohmann::json::parse(document_text);
  } catch (const std::exception& e) {
    errors.push_back(std::string("document is not valid JSON: ") + e.what());
    return errors;
  }
  schema = nlohmann::json::parse(schema_text);
  validate_node(doc, schema, "", errors);
  return errors;
}

namespace {

std::string fmt3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

std::string markdown_summary(const EvalReport& eval, const ClusterReport& clusters) {
  std::ostringstream md;
  md << "# Run summary\n\n";
  md << "Prediction quality: ADE " << fmt3(eval.ade) << " m, FDE " << fmt3(eval.fde) << " m\n\n";
  md << "Selected configuration: aggregator `" << eval.selected.aggregator
     << "`, contamination " << fmt3(eval.selected.contamination)
     << (eval.selected.fallback ? " (fallback: no aggregator passed the stability gate)" : "")
     << "\n\n";

  // Stability: mean tau / Jaccard per aggregator over contamination pairs.
  md << "## Ranking stability across contamination levels\n\n";
  md << "| Aggregator | Kendall tau (mean) | Jaccard@K (mean) |\n";
  md << "|---|---|---|\n";
  std::vector<std::string> agg_order;
  for (const auto& row : eval.stability) {
    if (std::find(agg_order.begin(), agg_order.end(), row.aggregator) == agg_order.end()) {
      agg_order.push_back(row.aggregator);
    }
  }
  for (const auto& agg : agg_order) {
    double tau = 0.0, jac = 0.0;
    int count = 0;
    for (const auto& row : eval.stability) {
      if (row.aggregator != agg) continue;
      tau += row.kendall_tau;
      jac += row.jaccard;
      ++count;
    }
    md << "| " << agg << " | " << fmt3(tau / count) << " | " << fmt3(jac / count) << " |\n";
  }

  md << "\n## Spearman correlation with safety proxies (averaged over contamination levels)\n\n";
  md << "| Safety proxy |";
  for (const auto& agg : agg_order) md << ' ' << agg << " |";
  md << "\n|---|";
  for (std::size_t i = 0; i < agg_order.size(); ++i) md << "---|";
  md << '\n';
  static const char* const kSsmOrder[] = {"harsh_closing_ratio", "lateral_excursion",
                                          "min_long_gap", "min_ttc", "rel_speed_std"};
  for (const char* proxy : kSsmOrder) {
    md << "| " << proxy << " |";
    for (const auto& agg : agg_order) {
      double rho = 0.0;
      for (const auto& row : eval.alignment) {
        if (row.aggregator == agg && row.proxy == proxy) rho = row.spearman_rho;
      }
      md << ' ' << fmt3(rho) << " |";
    }
    md << '\n';
  }

  md << "\n## Anomalous vs normal scenes\n\n";
  md << "| Metric | Anomalous | Normal |\n|---|---|---|\n";
  static const std::pair<const char*, const char*> kContrastOrder[] = {
      {"min_ttc", "Min TTC (s, capped)"},
      {"min_dist", "Min distance (m)"},
      {"max_dv", "Max delta-v (m/s)"},
      {"max_acc", "Max acceleration (m/s^2)"},
  };
  for (const auto& [key, label] : kContrastOrder) {
    const auto it = eval.contrast.find(key);
    if (it == eval.contrast.end()) continue;
    md << "| " << label << " | " << fmt3(it->second.flagged_mean) << " +- "
       << fmt3(it->second.flagged_std) << " | " << fmt3(it->second.unflagged_mean) << " +- "
       << fmt3(it->second.unflagged_std) << " |\n";
  }

  md << "\n## Cluster centers (min-max normalized)\n\n";
  md << "| Cluster | Max dx | Mean dx | Std dx | Max v | Mean v | Std v |\n";
  md << "|---|---|---|---|---|---|---|\n";
  for (std::size_t c = 0; c < clusters.centers_minmax.rows; ++c) {
    md << "| " << c << " |";
    for (std::size_t f = 0; f < clusters.centers_minmax.cols; ++f) {
      md << ' ' << fmt3(clusters.centers_minmax.at(c, f)) << " |";
    }
    md << '\n';
  }
  md << "\nSelected k = " << clusters.k;
  if (clusters.low_structure_warning) {
    md << " (warning: weak cluster structure, best silhouette < 0.25)";
  }
  md << "\n\n## Baseline overlap\n\n";
  const auto& ov = eval.overlap;
  md << "Ours " << ov.ours_total << ", TTC-threshold " << ov.ttc_total << ", feature-IF "
     << ov.if_total << "; of ours: " << ov.unique_ours << " unique, " << ov.ours_ttc_only
     << " shared with TTC only, " << ov.ours_if_only << " with IF only, " << ov.ours_both
     << " with both.\n";
  if (eval.enrichment.available) {
    md << "\nLabel mix among unique detections: " << fmt3(eval.enrichment.unique_ours_subtle_fraction)
       << " lateral-drift/follow-instability vs " << fmt3(eval.enrichment.ttc_flagged_subtle_fraction)
       << " among TTC-threshold detections.\n";
  }
  return md.str();
}

}  // namespace

void emit_report(const std::filesystem::path& run_dir) {
  const auto eval_path = run_dir / "eval.json";
  const auto clusters_path = run_dir / "clusters.json";
  if (!std::filesystem::exists(eval_path) || !std::filesystem::exists(clusters_path)) {
    throw IncompleteRunError("run directory lacks eval.json/clusters.json: " + run_dir.string());
  }
  const auto eval = eval_report_from_json(read_text_file(eval_path));
  const auto clusters = load_cluster_report(clusters_path);

  ordered_json report = ordered_json::parse(eval_report_to_json(eval));
  ordered_json out;
  out["tool_version"] = kToolVersionLocal;
  for (const auto& [key, value] : report.items()) out[key] = value;
  out["clusters"] = ordered_json::parse(cluster_report_to_json(clusters));
  const std::string report_text = out.dump(2) + "\n";

  const auto violations = validate_json_against_schema(report_text, report_schema_text());
  if (!violations.empty()) {
    std::string msg = "report.json failed schema validation:";
    for (const auto& v : violations) msg += "\n  " + v;
    throw Error(msg);
  }

  write_text_file(run_dir / "report.json", report_text);
  write_text_file(run_dir / "report.schema.json", report_schema_text());
  write_text_file(run_dir / "summary.md", markdown_summary(eval, clusters));
}

}  // namespace scenewatch
