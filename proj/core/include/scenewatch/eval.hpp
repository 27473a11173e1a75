#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "scenewatch/iforest.hpp"
#include "scenewatch/proxies.hpp"

namespace scenewatch {

struct StabilityRow {
  std::string aggregator;
  double c1 = 0.0;
  double c2 = 0.0;
  double kendall_tau = 0.0;
  double jaccard = 0.0;
};

struct AlignmentRow {
  std::string aggregator;
  std::string proxy;
  double spearman_rho = 0.0;  // averaged over contamination levels
};

struct OverlapReport {
  std::int64_t ours_total = 0;
  std::int64_t ttc_total = 0;
  std::int64_t if_total = 0;
  std::int64_t unique_ours = 0;
  std::int64_t ours_ttc_only = 0;
  std::int64_t ours_if_only = 0;
  std::int64_t ours_both = 0;
};

struct SelectedConfig {
  std::string aggregator = "max";
  double contamination = 0.15;
  bool fallback = false;  // true when no aggregator passed the tau gate
};

struct CcdfPoint {
  double score = 0.0;
  double prob = 0.0;  // empirical P(S >= score)
};

// Residual scores for one aggregator over a fixed scene set.
struct AggregatorScores {
  std::string aggregator;
  std::vector<std::string> scene_ids;
  std::vector<double> scores;
};

struct EvalOptions {
  std::vector<double> contaminations = {0.10, 0.15, 0.20};
  ForestConfig forest;          // per-level contamination overrides this one
  bool refit_per_level = true;  // distinct derived seed per level
  double tau_min = 0.95;
  double default_contamination = 0.15;
  int threads = 1;
};

struct BaselineOptions {
  double ttc_threshold = 1.5;   // s
  double contamination = 0.15;
  double ttc_cap = 100.0;       // s, applied before the feature-baseline forest
  std::uint64_t seed = 0;
  int threads = 1;
};

struct BaselineResult {
  std::set<std::string> ttc_flagged;
  std::set<std::string> iforest_flagged;
  OverlapReport overlap;
};

// Kendall tau-b with tie correction; O(n^2) over pairs. Returns 0 when either
// ranking is entirely tied (the coefficient is undefined there).
// Throws LengthMismatchError.
double kendall_tau(std::span<const double> rank_a, std::span<const double> rank_b);

// |A intersect B| / |A union B|; 1.0 when both sets are empty.
double jaccard(const std::set<std::string>& a, const std::set<std::string>& b);

// Iso scores for one aggregator at one contamination level, with the seed
// discipline the sweeps use: a per-(aggregator, level) derived seed when
// refitting, a shared per-aggregator seed otherwise.
std::vector<double> iso_scores_at_level(const AggregatorScores& scores, std::size_t level_index,
                                        const EvalOptions& options);

// For each aggregator and each unordered contamination pair: Kendall tau on
// the full iso-score rankings plus top-K overlap. K is the flag count of the
// smaller contamination, ranked per level with the flag_top tie rule.
std::vector<StabilityRow> stability_sweep(std::span<const AggregatorScores> scores,
                                          const EvalOptions& options);

// Spearman rho between per-level iso scores and each proxy, averaged over
// levels. Throws SceneSetMismatchError when scene ids disagree.
std::vector<AlignmentRow> alignment_sweep(std::span<const AggregatorScores> scores,
                                          std::span<const ProxyRow> proxies,
                                          const EvalOptions& options);

// Deterministic rule: among aggregators with mean tau >= tau_min, the one
// with the largest mean |rho| over proxies wins (lexicographic tie-break);
// contamination is the configured default. Falls back to max when none
// qualify.
SelectedConfig select_config(std::span<const StabilityRow> stability,
                             std::span<const AlignmentRow> alignment,
                             const EvalOptions& options);

// TTC-threshold baseline plus an isolation forest on the four physical
// features (min_ttc capped, min_dist, max_dv, max_acc), and the overlap
// partition against our flagged set.
BaselineResult baselines(std::span<const ProxyRow> proxies,
                         const std::set<std::string>& ours_flagged,
                         const BaselineOptions& options);

// Empirical CCDF points (score ascending, P(S >= score) starting at 1).
std::vector<CcdfPoint> ccdf_points(std::span<const double> scores);

}  // namespace scenewatch
