#include "scenewatch/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "scenewatch/errors.hpp"
#include "scenewatch/rng.hpp"

namespace scenewatch {

double kendall_tau(std::span<const double> rank_a, std::span<const double> rank_b) {
  if (rank_a.size() != rank_b.size()) throw LengthMismatchError("kendall_tau: length mismatch");
  const auto n = rank_a.size();
  if (n < 2) throw LengthMismatchError("kendall_tau: need at least 2 items");

  std::int64_t concordant = 0, discordant = 0, ties_a = 0, ties_b = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double da = rank_a[i] - rank_a[j];
      const double db = rank_b[i] - rank_b[j];
      if (da == 0.0) ++ties_a;
      if (db == 0.0) ++ties_b;
      const double prod = da * db;
      if (prod > 0.0) ++concordant;
      else if (prod < 0.0) ++discordant;
    }
  }
  const auto n0 = static_cast<std::int64_t>(n) * (static_cast<std::int64_t>(n) - 1) / 2;
  const double denom = std::sqrt(static_cast<double>(n0 - ties_a)) *
                       std::sqrt(static_cast<double>(n0 - ties_b));
  if (denom == 0.0) return 0.0;  // a ranking with all items tied carries no order
  return static_cast<double>(concordant - discordant) / denom;
}

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t inter = 0;
  for (const auto& x : a) inter += b.contains(x);
  const std::size_t uni = a.size() + b.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

void check_same_scene_order(std::span<const AggregatorScores> scores) {
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i].scene_ids != scores[0].scene_ids) {
      throw SceneSetMismatchError("aggregator score tables cover different scene sets");
    }
  }
}

// Top-k scene ids under the flag_top ordering (score desc, id asc).
std::set<std::string> top_k_ids(std::span<const std::string> ids,
                                std::span<const double> iso_scores, std::size_t k) {
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (iso_scores[a] != iso_scores[b]) return iso_scores[a] > iso_scores[b];
    return ids[a] < ids[b];
  });
  std::set<std::string> out;
  for (std::size_t i = 0; i < std::min(k, order.size()); ++i) out.insert(ids[order[i]]);
  return out;
}

std::size_t flag_count(double contamination, std::size_t n) {
  return static_cast<std::size_t>(std::lround(contamination * static_cast<double>(n)));
}

}  // namespace

std::vector<double> iso_scores_at_level(const AggregatorScores& scores, std::size_t level_index,
                                        const EvalOptions& options) {
  ForestConfig cfg = options.forest;
  cfg.contamination = options.contaminations.at(level_index);
  cfg.seed = options.refit_per_level
                 ? derive_seed(options.forest.seed, "refit-" + scores.aggregator, level_index)
                 : derive_seed(options.forest.seed, "fit-" + scores.aggregator);
  FeatureMatrix points(scores.scores.size(), 1);
  for (std::size_t i = 0; i < scores.scores.size(); ++i) points.at(i, 0) = scores.scores[i];
  const auto forest = IsolationForest::fit(points, cfg, options.threads);
  return forest.score_all(points, options.threads);
}

std::vector<StabilityRow> stability_sweep(std::span<const AggregatorScores> scores,
                                          const EvalOptions& options) {
  if (options.contaminations.size() < 2) {
    throw Error("stability_sweep: need at least 2 contamination levels");
  }
  check_same_scene_order(scores);

  std::vector<StabilityRow> rows;
  for (const auto& agg : scores) {
    std::vector<std::vector<double>> per_level;
    per_level.reserve(options.contaminations.size());
    for (std::size_t li = 0; li < options.contaminations.size(); ++li) {
      per_level.push_back(iso_scores_at_level(agg, li, options));
    }
    for (std::size_t i = 0; i < options.contaminations.size(); ++i) {
      for (std::size_t j = i + 1; j < options.contaminations.size(); ++j) {
        StabilityRow row;
        row.aggregator = agg.aggregator;
        row.c1 = options.contaminations[i];
        row.c2 = options.contaminations[j];
        row.kendall_tau = kendall_tau(per_level[i], per_level[j]);
        // Jaccard@K: a common K (the smaller contamination's flag count)
        // compares equal-size top-K sets, so only ranking churn moves it.
        const std::size_t k = flag_count(std::min(row.c1, row.c2), agg.scene_ids.size());
        row.jaccard = jaccard(top_k_ids(agg.scene_ids, per_level[i], k),
                              top_k_ids(agg.scene_ids, per_level[j], k));
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

std::vector<AlignmentRow> alignment_sweep(std::span<const AggregatorScores> scores,
                                          std::span<const ProxyRow> proxies,
                                          const EvalOptions& options) {
  check_same_scene_order(scores);
  if (scores.empty()) return {};
  if (proxies.size() != scores[0].scene_ids.size()) {
    throw SceneSetMismatchError("proxy table size differs from score table");
  }
  std::map<std::string, std::size_t> proxy_index;
  for (std::size_t i = 0; i < proxies.size(); ++i) proxy_index[proxies[i].scene_id] = i;

  std::vector<AlignmentRow> rows;
  for (const auto& agg : scores) {
    std::vector<std::vector<double>> proxy_cols(proxy_names().size());
    for (auto& col : proxy_cols) col.reserve(agg.scene_ids.size());
    for (const auto& id : agg.scene_ids) {
      const auto it = proxy_index.find(id);
      if (it == proxy_index.end()) {
        throw SceneSetMismatchError("no proxy row for scene " + id);
      }
      const auto& p = proxies[it->second];
      for (std::size_t pi = 0; pi < proxy_names().size(); ++pi) {
        proxy_cols[pi].push_back(proxy_value(p, proxy_names()[pi]));
      }
    }

    std::vector<double> rho_sum(proxy_names().size(), 0.0);
    for (std::size_t li = 0; li < options.contaminations.size(); ++li) {
      const auto iso = iso_scores_at_level(agg, li, options);
      for (std::size_t pi = 0; pi < proxy_names().size(); ++pi) {
        rho_sum[pi] += spearman(iso, proxy_cols[pi]).value_or(0.0);
      }
    }
    for (std::size_t pi = 0; pi < proxy_names().size(); ++pi) {
      rows.push_back({agg.aggregator, proxy_names()[pi],
                      rho_sum[pi] / static_cast<double>(options.contaminations.size())});
    }
  }
  return rows;
}

SelectedConfig select_config(std::span<const StabilityRow> stability,
                             std::span<const AlignmentRow> alignment,
                             const EvalOptions& options) {
  // The five surrogate safety measures; the extra baseline features carried in
  // ProxyRow do not vote here.
  static const std::set<std::string> kSsmProxies = {
      "harsh_closing_ratio", "lateral_excursion", "min_long_gap", "min_ttc", "rel_speed_std"};

  std::map<std::string, std::pair<double, int>> tau_acc;
  for (const auto& row : stability) {
    auto& [sum, count] = tau_acc[row.aggregator];
    sum += row.kendall_tau;
    ++count;
  }
  std::map<std::string, std::pair<double, int>> rho_acc;
  for (const auto& row : alignment) {
    if (!kSsmProxies.contains(row.proxy)) continue;
    auto& [sum, count] = rho_acc[row.aggregator];
    sum += std::abs(row.spearman_rho);
    ++count;
  }

  SelectedConfig selected;
  selected.contamination = options.default_contamination;
  double best_rho = -1.0;
  for (const auto& [agg, acc] : rho_acc) {
    const auto tau_it = tau_acc.find(agg);
    const double mean_tau =
        tau_it == tau_acc.end() ? 1.0 : tau_it->second.first / tau_it->second.second;
    if (mean_tau < options.tau_min) continue;
    const double mean_rho = acc.first / acc.second;
    if (mean_rho > best_rho) {
      best_rho = mean_rho;
      selected.aggregator = agg;
    }
    // ties resolve to the lexicographically smaller name, which the map
    // iteration order already guarantees
  }
  if (best_rho < 0.0) {
    selected.aggregator = "max";
    selected.fallback = true;
  }
  return selected;
}

BaselineResult baselines(std::span<const ProxyRow> proxies,
                         const std::set<std::string>& ours_flagged,
                         const BaselineOptions& options) {
  BaselineResult result;

  for (const auto& row : proxies) {
    if (row.min_ttc < options.ttc_threshold) result.ttc_flagged.insert(row.scene_id);
  }

  FeatureMatrix points(proxies.size(), 4);
  std::vector<std::string> ids;
  ids.reserve(proxies.size());
  for (std::size_t i = 0; i < proxies.size(); ++i) {
    const auto& row = proxies[i];
    points.at(i, 0) = std::min(row.min_ttc, options.ttc_cap);
    points.at(i, 1) = row.min_dist;
    points.at(i, 2) = row.max_dv;
    points.at(i, 3) = row.max_acc;
    ids.push_back(row.scene_id);
  }
  ForestConfig cfg;
  cfg.contamination = options.contamination;
  cfg.seed = derive_seed(options.seed, "baseline-iforest");
  const auto forest = IsolationForest::fit(points, cfg, options.threads);
  const auto scores = forest.score_all(points, options.threads);
  const auto flags = flag_top(ids, scores, options.contamination);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (flags[i]) result.iforest_flagged.insert(ids[i]);
  }

  auto& rep = result.overlap;
  rep.ours_total = static_cast<std::int64_t>(ours_flagged.size());
  rep.ttc_total = static_cast<std::int64_t>(result.ttc_flagged.size());
  rep.if_total = static_cast<std::int64_t>(result.iforest_flagged.size());
  for (const auto& id : ours_flagged) {
    const bool in_ttc = result.ttc_flagged.contains(id);
    const bool in_if = result.iforest_flagged.contains(id);
    if (in_ttc && in_if) ++rep.ours_both;
    else if (in_ttc) ++rep.ours_ttc_only;
    else if (in_if) ++rep.ours_if_only;
    else ++rep.unique_ours;
  }
  return result;
}

std::vector<CcdfPoint> ccdf_points(std::span<const double> scores) {
  std::vector<double> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end());
  const auto n = sorted.size();
  std::vector<CcdfPoint> points;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && sorted[j + 1] == sorted[i]) ++j;
    // all n - i samples are >= sorted[i]
    points.push_back({sorted[i], static_cast<double>(n - i) / static_cast<double>(n)});
    i = j + 1;
  }
  return points;
}

}  // namespace scenewatch
