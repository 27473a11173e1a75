#include "scenewatch/residual.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "scenewatch/errors.hpp"
#include "scenewatch/util.hpp"

namespace scenewatch {

void ResidualWeights::validate() const {
  if (alpha_pos < 0 || alpha_vel < 0) throw Error("residual weights must be >= 0");
  if (alpha_pos == 0 && alpha_vel == 0) throw Error("residual weights must not both be zero");
}

std::string Aggregator::name() const {
  switch (kind) {
    case AggregatorKind::Max: return "max";
    case AggregatorKind::Q95: return "q95";
    case AggregatorKind::Mean: return "mean";
    case AggregatorKind::TopK: return "topk";
  }
  return "?";
}

Aggregator Aggregator::parse(const std::string& name, int k) {
  if (name == "max") return {AggregatorKind::Max, k};
  if (name == "q95") return {AggregatorKind::Q95, k};
  if (name == "mean") return {AggregatorKind::Mean, k};
  if (name == "topk" || name == "top-k") {
    if (k < 1) throw Error("topk aggregator needs k >= 1");
    return {AggregatorKind::TopK, k};
  }
  throw Error("unknown aggregator: " + name);
}

std::vector<double> residuals(const PredictionResult& pred, const ResidualWeights& weights) {
  weights.validate();
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(pred.horizon) * kRoleSlots);
  for (int t = 0; t < pred.horizon; ++t) {
    for (int s = 0; s < kRoleSlots; ++s) {
      if (!pred.present[s]) continue;
      const double dx = pred.pred_at(t, s, kFeatX) - pred.actual_at(t, s, kFeatX);
      const double dy = pred.pred_at(t, s, kFeatY) - pred.actual_at(t, s, kFeatY);
      const double dv = pred.pred_at(t, s, kFeatV) - pred.actual_at(t, s, kFeatV);
      out.push_back(weights.alpha_pos * std::hypot(dx, dy) + weights.alpha_vel * std::abs(dv));
    }
  }
  return out;
}

double percentile(std::span<const double> values, double q) {
  if (values.empty()) throw EmptyResidualsError("percentile of empty set");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double h = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(h);
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

double aggregate(std::span<const double> residual_set, const Aggregator& f) {
  if (residual_set.empty()) throw EmptyResidualsError("aggregate of empty residual set");
  switch (f.kind) {
    case AggregatorKind::Max:
      return *std::max_element(residual_set.begin(), residual_set.end());
    case AggregatorKind::Q95:
      return percentile(residual_set, 0.95);
    case AggregatorKind::Mean:
      return mean_of(residual_set);
    case AggregatorKind::TopK: {
      const auto k = std::min<std::size_t>(static_cast<std::size_t>(f.k), residual_set.size());
      std::vector<double> sorted(residual_set.begin(), residual_set.end());
      std::partial_sort(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k),
                        sorted.end(), std::greater<>());
      double sum = 0.0;
      for (std::size_t i = 0; i < k; ++i) sum += sorted[i];
      return sum / static_cast<double>(k);
    }
  }
  throw Error("unreachable aggregator kind");
}

SceneScore score_scene(const PredictionResult& pred, const ResidualWeights& weights,
                       const Aggregator& f) {
  return {pred.scene_id, aggregate(residuals(pred, weights), f), f.name()};
}

void save_scores_csv(const std::filesystem::path& path, std::span<const SceneScore> scores) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write scores file: " + path.string());
  out << "scene_id,aggregator,residual_score\n";
  for (const auto& s : scores) {
    out << s.scene_id << ',' << s.aggregator << ',' << format_double(s.residual_score) << '\n';
  }
}

std::vector<SceneScore> load_scores_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open scores file: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error("scores file is empty: " + path.string());
  std::vector<SceneScore> scores;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 3) throw Error("scores row must have 3 fields");
    scores.push_back({fields[0], parse_double(fields[2]), fields[1]});
  }
  return scores;
}

}  // namespace scenewatch
