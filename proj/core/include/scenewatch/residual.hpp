#pragma once

#include <span>
#include <string>
#include <vector>

#include "scenewatch/predictor.hpp"

namespace scenewatch {

struct ResidualWeights {
  double alpha_pos = 1.0;
  double alpha_vel = 0.5;

  void validate() const;  // both >= 0, not both zero
};

enum class AggregatorKind { Max, Q95, Mean, TopK };

struct Aggregator {
  AggregatorKind kind = AggregatorKind::Max;
  int k = 5;  // TopK only

  std::string name() const;
  static Aggregator parse(const std::string& name, int k = 5);
};

struct SceneScore {
  std::string scene_id;
  double residual_score = 0.0;
  std::string aggregator;
};

// Per-(agent, timestep) residuals over present entries:
//   alpha_pos * ||p_hat - p||_2 + alpha_vel * |v_hat - v|,
// computed in physical units so scores read in meters.
std::vector<double> residuals(const PredictionResult& pred, const ResidualWeights& weights);

// 95th percentile with linear interpolation between order statistics
// (the common "type-7" convention); q in [0, 1].
double percentile(std::span<const double> values, double q);

// Max / Q95 / Mean / mean of the k largest. Throws EmptyResidualsError.
double aggregate(std::span<const double> residual_set, const Aggregator& f);

SceneScore score_scene(const PredictionResult& pred, const ResidualWeights& weights,
                       const Aggregator& f);

// scores.csv: header "scene_id,aggregator,residual_score".
void save_scores_csv(const std::filesystem::path& path, std::span<const SceneScore> scores);
std::vector<SceneScore> load_scores_csv(const std::filesystem::path& path);

}  // namespace scenewatch
