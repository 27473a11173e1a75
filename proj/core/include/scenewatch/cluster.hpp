#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "scenewatch/predictor.hpp"
#include "scenewatch/util.hpp"

namespace scenewatch {

inline constexpr int kErrorFeatureCount = 6;

// 6D prediction-error descriptor of one scene: max/mean/std of the pooled
// per-timestep lateral position error |x_hat - x| and speed error
// |v_hat - v| over present agents. Column order matches the report tables.
struct ErrorFeatures {
  std::string scene_id;
  double max_dx = 0.0;
  double mean_dx = 0.0;
  double std_dx = 0.0;
  double max_v = 0.0;
  double mean_v = 0.0;
  double std_v = 0.0;

  std::array<double, kErrorFeatureCount> as_array() const {
    return {max_dx, mean_dx, std_dx, max_v, mean_v, std_v};
  }
};

std::span<const char* const> error_feature_names();

ErrorFeatures extract_features(const PredictionResult& pred);

struct KMeansResult {
  std::vector<int> assignments;
  FeatureMatrix centers;
  double inertia = 0.0;
  // Post-assignment inertia per Lloyd iteration, one trace per restart;
  // each trace is non-increasing.
  std::vector<std::vector<double>> inertia_traces;
};

// Lloyd iterations with k-means++ seeding, 10 restarts, best inertia kept.
// Seeding and iteration run over a content-sorted view of the points, so the
// result is invariant under input permutation. Empty clusters are reseeded to
// the point farthest from its center. Throws TooFewPointsError.
KMeansResult kmeans(const FeatureMatrix& points, int k, std::uint64_t seed);

// Mean silhouette score; points in singleton clusters score 0.
// Throws SingleClusterError when fewer than 2 clusters are populated.
double silhouette(const FeatureMatrix& points, std::span<const int> assignments);

struct ClusterReport {
  int k = 0;
  std::map<std::string, int> assignments;
  FeatureMatrix centers_raw;     // k x 6
  FeatureMatrix centers_minmax;  // k x 6, entries in [0, 1]
  std::map<int, double> silhouette_by_k;
  double inertia = 0.0;
  bool low_structure_warning = false;  // best silhouette below 0.25
  std::vector<std::string> constant_features;
};

struct ClusterOptions {
  int k_min = 2;
  int k_max = 8;
  std::uint64_t seed = 0;
};

// Min-max scales the features, runs kmeans for each k in range, and picks
// the silhouette argmax (ties to the smaller k). Centers are reported both
// raw and in the normalized space.
ClusterReport select_k_and_report(std::span<const ErrorFeatures> features,
                                  const ClusterOptions& options = {});

std::string cluster_report_to_json(const ClusterReport& report);
ClusterReport cluster_report_from_json(const std::string& text);

void save_cluster_report(const std::filesystem::path& path, const ClusterReport& report);
ClusterReport load_cluster_report(const std::filesystem::path& path);

}  // namespace scenewatch
