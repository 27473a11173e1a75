#include "scenewatch/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "scenewatch/errors.hpp"
#include "scenewatch/rng.hpp"

namespace scenewatch {

namespace {

const char* const kFeatureNames[] = {"max_dx", "mean_dx", "std_dx", "max_v", "mean_v", "std_v"};

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    d += diff * diff;
  }
  return d;
}

}  // namespace

std::span<const char* const> error_feature_names() { return kFeatureNames; }

ErrorFeatures extract_features(const PredictionResult& pred) {
  std::vector<double> lat_errors, vel_errors;
  for (int t = 0; t < pred.horizon; ++t) {
    for (int s = 0; s < kRoleSlots; ++s) {
      if (!pred.present[s]) continue;
      lat_errors.push_back(std::abs(pred.pred_at(t, s, kFeatX) - pred.actual_at(t, s, kFeatX)));
      vel_errors.push_back(std::abs(pred.pred_at(t, s, kFeatV) - pred.actual_at(t, s, kFeatV)));
    }
  }
  ErrorFeatures out;
  out.scene_id = pred.scene_id;
  if (lat_errors.empty()) return out;
  out.max_dx = *std::max_element(lat_errors.begin(), lat_errors.end());
  out.mean_dx = mean_of(lat_errors);
  out.std_dx = population_std(lat_errors);
  out.max_v = *std::max_element(vel_errors.begin(), vel_errors.end());
  out.mean_v = mean_of(vel_errors);
  out.std_v = population_std(vel_errors);
  return out;
}

KMeansResult kmeans(const FeatureMatrix& points, int k, std::uint64_t seed) {
  const auto n = points.rows;
  if (k < 1 || n < static_cast<std::size_t>(k)) {
    throw TooFewPointsError("kmeans: need at least k points");
  }
  const auto d = points.cols;

  // Canonical content order: seeding indexed through this view is invariant
  // under permutation of the input rows.
  std::vector<std::size_t> canon(n);
  std::iota(canon.begin(), canon.end(), std::size_t{0});
  std::sort(canon.begin(), canon.end(), [&](std::size_t a, std::size_t b) {
    return std::lexicographical_compare(points.row(a).begin(), points.row(a).end(),
                                        points.row(b).begin(), points.row(b).end());
  });

  constexpr int kRestarts = 10;
  constexpr int kMaxIters = 300;
  constexpr double kShiftTol = 1e-6;

  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> traces;

  for (int restart = 0; restart < kRestarts; ++restart) {
    Rng rng(derive_seed(seed, "kmeans-restart", static_cast<std::uint64_t>(restart)));

    // k-means++ over the canonical view.
    FeatureMatrix centers(static_cast<std::size_t>(k), d);
    std::vector<double> dist2(n, std::numeric_limits<double>::infinity());
    {
      const auto first = canon[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(n) - 1))];
      std::copy(points.row(first).begin(), points.row(first).end(), centers.row(0).begin());
      for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (std::size_t ci = 0; ci < n; ++ci) {
          const auto p = canon[ci];
          dist2[ci] = std::min(dist2[ci], sq_dist(points.row(p), centers.row(c - 1)));
          total += dist2[ci];
        }
        std::size_t chosen = canon[n - 1];
        if (total > 0.0) {
          const double target = rng.uniform() * total;
          double acc = 0.0;
          for (std::size_t ci = 0; ci < n; ++ci) {
            acc += dist2[ci];
            if (acc >= target) {
              chosen = canon[ci];
              break;
            }
          }
        }
        std::copy(points.row(chosen).begin(), points.row(chosen).end(),
                  centers.row(static_cast<std::size_t>(c)).begin());
      }
    }

    std::vector<int> assign(n, 0);
    std::vector<double> trace;
    double inertia = 0.0;
    for (int iter = 0; iter < kMaxIters; ++iter) {
      inertia = 0.0;
      for (std::size_t ci = 0; ci < n; ++ci) {
        const auto p = canon[ci];
        double best_d = std::numeric_limits<double>::infinity();
        int best_c = 0;
        for (int c = 0; c < k; ++c) {
          const double dd = sq_dist(points.row(p), centers.row(static_cast<std::size_t>(c)));
          if (dd < best_d) {
            best_d = dd;
            best_c = c;
          }
        }
        assign[p] = best_c;
        inertia += best_d;
      }
      trace.push_back(inertia);

      FeatureMatrix next(static_cast<std::size_t>(k), d);
      std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
      for (std::size_t p = 0; p < n; ++p) {
        const auto c = static_cast<std::size_t>(assign[p]);
        ++counts[c];
        for (std::size_t f = 0; f < d; ++f) next.at(c, f) += points.at(p, f);
      }
      for (int c = 0; c < k; ++c) {
        const auto cc = static_cast<std::size_t>(c);
        if (counts[cc] == 0) {
          // Reseed an empty cluster to the point farthest from its center.
          std::size_t farthest = canon[0];
          double far_d = -1.0;
          for (std::size_t ci = 0; ci < n; ++ci) {
            const auto p = canon[ci];
            const double dd = sq_dist(
                points.row(p), centers.row(static_cast<std::size_t>(assign[p])));
            if (dd > far_d) {
              far_d = dd;
              farthest = p;
            }
          }
          std::copy(points.row(farthest).begin(), points.row(farthest).end(),
                    next.row(cc).begin());
        } else {
          for (std::size_t f = 0; f < d; ++f) next.at(cc, f) /= static_cast<double>(counts[cc]);
        }
      }

      double shift = 0.0;
      for (std::size_t i = 0; i < centers.values.size(); ++i) {
        shift = std::max(shift, std::abs(next.values[i] - centers.values[i]));
      }
      centers = std::move(next);
      if (shift < kShiftTol) break;
    }

    // Final assignment against the converged centers.
    inertia = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      double best_d = std::numeric_limits<double>::infinity();
      int best_c = 0;
      for (int c = 0; c < k; ++c) {
        const double dd = sq_dist(points.row(p), centers.row(static_cast<std::size_t>(c)));
        if (dd < best_d) {
          best_d = dd;
          best_c = c;
        }
      }
      assign[p] = best_c;
      inertia += best_d;
    }

    traces.push_back(std::move(trace));
    if (inertia < best.inertia) {
      best.assignments = assign;
      best.centers = centers;
      best.inertia = inertia;
    }
  }
  best.inertia_traces = std::move(traces);
  return best;
}

double silhouette(const FeatureMatrix& points, std::span<const int> assignments) {
  const auto n = points.rows;
  if (assignments.size() != n) throw LengthMismatchError("silhouette: assignment size mismatch");

  int k = 0;
  for (int a : assignments) k = std::max(k, a + 1);
  std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
  for (int a : assignments) ++counts[static_cast<std::size_t>(a)];
  int populated = 0;
  for (auto c : counts) populated += c > 0;
  if (populated < 2) throw SingleClusterError("silhouette: needs at least 2 populated clusters");

  double total = 0.0;
  std::vector<double> sums(static_cast<std::size_t>(k), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto own = static_cast<std::size_t>(assignments[i]);
    if (counts[own] == 1) continue;  // singleton scores 0

    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      sums[static_cast<std::size_t>(assignments[j])] +=
          std::sqrt(sq_dist(points.row(i), points.row(j)));
    }
    const double a = sums[own] / static_cast<double>(counts[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < static_cast<std::size_t>(k); ++c) {
      if (c == own || counts[c] == 0) continue;
      b = std::min(b, sums[c] / static_cast<double>(counts[c]));
    }
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

ClusterReport select_k_and_report(std::span<const ErrorFeatures> features,
                                  const ClusterOptions& options) {
  if (features.size() < 2) throw TooFewPointsError("clustering: need at least 2 scenes");

  const auto n = features.size();
  FeatureMatrix raw(n, kErrorFeatureCount);
  for (std::size_t i = 0; i < n; ++i) {
    const auto arr = features[i].as_array();
    std::copy(arr.begin(), arr.end(), raw.row(i).begin());
  }

  ClusterReport report;

  // Min-max scaling over the clustered set; constant features map to 0.
  FeatureMatrix scaled = raw;
  std::array<double, kErrorFeatureCount> lo{}, hi{};
  for (int f = 0; f < kErrorFeatureCount; ++f) {
    lo[static_cast<std::size_t>(f)] = raw.at(0, static_cast<std::size_t>(f));
    hi[static_cast<std::size_t>(f)] = raw.at(0, static_cast<std::size_t>(f));
    for (std::size_t i = 1; i < n; ++i) {
      lo[static_cast<std::size_t>(f)] = std::min(lo[static_cast<std::size_t>(f)], raw.at(i, static_cast<std::size_t>(f)));
      hi[static_cast<std::size_t>(f)] = std::max(hi[static_cast<std::size_t>(f)], raw.at(i, static_cast<std::size_t>(f)));
    }
    const double range = hi[static_cast<std::size_t>(f)] - lo[static_cast<std::size_t>(f)];
    if (range == 0.0) report.constant_features.push_back(kFeatureNames[f]);
    for (std::size_t i = 0; i < n; ++i) {
      scaled.at(i, static_cast<std::size_t>(f)) =
          range == 0.0 ? 0.0 : (raw.at(i, static_cast<std::size_t>(f)) - lo[static_cast<std::size_t>(f)]) / range;
    }
  }

  const int k_hi = std::min(options.k_max, static_cast<int>(n) - 1);
  int best_k = -1;
  double best_sil = -2.0;
  KMeansResult best_run;
  for (int k = options.k_min; k <= k_hi; ++k) {
    auto run = kmeans(scaled, k, derive_seed(options.seed, "cluster-k", static_cast<std::uint64_t>(k)));
    const double sil = silhouette(scaled, run.assignments);
    report.silhouette_by_k[k] = sil;
    if (sil > best_sil) {  // strict: ties keep the smaller k
      best_sil = sil;
      best_k = k;
      best_run = std::move(run);
    }
  }
  if (best_k < 0) throw TooFewPointsError("clustering: no k in range is feasible");

  report.k = best_k;
  report.inertia = best_run.inertia;
  report.low_structure_warning = best_sil < 0.25;
  for (std::size_t i = 0; i < n; ++i) {
    report.assignments[features[i].scene_id] = best_run.assignments[i];
  }
  report.centers_minmax = best_run.centers;
  report.centers_raw = best_run.centers;
  for (int c = 0; c < best_k; ++c) {
    for (int f = 0; f < kErrorFeatureCount; ++f) {
      const auto cf = static_cast<std::size_t>(f);
      const double range = hi[cf] - lo[cf];
      report.centers_raw.at(static_cast<std::size_t>(c), cf) =
          range == 0.0 ? lo[cf]
                       : lo[cf] + best_run.centers.at(static_cast<std::size_t>(c), cf) * range;
    }
  }
  return report;
}

namespace {

nlohmann::ordered_json matrix_to_json(const FeatureMatrix& m) {
  auto out = nlohmann::ordered_json::array();
  for (std::size_t r = 0; r < m.rows; ++r) {
    auto row = nlohmann::ordered_json::array();
    for (std::size_t c = 0; c < m.cols; ++c) row.push_back(m.at(r, c));
    out.push_back(std::move(row));
  }
  return out;
}

FeatureMatrix matrix_from_json(const nlohmann::json& j) {
  FeatureMatrix m(j.size(), j.empty() ? 0 : j[0].size());
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) m.at(r, c) = j[r][c].get<double>();
  }
  return m;
}

}  // namespace

std::string cluster_report_to_json(const ClusterReport& report) {
  nlohmann::ordered_json j;
  j["k"] = report.k;
  j["inertia"] = report.inertia;
  j["low_structure_warning"] = report.low_structure_warning;
  j["constant_features"] = report.constant_features;
  j["feature_order"] = std::vector<std::string>(error_feature_names().begin(),
                                                error_feature_names().end());
  auto sil = nlohmann::ordered_json::object();
  for (const auto& [k, s] : report.silhouette_by_k) sil[std::to_string(k)] = s;
  j["silhouette_by_k"] = std::move(sil);
  j["centers_raw"] = matrix_to_json(report.centers_raw);
  j["centers_minmax"] = matrix_to_json(report.centers_minmax);
  auto assignments = nlohmann::ordered_json::object();
  for (const auto& [id, c] : report.assignments) assignments[id] = c;
  j["assignments"] = std::move(assignments);
  return j.dump(2) + "\n";
}

ClusterReport cluster_report_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  ClusterReport report;
  report.k = j.at("k").get<int>();
  report.inertia = j.at("inertia").get<double>();
  report.low_structure_warning = j.at("low_structure_warning").get<bool>();
  report.constant_features = j.at("constant_features").get<std::vector<std::string>>();
  for (const auto& [k, s] : j.at("silhouette_by_k").items()) {
    report.silhouette_by_k[std::stoi(k)] = s.get<double>();
  }
  report.centers_raw = matrix_from_json(j.at("centers_raw"));
  report.centers_minmax = matrix_from_json(j.at("centers_minmax"));
  for (const auto& [id, c] : j.at("assignments").items()) {
    report.assignments[id] = c.get<int>();
  }
  return report;
}

void save_cluster_report(const std::filesystem::path& path, const ClusterReport& report) {
  write_text_file(path, cluster_report_to_json(report));
}

ClusterReport load_cluster_report(const std::filesystem::path& path) {
  return cluster_report_from_json(read_text_file(path));
}

}  // namespace scenewatch
