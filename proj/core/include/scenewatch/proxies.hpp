#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scenewatch/scene.hpp"

namespace scenewatch {

// Surrogate safety measures plus the physical features used by the baseline
// detectors. min_ttc is +infinity when no pair ever closes.
struct ProxyRow {
  std::string scene_id;
  double harsh_closing_ratio = 0.0;  // fraction of frames in [0, 1]
  double lateral_excursion = 0.0;    // m
  double min_long_gap = 0.0;         // m
  double min_ttc = 0.0;              // s, may be +inf
  double rel_speed_std = 0.0;        // m/s
  double min_dist = 0.0;             // m
  double max_dv = 0.0;               // m/s
  double max_acc = 0.0;              // m/s^2
};

struct ProxyOptions {
  double harsh_threshold = 3.0;   // m/s closing speed counted as harsh
  double vehicle_length = 4.5;    // m, center distance -> bumper gap
};

// Names in the order they appear in ProxyRow / proxies.csv.
std::span<const char* const> proxy_names();
double proxy_value(const ProxyRow& row, const std::string& name);

// gap / closing_speed when the pair is closing; +infinity otherwise.
double ttc(double gap, double closing_speed);

// All measures for one scene. Same-lane leader-follower pairs are the role
// pairs (front, ego), (ego, rear), (front_left, rear_left),
// (front_right, rear_right); distances and relative speeds use all present
// pairs; accelerations come from central differences of the speed feature.
ProxyRow compute_proxies(const SceneTensor& scene, const ProxyOptions& options = {});

std::vector<ProxyRow> compute_proxies_all(std::span<const SceneTensor> scenes,
                                          const ProxyOptions& options = {}, int threads = 1);

// Spearman rank correlation with average ranks for ties (Pearson on ranked
// data). Returns nullopt when either side has zero rank variance.
// Throws LengthMismatchError.
std::optional<double> spearman(std::span<const double> xs, std::span<const double> ys);

// proxies.csv: header row then one ProxyRow per line; infinities serialize
// as the literal "inf".
void save_proxies_csv(const std::filesystem::path& path, std::span<const ProxyRow> rows);
std::vector<ProxyRow> load_proxies_csv(const std::filesystem::path& path);

}  // namespace scenewatch
