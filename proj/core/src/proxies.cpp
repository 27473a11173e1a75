#include "scenewatch/proxies.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "scenewatch/errors.hpp"
#include "scenewatch/util.hpp"

namespace scenewatch {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Same-lane leader-follower pairs by role slot.
constexpr std::pair<RoleSlot, RoleSlot> kLanePairs[] = {
    {RoleSlot::Front, RoleSlot::Ego},
    {RoleSlot::Ego, RoleSlot::Rear},
    {RoleSlot::FrontLeft, RoleSlot::RearLeft},
    {RoleSlot::FrontRight, RoleSlot::RearRight},
};

const char* const kProxyNames[] = {
    "harsh_closing_ratio", "lateral_excursion", "min_long_gap", "min_ttc",
    "rel_speed_std",       "min_dist",          "max_dv",       "max_acc",
};

}  // namespace

std::span<const char* const> proxy_names() { return kProxyNames; }

double proxy_value(const ProxyRow& row, const std::string& name) {
  if (name == "harsh_closing_ratio") return row.harsh_closing_ratio;
  if (name == "lateral_excursion") return row.lateral_excursion;
  if (name == "min_long_gap") return row.min_long_gap;
  if (name == "min_ttc") return row.min_ttc;
  if (name == "rel_speed_std") return row.rel_speed_std;
  if (name == "min_dist") return row.min_dist;
  if (name == "max_dv") return row.max_dv;
  if (name == "max_acc") return row.max_acc;
  throw Error("unknown proxy: " + name);
}

double ttc(double gap, double closing_speed) {
  if (closing_speed <= 0.0) return kInf;
  return std::max(gap, 0.0) / closing_speed;
}

ProxyRow compute_proxies(const SceneTensor& scene, const ProxyOptions& options) {
  if (!scene.present[static_cast<int>(RoleSlot::Ego)]) {
    throw MissingEgoError("compute_proxies: ego absent in scene " + scene.scene_id);
  }

  ProxyRow row;
  row.scene_id = scene.scene_id;
  row.min_ttc = kInf;
  row.min_long_gap = kInf;
  row.min_dist = kInf;

  std::vector<int> agents;
  for (int s = 0; s < kRoleSlots; ++s) {
    if (scene.present[s]) agents.push_back(s);
  }

  int harsh_frames = 0;
  for (int t = 0; t < kSceneFrames; ++t) {
    bool harsh = false;
    for (const auto& [leader, follower] : kLanePairs) {
      const int l = static_cast<int>(leader);
      const int f = static_cast<int>(follower);
      if (!scene.present[l] || !scene.present[f]) continue;
      const double gap =
          std::max(0.0, scene.at(t, l, kFeatY) - scene.at(t, f, kFeatY) - options.vehicle_length);
      const double closing = scene.at(t, f, kFeatV) - scene.at(t, l, kFeatV);
      row.min_long_gap = std::min(row.min_long_gap, gap);
      row.min_ttc = std::min(row.min_ttc, ttc(gap, closing));
      if (closing > options.harsh_threshold) harsh = true;
    }
    if (harsh) ++harsh_frames;

    for (std::size_t i = 0; i < agents.size(); ++i) {
      for (std::size_t j = i + 1; j < agents.size(); ++j) {
        const int a = agents[i];
        const int b = agents[j];
        const double d = std::hypot(scene.at(t, a, kFeatX) - scene.at(t, b, kFeatX),
                                    scene.at(t, a, kFeatY) - scene.at(t, b, kFeatY));
        row.min_dist = std::min(row.min_dist, d);
        row.max_dv = std::max(row.max_dv,
                              std::abs(scene.at(t, a, kFeatV) - scene.at(t, b, kFeatV)));
      }
    }
  }
  row.harsh_closing_ratio = static_cast<double>(harsh_frames) / kSceneFrames;

  for (int s : agents) {
    const double x0 = scene.at(0, s, kFeatX);
    for (int t = 0; t < kSceneFrames; ++t) {
      row.lateral_excursion = std::max(row.lateral_excursion,
                                       std::abs(scene.at(t, s, kFeatX) - x0));
    }
    for (int t = 0; t < kSceneFrames; ++t) {
      double accel;
      if (t == 0) {
        accel = (scene.at(1, s, kFeatV) - scene.at(0, s, kFeatV)) / kFrameDt;
      } else if (t == kSceneFrames - 1) {
        accel = (scene.at(t, s, kFeatV) - scene.at(t - 1, s, kFeatV)) / kFrameDt;
      } else {
        accel = (scene.at(t + 1, s, kFeatV) - scene.at(t - 1, s, kFeatV)) / (2.0 * kFrameDt);
      }
      row.max_acc = std::max(row.max_acc, std::abs(accel));
    }
  }

  const int front = static_cast<int>(RoleSlot::Front);
  const int ego = static_cast<int>(RoleSlot::Ego);
  if (scene.present[front]) {
    std::vector<double> rel(kSceneFrames);
    for (int t = 0; t < kSceneFrames; ++t) {
      rel[static_cast<std::size_t>(t)] = scene.at(t, front, kFeatV) - scene.at(t, ego, kFeatV);
    }
    row.rel_speed_std = population_std(rel);
  }

  // Single-agent scene: no pair statistics exist; report zero gaps/distances
  // rather than infinities.
  if (agents.size() == 1) {
    row.min_dist = 0.0;
    row.min_long_gap = 0.0;
  }
  if (std::isinf(row.min_long_gap)) row.min_long_gap = 0.0;
  if (std::isinf(row.min_dist)) row.min_dist = 0.0;

  return row;
}

std::vector<ProxyRow> compute_proxies_all(std::span<const SceneTensor> scenes,
                                          const ProxyOptions& options, int threads) {
  std::vector<ProxyRow> rows(scenes.size());
  parallel_for(scenes.size(), threads,
               [&](std::size_t i) { rows[i] = compute_proxies(scenes[i], options); });
  return rows;
}

std::optional<double> spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw LengthMismatchError("spearman: length mismatch");
  if (xs.size() < 2) throw LengthMismatchError("spearman: need at least 2 samples");

  auto average_ranks = [](std::span<const double> values) {
    const auto n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
      const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
      for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
      i = j + 1;
    }
    return ranks;
  };

  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  const double mx = mean_of(rx);
  const double my = mean_of(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const double dx = rx[i] - mx;
    const double dy = ry[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

void save_proxies_csv(const std::filesystem::path& path, std::span<const ProxyRow> rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write proxies file: " + path.string());
  out << "scene_id";
  for (const char* name : kProxyNames) out << ',' << name;
  out << '\n';
  for (const auto& row : rows) {
    out << row.scene_id;
    for (const char* name : kProxyNames) out << ',' << format_double(proxy_value(row, name));
    out << '\n';
  }
}

std::vector<ProxyRow> load_proxies_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open proxies file: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error("proxies file is empty: " + path.string());
  std::vector<ProxyRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 9) throw Error("proxies row must have 9 fields");
    ProxyRow row;
    row.scene_id = fields[0];
    row.harsh_closing_ratio = parse_double(fields[1]);
    row.lateral_excursion = parse_double(fields[2]);
    row.min_long_gap = parse_double(fields[3]);
    row.min_ttc = parse_double(fields[4]);
    row.rel_speed_std = parse_double(fields[5]);
    row.min_dist = parse_double(fields[6]);
    row.max_dv = parse_double(fields[7]);
    row.max_acc = parse_double(fields[8]);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace scenewatch
