#include "scenewatch/iforest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "scenewatch/errors.hpp"
#include "scenewatch/rng.hpp"

namespace scenewatch {

namespace {

constexpr int kExactHarmonicCrossover = 50;
constexpr double kEulerGamma = 0.5772156649015329;

double harmonic(int n) {
  double h = 0.0;
  for (int i = 1; i <= n; ++i) h += 1.0 / static_cast<double>(i);
  return h;
}

}  // namespace

double average_path_length(int n) {
  if (n <= 1) return 0.0;
  const double dn = static_cast<double>(n);
  const double h = n - 1 <= kExactHarmonicCrossover
                       ? harmonic(n - 1)
                       : std::log(dn - 1.0) + kEulerGamma;
  return 2.0 * h - 2.0 * (dn - 1.0) / dn;
}

void ForestConfig::validate() const {
  if (n_trees < 1) throw Error("iforest: n_trees must be >= 1");
  if (subsample < 2) throw Error("iforest: subsample must be >= 2");
  if (!(contamination > 0.0 && contamination <= 0.5)) {
    throw Error("iforest: contamination must lie in (0, 0.5]");
  }
}

IsolationForest::Tree IsolationForest::build_tree(const FeatureMatrix& points,
                                                  std::vector<std::size_t> indices,
                                                  int max_depth, std::uint64_t seed) {
  Rng rng(seed);
  Tree tree;

  struct Item {
    std::vector<std::size_t> indices;
    int depth;
    int parent;
    bool is_left;
  };
  std::vector<Item> stack;
  stack.push_back({std::move(indices), 0, -1, false});

  while (!stack.empty()) {
    Item item = std::move(stack.back());
    stack.pop_back();

    const int node_index = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({});
    tree.nodes.back().size = static_cast<int>(item.indices.size());
    if (item.parent >= 0) {
      auto& parent = tree.nodes[static_cast<std::size_t>(item.parent)];
      (item.is_left ? parent.left : parent.right) = node_index;
    }

    if (item.indices.size() <= 1 || item.depth >= max_depth) continue;

    // Candidate features are those with positive range at this node.
    std::vector<int> candidates;
    std::vector<std::pair<double, double>> ranges(points.cols);
    for (std::size_t f = 0; f < points.cols; ++f) {
      double lo = points.at(item.indices[0], f);
      double hi = lo;
      for (std::size_t idx : item.indices) {
        lo = std::min(lo, points.at(idx, f));
        hi = std::max(hi, points.at(idx, f));
      }
      ranges[f] = {lo, hi};
      if (hi > lo) candidates.push_back(static_cast<int>(f));
    }
    if (candidates.empty()) continue;  // all duplicates: leaf

    const int feature =
        candidates[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(candidates.size()) - 1))];
    const auto [lo, hi] = ranges[static_cast<std::size_t>(feature)];
    const double split = rng.uniform(lo, hi);

    std::vector<std::size_t> left, right;
    for (std::size_t idx : item.indices) {
      (points.at(idx, static_cast<std::size_t>(feature)) < split ? left : right).push_back(idx);
    }
    if (left.empty() || right.empty()) continue;  // degenerate cut: leaf

    auto& node = tree.nodes[static_cast<std::size_t>(node_index)];
    node.feature = feature;
    node.split = split;
    // Right child is pushed first so the left subtree is laid out first.
    stack.push_back({std::move(right), item.depth + 1, node_index, false});
    stack.push_back({std::move(left), item.depth + 1, node_index, true});
  }
  return tree;
}

IsolationForest IsolationForest::fit(const FeatureMatrix& points, const ForestConfig& config,
                                     int threads) {
  config.validate();
  if (points.rows < 2 || points.cols < 1) {
    throw Error("iforest: need at least 2 points with at least 1 feature");
  }
  for (double v : points.values) {
    if (!std::isfinite(v)) throw Error("iforest: non-finite feature value");
  }

  bool all_identical = true;
  for (std::size_t r = 1; r < points.rows && all_identical; ++r) {
    for (std::size_t c = 0; c < points.cols; ++c) {
      if (points.at(r, c) != points.at(0, c)) {
        all_identical = false;
        break;
      }
    }
  }
  if (all_identical) throw DegenerateInputError("iforest: all points identical");

  IsolationForest forest;
  const auto n = points.rows;
  const auto psi = std::min<std::size_t>(static_cast<std::size_t>(config.subsample), n);
  forest.sample_size_ = static_cast<int>(psi);
  const int max_depth = static_cast<int>(std::ceil(std::log2(static_cast<double>(psi))));
  forest.trees_.resize(static_cast<std::size_t>(config.n_trees));

  parallel_for(static_cast<std::size_t>(config.n_trees), threads, [&](std::size_t t) {
    const std::uint64_t tree_seed = derive_seed(config.seed, "iforest-tree", t);
    Rng rng(tree_seed);
    std::vector<std::size_t> sample;
    sample.reserve(psi);
    if (n <= static_cast<std::size_t>(config.subsample)) {
      if (n < static_cast<std::size_t>(config.subsample)) {
        // Fewer points than the nominal subsample: draw with replacement.
        for (std::size_t i = 0; i < psi; ++i) {
          sample.push_back(static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1)));
        }
      } else {
        sample.resize(n);
        std::iota(sample.begin(), sample.end(), std::size_t{0});
      }
    } else {
      // Partial Fisher-Yates: first psi entries of a random permutation.
      std::vector<std::size_t> pool(n);
      std::iota(pool.begin(), pool.end(), std::size_t{0});
      for (std::size_t i = 0; i < psi; ++i) {
        const auto j = static_cast<std::size_t>(
            rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(n) - 1));
        std::swap(pool[i], pool[j]);
        sample.push_back(pool[i]);
      }
    }
    forest.trees_[t] = build_tree(points, std::move(sample), max_depth,
                                  derive_seed(tree_seed, "build"));
  });
  return forest;
}

double IsolationForest::path_length(const Tree& tree, std::span<const double> point) {
  int node_index = 0;
  double depth = 0.0;
  while (true) {
    const Node& node = tree.nodes[static_cast<std::size_t>(node_index)];
    if (node.feature < 0) {
      return depth + average_path_length(node.size);
    }
    node_index = point[static_cast<std::size_t>(node.feature)] < node.split ? node.left : node.right;
    depth += 1.0;
  }
}

double IsolationForest::score(std::span<const double> point) const {
  double total = 0.0;
  for (const auto& tree : trees_) total += path_length(tree, point);
  const double mean_path = total / static_cast<double>(trees_.size());
  return std::exp2(-mean_path / average_path_length(sample_size_));
}

std::vector<double> IsolationForest::score_all(const FeatureMatrix& points, int threads) const {
  std::vector<double> out(points.rows, 0.0);
  parallel_for(points.rows, threads, [&](std::size_t r) { out[r] = score(points.row(r)); });
  return out;
}

std::vector<bool> flag_top(std::span<const std::string> scene_ids,
                           std::span<const double> iso_scores, double contamination) {
  if (scene_ids.size() != iso_scores.size()) {
    throw LengthMismatchError("flag_top: ids and scores differ in length");
  }
  const auto n = scene_ids.size();
  const auto n_flag = static_cast<std::size_t>(
      std::lround(contamination * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (iso_scores[a] != iso_scores[b]) return iso_scores[a] > iso_scores[b];
    return scene_ids[a] < scene_ids[b];
  });
  std::vector<bool> flags(n, false);
  for (std::size_t i = 0; i < std::min(n_flag, n); ++i) flags[order[i]] = true;
  return flags;
}

std::vector<ForestScoreRow> score_and_flag(std::span<const std::string> scene_ids,
                                           std::span<const double> values,
                                           const ForestConfig& config, int threads) {
  if (scene_ids.size() != values.size()) {
    throw LengthMismatchError("score_and_flag: ids and values differ in length");
  }
  FeatureMatrix points(values.size(), 1);
  for (std::size_t i = 0; i < values.size(); ++i) points.at(i, 0) = values[i];
  const auto forest = IsolationForest::fit(points, config, threads);
  const auto scores = forest.score_all(points, threads);
  const auto flags = flag_top(scene_ids, scores, config.contamination);
  std::vector<ForestScoreRow> rows(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    rows[i] = {scene_ids[i], scores[i], flags[i] != 0};
  }
  return rows;
}

void save_flags_csv(const std::filesystem::path& path, std::span<const ForestScoreRow> rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write flags file: " + path.string());
  out << "scene_id,iso_score,flagged\n";
  for (const auto& row : rows) {
    out << row.scene_id << ',' << format_double(row.iso_score) << ','
        << (row.flagged ? "1" : "0") << '\n';
  }
}

std::vector<ForestScoreRow> load_flags_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open flags file: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error("flags file is empty: " + path.string());
  std::vector<ForestScoreRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 3) throw Error("flags row must have 3 fields");
    rows.push_back({fields[0], parse_double(fields[1]), fields[2] == "1"});
  }
  return rows;
}

}  // namespace scenewatch
