#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "scenewatch/util.hpp"

namespace scenewatch {

struct ForestConfig {
  int n_trees = 100;
  int subsample = 256;
  double contamination = 0.15;  // in (0, 0.5]
  std::uint64_t seed = 0;

  void validate() const;
};

struct ForestScoreRow {
  std::string scene_id;
  double iso_score = 0.0;  // in (0, 1)
  bool flagged = false;
};

// Average unsuccessful-search path length c(n) of a BST with n points:
// 2*H(n-1) - 2*(n-1)/n. Harmonic numbers are evaluated exactly up to n = 50
// (desk-scale trees are tiny); the ln(n-1) + Euler-gamma approximation takes
// over beyond that.
double average_path_length(int n);

// Isolation forest over an N x d feature matrix. Trees are built on
// independent subsamples (without replacement; with replacement when
// N < subsample); splits pick a random feature with positive range and a
// uniform cut inside its observed range; recursion stops at isolation or
// ceil(log2(subsample)). Scoring adds the c(size) correction at whatever node
// terminates the walk.
class IsolationForest {
 public:
  // Throws DegenerateInputError when all points are identical.
  static IsolationForest fit(const FeatureMatrix& points, const ForestConfig& config,
                             int threads = 1);

  double score(std::span<const double> point) const;
  std::vector<double> score_all(const FeatureMatrix& points, int threads = 1) const;

  int sample_size() const { return sample_size_; }
  int tree_count() const { return static_cast<int>(trees_.size()); }

 private:
  struct Node {
    int feature = -1;    // -1 marks a leaf
    double split = 0.0;
    int left = -1;
    int right = -1;
    int size = 0;
  };
  struct Tree {
    std::vector<Node> nodes;
  };

  std::vector<Tree> trees_;
  int sample_size_ = 0;

  static Tree build_tree(const FeatureMatrix& points, std::vector<std::size_t> indices,
                         int max_depth, std::uint64_t seed);
  static double path_length(const Tree& tree, std::span<const double> point);
};

// Flags exactly round(contamination * N) scenes with the highest iso scores;
// ties broken by ascending scene_id so flag sets are deterministic.
std::vector<bool> flag_top(std::span<const std::string> scene_ids,
                           std::span<const double> iso_scores, double contamination);

// Convenience: fit + score + flag on per-scene scalar scores.
std::vector<ForestScoreRow> score_and_flag(std::span<const std::string> scene_ids,
                                           std::span<const double> values,
                                           const ForestConfig& config, int threads = 1);

// flags.csv: header "scene_id,iso_score,flagged".
void save_flags_csv(const std::filesystem::path& path, std::span<const ForestScoreRow> rows);
std::vector<ForestScoreRow> load_flags_csv(const std::filesystem::path& path);

}  // namespace scenewatch
