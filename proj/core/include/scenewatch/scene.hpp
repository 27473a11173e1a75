#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace scenewatch {

inline constexpr int kSceneFrames = 50;  // 5 s at 10 Hz
inline constexpr int kRoleSlots = 7;
inline constexpr int kFeatures = 3;  // x, y, v
inline constexpr double kFrameDt = 0.1;

// Feature indices within a scene tensor step.
inline constexpr int kFeatX = 0;
inline constexpr int kFeatY = 1;
inline constexpr int kFeatV = 2;

enum class RoleSlot : int {
  Ego = 0,
  Front = 1,
  Rear = 2,
  FrontLeft = 3,
  FrontRight = 4,
  RearLeft = 5,
  RearRight = 6,
};

const char* to_string(RoleSlot slot);

// One trajectory sample in road coordinates: x lateral, y longitudinal,
// v speed (m/s), optional signed acceleration and lane id.
struct TrackPoint {
  std::int64_t frame_index = 0;
  double x = 0.0;
  double y = 0.0;
  double v = 0.0;
  std::optional<double> a;
  std::optional<int> lane_id;
};

// One ego-centric 5-s scene: 50 timesteps x 7 role slots x (x, y, v) in the
// ego frame, plus a presence mask. Slots with present[s] == false hold the
// sentinel 0.0 everywhere and are excluded from every downstream statistic.
struct SceneTensor {
  std::string scene_id;
  std::string ego_vehicle_id;
  std::int64_t source_frame0 = 0;
  std::array<bool, kRoleSlots> present{};
  std::array<double, kSceneFrames * kRoleSlots * kFeatures> values{};

  double& at(int t, int slot, int feat) {
    return values[static_cast<std::size_t>((t * kRoleSlots + slot) * kFeatures + feat)];
  }
  double at(int t, int slot, int feat) const {
    return values[static_cast<std::size_t>((t * kRoleSlots + slot) * kFeatures + feat)];
  }

  // Throws Error if a structural invariant is violated (ego absent,
  // non-finite present values, nonzero sentinel in absent slots).
  void validate() const;
};

// Per-feature normalization statistics (population std; constant features
// fall back to std 1 so normalization stays invertible).
struct NormStats {
  std::array<double, kFeatures> mean{0.0, 0.0, 0.0};
  std::array<double, kFeatures> stddev{1.0, 1.0, 1.0};
};

struct SplitSpec {
  double train_fraction = 0.7;
  double val_fraction = 0.2;
  double test_fraction = 0.1;
  std::uint64_t seed = 0;

  void validate() const;  // fractions >= 0 and sum to 1 +- 1e-9
};

struct SplitResult {
  std::vector<SceneTensor> train;
  std::vector<SceneTensor> val;
  std::vector<SceneTensor> test;
};

// Raw per-agent absolute track covering the same 50 frames as the scene.
struct RawAgentTrack {
  RoleSlot slot = RoleSlot::Ego;
  std::vector<TrackPoint> points;
};

// Translates all tracks so the ego pose at frame 0 becomes the origin.
// Pure translation; speeds are untransformed. Throws MissingEgoError /
// LengthMismatchError.
SceneTensor to_ego_frame(const std::string& scene_id, const std::string& ego_vehicle_id,
                         std::int64_t source_frame0, std::span<const RawAgentTrack> agents);

// Training-set feature statistics over present agent-timesteps only.
// Throws EmptyInputError when no present entry exists.
NormStats fit_norm(std::span<const SceneTensor> scenes);

// (x - mean) / std per feature; absent slots stay at the 0.0 sentinel.
SceneTensor apply_norm(const SceneTensor& scene, const NormStats& stats);
SceneTensor invert_norm(const SceneTensor& scene, const NormStats& stats);

// Deterministic grouped split: scenes sharing ego_vehicle_id always land in
// the same part, group order is a seeded shuffle, and part sizes track the
// requested fractions to within one ego group.
SplitResult split(std::span<const SceneTensor> scenes, const SplitSpec& spec);

}  // namespace scenewatch
