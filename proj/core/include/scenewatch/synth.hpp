#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "scenewatch/scene.hpp"

namespace scenewatch {

// Intelligent Driver Model parameters for the normal car-following behavior.
struct IdmParams {
  double desired_speed = 30.0;      // m/s, cap on per-agent desired speed
  double time_headway = 1.5;        // s
  double max_accel = 1.0;           // m/s^2
  double comfortable_decel = 1.5;   // m/s^2
  double jam_distance = 2.0;        // m
};

struct SynthConfig {
  int n_scenes = 2000;
  double anomaly_fraction = 0.1;
  std::uint64_t seed = 0;
  IdmParams idm;
  double noise_std = 0.08;  // lateral Ornstein-Uhlenbeck noise scale (m)

  void validate() const;
};

enum class AnomalyKind : int {
  None = 0,
  FollowInstability = 1,
  SuddenBrake = 2,
  LateralDrift = 3,
  AbruptLaneChange = 4,
};

const char* to_string(AnomalyKind kind);
AnomalyKind anomaly_kind_from_string(const std::string& name);

struct GroundTruthLabel {
  std::string scene_id;
  bool is_anomaly = false;
  AnomalyKind kind = AnomalyKind::None;
  int onset_frame = -1;
};

// Injection spec for one scene; magnitude meaning depends on kind:
//   SuddenBrake       peak deceleration (m/s^2), applied for 1.5 s to the
//                     target agent (ego or front)
//   FollowInstability acceleration amplitude of the +-square wave (m/s^2)
//   LateralDrift      total lateral drift (m), reached by frame 49
//   AbruptLaneChange  transition duration (s) for one 3.7 m lane width
struct Injection {
  AnomalyKind kind = AnomalyKind::None;
  int onset_frame = -1;
  double magnitude = 0.0;
  RoleSlot target = RoleSlot::Ego;
};

struct SynthResult {
  std::vector<SceneTensor> scenes;
  std::vector<GroundTruthLabel> labels;  // one per scene, aligned by index
};

// Deterministic batch generation: exactly round(n_scenes * anomaly_fraction)
// anomalous scenes, spread evenly over the four kinds. The random stream is
// split per scene from the master seed, so any subset of scenes regenerates
// identically.
SynthResult generate(const SynthConfig& config);

// Single-scene generator behind generate(); exposed so tests can pin the
// injection. The same scene_seed with a different injection yields a matched
// pair that is identical up to the onset frame.
SceneTensor generate_scene(const SynthConfig& config, std::uint64_t scene_seed,
                           const std::string& scene_id, const Injection& injection);

// Draws the injection parameters generate() would use for a given kind.
Injection draw_injection(AnomalyKind kind, std::uint64_t scene_seed);

// Behavioral signature detectors used to validate labels. All work on the
// scene tensor (translation-invariant), with accelerations taken from
// forward differences of the speed feature.
struct SignatureScan {
  bool sudden_brake = false;        // some agent reaches accel <= -4 m/s^2
  bool lateral_drift = false;       // |x_t - x_t0| grows monotonically to >= 1.5 m
  bool abrupt_lane_change = false;  // >= 3.7 m lateral shift within 1.5 s
  bool follow_instability = false;  // sign of v_front - v_ego alternates >= 4 times

  bool any() const { return sudden_brake || lateral_drift || abrupt_lane_change || follow_instability; }
};

SignatureScan scan_signatures(const SceneTensor& scene);

// Labels store: one JSON object per line,
//   {"scene_id", "is_anomaly", "kind", "onset_frame"}
void save_labels_jsonl(const std::filesystem::path& path, std::span<const GroundTruthLabel> labels);
std::vector<GroundTruthLabel> load_labels_jsonl(const std::filesystem::path& path);

}  // namespace scenewatch
