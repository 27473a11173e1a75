#include "scenewatch/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "scenewatch/errors.hpp"
#include "scenewatch/rng.hpp"

namespace scenewatch {

namespace {

constexpr double kDt = kFrameDt;
constexpr double kLaneWidth = 3.7;
constexpr double kVehicleLength = 4.5;
constexpr int kEgoLane = 1;  // of lanes 0 (left), 1, 2 (right)

// Signature thresholds shared with scan_signatures.
constexpr double kBrakeSignature = -4.0;        // m/s^2
constexpr double kDriftSignature = 1.5;         // m
constexpr double kLaneChangeWindow = 15;        // frames (1.5 s)
constexpr double kDeltaVHysteresis = 0.25;      // m/s
constexpr int kAlternationSignature = 4;

// Accel bounds: normal agents never exceed these, so no normal scene can trip
// the brake signature; agents reacting inside an anomalous scene may brake
// harder but stay physically sane.
constexpr double kNormalAccelMin = -2.5;
constexpr double kNormalAccelMax = 2.0;
constexpr double kReactiveAccelMin = -8.0;
constexpr double kReactiveAccelMax = 3.0;

struct AgentSim {
  RoleSlot slot = RoleSlot::Ego;
  bool present = false;
  int leader = -1;          // index into the agent array, -1 = free leader
  int lane = kEgoLane;
  double y = 0.0;
  double v = 0.0;
  double desired_speed = 0.0;
  // free-leader speed profile: a(t) = amp * sin(2*pi*freq*t + phase)
  double lead_amp = 0.0;
  double lead_freq = 0.1;
  double lead_phase = 0.0;
  // lateral Ornstein-Uhlenbeck state
  double lat_noise = 0.0;
  std::vector<double> xs, ys, vs;
};

double idm_accel(const IdmParams& p, double v, double desired, double gap, double dv_closing) {
  const double interaction =
      p.jam_distance +
      std::max(0.0, v * p.time_headway +
                        v * dv_closing / (2.0 * std::sqrt(p.max_accel * p.comfortable_decel)));
  const double s = std::max(gap, 0.1);
  const double free_term = std::pow(v / std::max(desired, 0.1), 4.0);
  return p.max_accel * (1.0 - free_term - (interaction / s) * (interaction / s));
}

// Equilibrium bumper gap for a follower at speed v with desired speed v0:
// the gap where the IDM acceleration is exactly zero at zero closing speed.
double idm_equilibrium_gap(const IdmParams& p, double v, double desired) {
  const double ratio = std::pow(v / desired, 4.0);
  const double s_star = p.jam_distance + v * p.time_headway;
  return s_star / std::sqrt(std::max(1e-6, 1.0 - ratio));
}

double smoothstep01(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * (3.0 - 2.0 * u);
}

}  // namespace

void SynthConfig::validate() const {
  if (n_scenes < 0) throw Error("synth: n_scenes must be >= 0");
  if (anomaly_fraction < 0.0 || anomaly_fraction > 1.0) {
    throw Error("synth: anomaly_fraction must lie in [0, 1]");
  }
  if (idm.desired_speed <= 0 || idm.time_headway <= 0 || idm.max_accel <= 0 ||
      idm.comfortable_decel <= 0 || idm.jam_distance <= 0) {
    throw Error("synth: IDM parameters must be positive");
  }
}

const char* to_string(AnomalyKind kind) {
  switch (kind) {
    case AnomalyKind::None: return "none";
    case AnomalyKind::FollowInstability: return "follow_instability";
    case AnomalyKind::SuddenBrake: return "sudden_brake";
    case AnomalyKind::LateralDrift: return "lateral_drift";
    case AnomalyKind::AbruptLaneChange: return "abrupt_lane_change";
  }
  return "?";
}

AnomalyKind anomaly_kind_from_string(const std::string& name) {
  for (int k = 0; k <= 4; ++k) {
    const auto kind = static_cast<AnomalyKind>(k);
    if (name == to_string(kind)) return kind;
  }
  throw Error("unknown anomaly kind: " + name);
}

Injection draw_injection(AnomalyKind kind, std::uint64_t scene_seed) {
  Rng rng(derive_seed(scene_seed, "inject"));
  Injection inj;
  inj.kind = kind;
  switch (kind) {
    case AnomalyKind::None:
      inj.onset_frame = -1;
      break;
    case AnomalyKind::FollowInstability:
      // Starts late in the history so the corrupted velocity estimate feeds
      // the prediction horizon; oscillation runs to the end of the window.
      inj.onset_frame = static_cast<int>(rng.uniform_int(18, 20));
      inj.magnitude = 3.5;
      break;
    case AnomalyKind::SuddenBrake:
      inj.onset_frame = static_cast<int>(rng.uniform_int(26, 30));
      inj.magnitude = rng.uniform(5.0, 6.5);
      // Half the braking events come from the lead vehicle, which drags the
      // ego into a reactive stop.
      inj.target = rng.bernoulli(0.5) ? RoleSlot::Ego : RoleSlot::Front;
      break;
    case AnomalyKind::LateralDrift:
      inj.onset_frame = static_cast<int>(rng.uniform_int(25, 27));
      inj.magnitude = rng.uniform(2.0, 2.5);
      break;
    case AnomalyKind::AbruptLaneChange:
      inj.onset_frame = static_cast<int>(rng.uniform_int(25, 28));
      inj.magnitude = rng.uniform(1.1, 1.3);
      break;
  }
  return inj;
}

SceneTensor generate_scene(const SynthConfig& config, std::uint64_t scene_seed,
                           const std::string& scene_id, const Injection& injection) {
  Rng layout(derive_seed(scene_seed, "layout"));

  // Congested-freeway regime: modest speeds and headways, so hard braking
  // produces genuine time-to-collision violations.
  const double center_speed = layout.uniform(8.0, 16.0);
  std::array<double, 3> lane_speed{};
  lane_speed[0] = center_speed + layout.uniform(0.0, 2.0);
  lane_speed[kEgoLane] = center_speed;
  lane_speed[2] = std::max(5.0, center_speed - layout.uniform(0.0, 2.0));

  std::array<AgentSim, kRoleSlots> agents;
  auto& ego = agents[static_cast<int>(RoleSlot::Ego)];
  auto& front = agents[static_cast<int>(RoleSlot::Front)];
  auto& rear = agents[static_cast<int>(RoleSlot::Rear)];

  for (int s = 0; s < kRoleSlots; ++s) agents[s].slot = static_cast<RoleSlot>(s);

  // Ego, front, and rear are always present; diagonal neighbors drop out
  // independently. Presence draws come first so the layout stream stays
  // aligned across scenes with different presence patterns.
  std::array<bool, kRoleSlots> present{};
  present[static_cast<int>(RoleSlot::Ego)] = true;
  present[static_cast<int>(RoleSlot::Front)] = true;
  present[static_cast<int>(RoleSlot::Rear)] = true;
  for (RoleSlot slot : {RoleSlot::FrontLeft, RoleSlot::FrontRight, RoleSlot::RearLeft, RoleSlot::RearRight}) {
    present[static_cast<int>(slot)] = layout.bernoulli(0.85);
  }

  auto init_agent = [&](AgentSim& a, int lane, double y, double v, int leader) {
    a.present = true;
    a.lane = lane;
    a.y = y;
    a.v = std::max(0.5, v);
    // Desired speed well above the current speed keeps equilibrium gaps near
    // jam_distance + v*T, i.e. realistic congested headways.
    a.desired_speed = std::min(config.idm.desired_speed, a.v * layout.uniform(1.8, 2.4));
    a.leader = leader;
    a.lead_amp = layout.uniform(0.0, 0.08);
    a.lead_freq = layout.uniform(0.05, 0.15);
    a.lead_phase = layout.uniform(0.0, 2.0 * std::numbers::pi);
  };

  auto equilibrium_spacing = [&](const AgentSim& follower) {
    return (idm_equilibrium_gap(config.idm, follower.v, follower.desired_speed) + kVehicleLength) *
           layout.uniform(0.95, 1.10);
  };

  // Ego lane chain: front leads, ego follows front, rear follows ego.
  const double base_y = 200.0;
  init_agent(ego, kEgoLane, base_y, lane_speed[kEgoLane], static_cast<int>(RoleSlot::Front));
  init_agent(front, kEgoLane, 0.0, lane_speed[kEgoLane], -1);
  front.y = base_y + equilibrium_spacing(ego);
  init_agent(rear, kEgoLane, 0.0, lane_speed[kEgoLane], static_cast<int>(RoleSlot::Ego));
  rear.y = base_y - equilibrium_spacing(rear);

  // Adjacent lanes: a free leader ahead, an IDM follower behind it.
  auto init_side_pair = [&](RoleSlot front_slot, RoleSlot rear_slot, int lane) {
    auto& f = agents[static_cast<int>(front_slot)];
    auto& r = agents[static_cast<int>(rear_slot)];
    // Draws happen regardless of presence so the stream stays aligned.
    const double front_dy = layout.uniform(12.0, 32.0);
    init_agent(f, lane, base_y + front_dy, lane_speed[lane], -1);
    init_agent(r, lane, 0.0, lane_speed[lane], static_cast<int>(front_slot));
    r.y = f.y - equilibrium_spacing(r);
    f.present = present[static_cast<int>(front_slot)];
    r.present = present[static_cast<int>(rear_slot)];
    if (!f.present) r.leader = -1;  // orphaned follower cruises
  };
  init_side_pair(RoleSlot::FrontLeft, RoleSlot::RearLeft, 0);
  init_side_pair(RoleSlot::FrontRight, RoleSlot::RearRight, 2);

  ego.present = true;
  front.present = true;
  rear.present = true;

  // Lateral noise generators, one stream per agent.
  std::array<Rng, kRoleSlots> lat_rng{
      Rng(derive_seed(scene_seed, "lat-noise", 0)), Rng(derive_seed(scene_seed, "lat-noise", 1)),
      Rng(derive_seed(scene_seed, "lat-noise", 2)), Rng(derive_seed(scene_seed, "lat-noise", 3)),
      Rng(derive_seed(scene_seed, "lat-noise", 4)), Rng(derive_seed(scene_seed, "lat-noise", 5)),
      Rng(derive_seed(scene_seed, "lat-noise", 6))};
  constexpr double kOuKappa = 1.5;
  const double ou_stat_sd = config.noise_std / std::sqrt(2.0 * kOuKappa);
  for (int s = 0; s < kRoleSlots; ++s) {
    agents[s].lat_noise = lat_rng[s].normal(0.0, ou_stat_sd);
  }

  const bool anomalous = injection.kind != AnomalyKind::None;
  const int onset = injection.onset_frame;
  // Lateral override state for drift / lane change.
  double frozen_noise = 0.0;
  bool lateral_override = false;

  for (int t = 0; t < kSceneFrames; ++t) {
    const double now = t * kDt;

    // Record state, then advance. Positions integrate speeds exactly.
    for (auto& a : agents) {
      double x = (a.lane - kEgoLane) * kLaneWidth + kLaneWidth + a.lat_noise;
      if (&a == &ego && lateral_override) {
        double offset = 0.0;
        const double since = (t - onset) * kDt;
        if (injection.kind == AnomalyKind::LateralDrift) {
          const double ramp_len = (kSceneFrames - 1 - onset) * kDt;
          offset = injection.magnitude * (since / ramp_len);
        } else if (injection.kind == AnomalyKind::AbruptLaneChange) {
          // Cuts slightly past the lane center, as real lane changes do; the
          // overshoot keeps the full lane-width crossing visible despite the
          // frozen noise offset.
          offset = -kLaneWidth * 1.06 * smoothstep01(since / injection.magnitude);
        }
        x = kLaneWidth + frozen_noise + offset;
      }
      a.xs.push_back(x);
      a.ys.push_back(a.y);
      a.vs.push_back(a.v);
    }

    if (anomalous && t == onset &&
        (injection.kind == AnomalyKind::LateralDrift ||
         injection.kind == AnomalyKind::AbruptLaneChange)) {
      frozen_noise = ego.lat_noise;
      lateral_override = true;
    }

    // Two phases: accelerations from the frame-t state first, then the state
    // update, so follower reactions never mix frames.
    std::array<double, kRoleSlots> accel{};
    for (int s = 0; s < kRoleSlots; ++s) {
      auto& a = agents[s];
      double acc;
      if (a.leader >= 0) {
        const auto& lead = agents[a.leader];
        const double gap = lead.y - a.y - kVehicleLength;
        acc = idm_accel(config.idm, a.v, a.desired_speed, gap, a.v - lead.v);
      } else {
        acc = a.lead_amp * std::sin(2.0 * std::numbers::pi * a.lead_freq * now + a.lead_phase);
      }

      const bool is_target = s == static_cast<int>(injection.target);
      const bool is_ego = s == static_cast<int>(RoleSlot::Ego);
      if (anomalous && t >= onset &&
          ((is_target && injection.kind == AnomalyKind::SuddenBrake) ||
           (is_ego && injection.kind == AnomalyKind::FollowInstability))) {
        if (injection.kind == AnomalyKind::SuddenBrake) {
          if (t < onset + 15) acc = -injection.magnitude;
          else acc = std::clamp(acc, kReactiveAccelMin, kReactiveAccelMax);
        } else {
          // +-square wave with a half-length opening segment, so the speed
          // oscillates symmetrically around the pre-onset speed and the
          // relative speed against the front vehicle keeps changing sign.
          const int k = t - onset;
          acc = injection.magnitude;
          if (k >= 3 && (((k - 3) / 5) % 2) == 0) acc = -injection.magnitude;
        }
      } else if (anomalous && t >= onset) {
        acc = std::clamp(acc, kReactiveAccelMin, kReactiveAccelMax);
      } else {
        acc = std::clamp(acc, kNormalAccelMin, kNormalAccelMax);
      }
      accel[static_cast<std::size_t>(s)] = acc;
    }

    for (int s = 0; s < kRoleSlots; ++s) {
      auto& a = agents[s];
      a.y += a.v * kDt;
      a.v = std::max(0.0, a.v + accel[static_cast<std::size_t>(s)] * kDt);
      a.lat_noise += -kOuKappa * a.lat_noise * kDt +
                     config.noise_std * std::sqrt(kDt) * lat_rng[s].normal();
    }
  }

  std::vector<RawAgentTrack> raw;
  for (int s = 0; s < kRoleSlots; ++s) {
    const auto& a = agents[s];
    if (!a.present) continue;
    RawAgentTrack track;
    track.slot = a.slot;
    track.points.reserve(kSceneFrames);
    for (int t = 0; t < kSceneFrames; ++t) {
      TrackPoint p;
      p.frame_index = t;
      p.x = a.xs[static_cast<std::size_t>(t)];
      p.y = a.ys[static_cast<std::size_t>(t)];
      p.v = a.vs[static_cast<std::size_t>(t)];
      p.lane_id = a.lane;
      track.points.push_back(p);
    }
    raw.push_back(std::move(track));
  }
  return to_ego_frame(scene_id, scene_id + "-ego", 0, raw);
}

SynthResult generate(const SynthConfig& config) {
  config.validate();

  const int n_anoms = static_cast<int>(std::lround(config.n_scenes * config.anomaly_fraction));
  std::vector<int> order(static_cast<std::size_t>(config.n_scenes));
  for (int i = 0; i < config.n_scenes; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng assign(derive_seed(config.seed, "synth-assign"));
  assign.shuffle(order);

  constexpr AnomalyKind kKinds[] = {AnomalyKind::FollowInstability, AnomalyKind::SuddenBrake,
                                    AnomalyKind::LateralDrift, AnomalyKind::AbruptLaneChange};
  std::vector<AnomalyKind> kind_of(static_cast<std::size_t>(config.n_scenes), AnomalyKind::None);
  for (int k = 0; k < n_anoms; ++k) {
    kind_of[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] = kKinds[k % 4];
  }

  SynthResult result;
  result.scenes.reserve(static_cast<std::size_t>(config.n_scenes));
  result.labels.reserve(static_cast<std::size_t>(config.n_scenes));
  for (int i = 0; i < config.n_scenes; ++i) {
    const std::uint64_t scene_seed = derive_seed(config.seed, "synth-scene", static_cast<std::uint64_t>(i));
    const AnomalyKind kind = kind_of[static_cast<std::size_t>(i)];
    const Injection inj = draw_injection(kind, scene_seed);
    char id[32];
    std::snprintf(id, sizeof(id), "synth-%06d", i);
    result.scenes.push_back(generate_scene(config, scene_seed, id, inj));
    GroundTruthLabel label;
    label.scene_id = id;
    label.is_anomaly = kind != AnomalyKind::None;
    label.kind = kind;
    label.onset_frame = inj.onset_frame;
    result.labels.push_back(std::move(label));
  }
  return result;
}

SignatureScan scan_signatures(const SceneTensor& scene) {
  SignatureScan scan;

  for (int s = 0; s < kRoleSlots; ++s) {
    if (!scene.present[s]) continue;

    for (int t = 0; t + 1 < kSceneFrames; ++t) {
      const double accel = (scene.at(t + 1, s, kFeatV) - scene.at(t, s, kFeatV)) / kDt;
      if (accel <= kBrakeSignature) scan.sudden_brake = true;
    }

    // Drift: from some start frame, |x_t - x_start| is non-decreasing through
    // the end of the window and reaches the drift threshold.
    for (int t0 = 0; t0 < kSceneFrames - 1 && !scan.lateral_drift; ++t0) {
      const double x0 = scene.at(t0, s, kFeatX);
      double prev = 0.0;
      bool monotone = true;
      for (int t = t0 + 1; t < kSceneFrames; ++t) {
        const double d = std::abs(scene.at(t, s, kFeatX) - x0);
        if (d + 1e-12 < prev) {
          monotone = false;
          break;
        }
        prev = d;
      }
      if (monotone && prev >= kDriftSignature) scan.lateral_drift = true;
    }

    for (int t1 = 0; t1 < kSceneFrames && !scan.abrupt_lane_change; ++t1) {
      for (int t2 = t1 + 1; t2 < std::min(kSceneFrames, t1 + static_cast<int>(kLaneChangeWindow) + 1); ++t2) {
        if (std::abs(scene.at(t2, s, kFeatX) - scene.at(t1, s, kFeatX)) >= kLaneWidth) {
          scan.abrupt_lane_change = true;
          break;
        }
      }
    }
  }

  // Follow instability: relative speed of the front pair alternates sign with
  // hysteresis, so noise hovering near zero does not count.
  if (scene.present[static_cast<int>(RoleSlot::Front)]) {
    int sign = 0;
    int alternations = 0;
    for (int t = 0; t < kSceneFrames; ++t) {
      const double dv = scene.at(t, static_cast<int>(RoleSlot::Front), kFeatV) -
                        scene.at(t, static_cast<int>(RoleSlot::Ego), kFeatV);
      int s = 0;
      if (dv > kDeltaVHysteresis) s = 1;
      else if (dv < -kDeltaVHysteresis) s = -1;
      if (s != 0) {
        if (sign != 0 && s != sign) ++alternations;
        sign = s;
      }
    }
    if (alternations >= kAlternationSignature) scan.follow_instability = true;
  }

  return scan;
}

void save_labels_jsonl(const std::filesystem::path& path, std::span<const GroundTruthLabel> labels) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write labels file: " + path.string());
  for (const auto& label : labels) {
    nlohmann::ordered_json j;
    j["scene_id"] = label.scene_id;
    j["is_anomaly"] = label.is_anomaly;
    j["kind"] = to_string(label.kind);
    j["onset_frame"] = label.onset_frame;
    out << j.dump() << '\n';
  }
}

std::vector<GroundTruthLabel> load_labels_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open labels file: " + path.string());
  std::vector<GroundTruthLabel> labels;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    GroundTruthLabel label;
    label.scene_id = j.at("scene_id").get<std::string>();
    label.is_anomaly = j.at("is_anomaly").get<bool>();
    label.kind = anomaly_kind_from_string(j.at("kind").get<std::string>());
    label.onset_frame = j.at("onset_frame").get<int>();
    if ((label.kind == AnomalyKind::None) == label.is_anomaly) {
      throw Error("label record for " + label.scene_id + ": kind/is_anomaly mismatch");
    }
    labels.push_back(std::move(label));
  }
  return labels;
}

}  // namespace scenewatch
