#include "scenewatch/scene.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "scenewatch/errors.hpp"
#include "scenewatch/rng.hpp"

namespace scenewatch {

const char* to_string(RoleSlot slot) {
  switch (slot) {
    case RoleSlot::Ego: return "ego";
    case RoleSlot::Front: return "front";
    case RoleSlot::Rear: return "rear";
    case RoleSlot::FrontLeft: return "front_left";
    case RoleSlot::FrontRight: return "front_right";
    case RoleSlot::RearLeft: return "rear_left";
    case RoleSlot::RearRight: return "rear_right";
  }
  return "?";
}

void SceneTensor::validate() const {
  if (!present[static_cast<int>(RoleSlot::Ego)]) {
    throw Error("scene " + scene_id + ": ego slot must be present");
  }
  for (int t = 0; t < kSceneFrames; ++t) {
    for (int s = 0; s < kRoleSlots; ++s) {
      for (int f = 0; f < kFeatures; ++f) {
        const double v = at(t, s, f);
        if (present[s]) {
          if (!std::isfinite(v)) {
            throw Error("scene " + scene_id + ": non-finite value in present slot");
          }
        } else if (v != 0.0) {
          throw Error("scene " + scene_id + ": absent slot holds nonzero value");
        }
      }
    }
  }
}

void SplitSpec::validate() const {
  if (train_fraction < 0 || val_fraction < 0 || test_fraction < 0) {
    throw Error("split fractions must be non-negative");
  }
  const double sum = train_fraction + val_fraction + test_fraction;
  if (std::abs(sum - 1.0) > 1e-9) {
    throw Error("split fractions must sum to 1");
  }
}

SceneTensor to_ego_frame(const std::string& scene_id, const std::string& ego_vehicle_id,
                         std::int64_t source_frame0, std::span<const RawAgentTrack> agents) {
  const RawAgentTrack* ego = nullptr;
  for (const auto& agent : agents) {
    if (agent.slot == RoleSlot::Ego) ego = &agent;
  }
  if (ego == nullptr) throw MissingEgoError("no ego track in scene " + scene_id);

  for (const auto& agent : agents) {
    if (agent.points.size() != static_cast<std::size_t>(kSceneFrames)) {
      throw LengthMismatchError("track for slot " + std::string(to_string(agent.slot)) +
                                " has " + std::to_string(agent.points.size()) +
                                " frames, expected " + std::to_string(kSceneFrames));
    }
  }

  const double x0 = ego->points.front().x;
  const double y0 = ego->points.front().y;

  SceneTensor scene;
  scene.scene_id = scene_id;
  scene.ego_vehicle_id = ego_vehicle_id;
  scene.source_frame0 = source_frame0;
  for (const auto& agent : agents) {
    const int s = static_cast<int>(agent.slot);
    scene.present[s] = true;
    for (int t = 0; t < kSceneFrames; ++t) {
      scene.at(t, s, kFeatX) = agent.points[t].x - x0;
      scene.at(t, s, kFeatY) = agent.points[t].y - y0;
      scene.at(t, s, kFeatV) = agent.points[t].v;
    }
  }
  return scene;
}

NormStats fit_norm(std::span<const SceneTensor> scenes) {
  // Two accumulator passes over present entries; population (1/N) std.
  std::array<double, kFeatures> sum{};
  std::size_t count = 0;
  for (const auto& scene : scenes) {
    for (int s = 0; s < kRoleSlots; ++s) {
      if (!scene.present[s]) continue;
      for (int t = 0; t < kSceneFrames; ++t) {
        for (int f = 0; f < kFeatures; ++f) sum[f] += scene.at(t, s, f);
        ++count;
      }
    }
  }
  if (count == 0) throw EmptyInputError("fit_norm: no present agent-timesteps");

  NormStats stats;
  for (int f = 0; f < kFeatures; ++f) stats.mean[f] = sum[f] / static_cast<double>(count);

  std::array<double, kFeatures> ss{};
  for (const auto& scene : scenes) {
    for (int s = 0; s < kRoleSlots; ++s) {
      if (!scene.present[s]) continue;
      for (int t = 0; t < kSceneFrames; ++t) {
        for (int f = 0; f < kFeatures; ++f) {
          const double d = scene.at(t, s, f) - stats.mean[f];
          ss[f] += d * d;
        }
      }
    }
  }
  for (int f = 0; f < kFeatures; ++f) {
    const double sd = std::sqrt(ss[f] / static_cast<double>(count));
    stats.stddev[f] = sd > 0.0 ? sd : 1.0;
  }
  return stats;
}

SceneTensor apply_norm(const SceneTensor& scene, const NormStats& stats) {
  SceneTensor out = scene;
  for (int s = 0; s < kRoleSlots; ++s) {
    if (!out.present[s]) continue;
    for (int t = 0; t < kSceneFrames; ++t) {
      for (int f = 0; f < kFeatures; ++f) {
        out.at(t, s, f) = (scene.at(t, s, f) - stats.mean[f]) / stats.stddev[f];
      }
    }
  }
  return out;
}

SceneTensor invert_norm(const SceneTensor& scene, const NormStats& stats) {
  SceneTensor out = scene;
  for (int s = 0; s < kRoleSlots; ++s) {
    if (!out.present[s]) continue;
    for (int t = 0; t < kSceneFrames; ++t) {
      for (int f = 0; f < kFeatures; ++f) {
        out.at(t, s, f) = scene.at(t, s, f) * stats.stddev[f] + stats.mean[f];
      }
    }
  }
  return out;
}

SplitResult split(std::span<const SceneTensor> scenes, const SplitSpec& spec) {
  spec.validate();

  // Group scene indices by ego vehicle so no ego leaks across parts.
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    groups[scenes[i].ego_vehicle_id].push_back(i);
  }
  std::vector<std::string> egos;
  egos.reserve(groups.size());
  for (const auto& [ego, _] : groups) egos.push_back(ego);

  Rng rng(derive_seed(spec.seed, "scene-split"));
  rng.shuffle(egos);

  const double total = static_cast<double>(scenes.size());
  const double t1 = spec.train_fraction * total;
  const double t2 = (spec.train_fraction + spec.val_fraction) * total;

  SplitResult result;
  std::size_t assigned = 0;
  for (const auto& ego : egos) {
    auto& part = (static_cast<double>(assigned) < t1)   ? result.train
                 : (static_cast<double>(assigned) < t2) ? result.val
                                                        : result.test;
    for (std::size_t idx : groups[ego]) part.push_back(scenes[idx]);
    assigned += groups[ego].size();
  }
  return result;
}

}  // namespace scenewatch
