#include "scenewatch/scene_io.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "scenewatch/errors.hpp"

namespace scenewatch {

using ordered_json = nlohmann::ordered_json;

std::string scene_to_json_line(const SceneTensor& scene) {
  ordered_json j;
  j["scene_id"] = scene.scene_id;
  j["frame0"] = scene.source_frame0;
  j["ego_id"] = scene.ego_vehicle_id;
  j["present"] = scene.present;
  auto values = ordered_json::array();
  for (int t = 0; t < kSceneFrames; ++t) {
    auto step = ordered_json::array();
    for (int s = 0; s < kRoleSlots; ++s) {
      step.push_back(ordered_json::array(
          {scene.at(t, s, kFeatX), scene.at(t, s, kFeatY), scene.at(t, s, kFeatV)}));
    }
    values.push_back(std::move(step));
  }
  j["values"] = std::move(values);
  return j.dump();
}

SceneTensor scene_from_json_line(const std::string& line) {
  const auto j = ordered_json::parse(line);
  SceneTensor scene;
  scene.scene_id = j.at("scene_id").get<std::string>();
  scene.source_frame0 = j.at("frame0").get<std::int64_t>();
  scene.ego_vehicle_id = j.at("ego_id").get<std::string>();
  const auto& present = j.at("present");
  if (present.size() != kRoleSlots) throw Error("scene record: present mask must have 7 entries");
  for (int s = 0; s < kRoleSlots; ++s) scene.present[s] = present[s].get<bool>();
  const auto& values = j.at("values");
  if (values.size() != kSceneFrames) throw Error("scene record: values must have 50 steps");
  for (int t = 0; t < kSceneFrames; ++t) {
    const auto& step = values[t];
    if (step.size() != kRoleSlots) throw Error("scene record: step must have 7 slots");
    for (int s = 0; s < kRoleSlots; ++s) {
      const auto& feats = step[s];
      if (feats.size() != kFeatures) throw Error("scene record: slot must have 3 features");
      for (int f = 0; f < kFeatures; ++f) scene.at(t, s, f) = feats[f].get<double>();
    }
  }
  scene.validate();
  return scene;
}

void save_scenes_jsonl(const std::filesystem::path& path, std::span<const SceneTensor> scenes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write scenes file: " + path.string());
  for (const auto& scene : scenes) out << scene_to_json_line(scene) << '\n';
}

std::vector<SceneTensor> load_scenes_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open scenes file: " + path.string());
  std::vector<SceneTensor> scenes;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    scenes.push_back(scene_from_json_line(line));
  }
  return scenes;
}

}  // namespace scenewatch
