#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "scenewatch/scene.hpp"

namespace scenewatch {

// Scene store: one JSON object per line,
//   {"scene_id", "frame0", "ego_id", "present": [7 bools], "values": [50][7][3]}
// Numbers are written in shortest round-trip form (full double precision).
std::string scene_to_json_line(const SceneTensor& scene);
SceneTensor scene_from_json_line(const std::string& line);

void save_scenes_jsonl(const std::filesystem::path& path, std::span<const SceneTensor> scenes);
std::vector<SceneTensor> load_scenes_jsonl(const std::filesystem::path& path);

}  // namespace scenewatch
