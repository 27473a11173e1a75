#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <string>
#include <vector>

#include "scenewatch/scene.hpp"

namespace scenewatch {

enum class Unit { Feet, Meters };

inline constexpr double kFeetToMeters = 0.3048;

// One trajectory CSV row after unit conversion.
struct CsvRow {
  std::int64_t vehicle_id = 0;
  std::int64_t frame_id = 0;
  double local_x = 0.0;  // m, lateral
  double local_y = 0.0;  // m, longitudinal
  double v_vel = 0.0;    // m/s
  double v_acc = 0.0;    // m/s^2
  int lane_id = 0;
  std::int64_t preceding_id = 0;
  std::int64_t following_id = 0;
};

struct VehicleTrack {
  std::int64_t vehicle_id = 0;
  std::vector<TrackPoint> points;  // sorted by frame, strictly increasing
};

struct FilterReport {
  std::int64_t scenes_kept = 0;
  std::int64_t dropped_jump = 0;
  std::int64_t dropped_stationary = 0;
  std::int64_t dropped_incomplete = 0;

  std::int64_t candidates() const {
    return scenes_kept + dropped_jump + dropped_stationary + dropped_incomplete;
  }
};

struct SceneBuildOptions {
  int window = kSceneFrames;
  int stride = kSceneFrames;        // non-overlapping by default
  double jump_threshold = 10.0;      // m between consecutive frames
  double stationary_eps = 0.5;       // m total path length over the window
};

// Parses an NGSIM-style trajectory CSV (header row required; columns matched
// by name, extra columns ignored) into per-vehicle tracks sorted by frame.
// Feet are converted to meters when unit == Feet. Throws MalformedRowError /
// NonMonotoneFramesError.
std::vector<VehicleTrack> parse_csv(const std::filesystem::path& path, Unit unit);
std::vector<VehicleTrack> parse_csv(std::istream& in, Unit unit);

// Builds ego-centric scenes: every vehicle takes a turn as ego; for each
// stride-aligned 50-frame window fully covered by the ego, neighbor slots are
// resolved at the window midpoint (same lane -> front/rear, lane +-1 ->
// diagonal slots, nearest longitudinal distance, ties to the smaller vehicle
// id; lane ids grow to the right). Neighbors covering only part of the window
// are masked absent. Scenes failing the jump or stationary filter are counted
// in the report and not emitted.
struct SceneBuildResult {
  std::vector<SceneTensor> scenes;
  FilterReport report;
};

SceneBuildResult build_scenes(const std::vector<VehicleTrack>& tracks,
                              const SceneBuildOptions& options = {});

std::string filter_report_to_json(const FilterReport& report);

}  // namespace scenewatch
