#include "scenewatch/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

#include "scenewatch/errors.hpp"
#include "scenewatch/util.hpp"

namespace scenewatch {

namespace {

std::string normalize_header(std::string name) {
  std::string out;
  for (char c : name) {
    if (c == '\r' || c == ' ') continue;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

struct ColumnMap {
  int vehicle_id = -1;
  int frame_id = -1;
  int local_x = -1;
  int local_y = -1;
  int v_vel = -1;
  int v_acc = -1;
  int lane_id = -1;
  int preceding = -1;
  int following = -1;
};

ColumnMap map_columns(const std::vector<std::string>& header) {
  ColumnMap cols;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const std::string name = normalize_header(header[i]);
    const int idx = static_cast<int>(i);
    if (name == "vehicle_id") cols.vehicle_id = idx;
    else if (name == "frame_id") cols.frame_id = idx;
    else if (name == "local_x") cols.local_x = idx;
    else if (name == "local_y") cols.local_y = idx;
    else if (name == "v_vel") cols.v_vel = idx;
    else if (name == "v_acc") cols.v_acc = idx;
    else if (name == "lane_id") cols.lane_id = idx;
    else if (name == "preceding" || name == "preceding_id") cols.preceding = idx;
    else if (name == "following" || name == "following_id") cols.following = idx;
  }
  if (cols.vehicle_id < 0 || cols.frame_id < 0 || cols.local_x < 0 || cols.local_y < 0 ||
      cols.v_vel < 0 || cols.lane_id < 0) {
    throw MalformedRowError(1,
                            "header must name vehicle_id, frame_id, local_x, local_y, "
                            "v_vel, lane_id");
  }
  return cols;
}

double parse_field(const std::vector<std::string>& fields, int idx, std::size_t line) {
  if (idx < 0 || static_cast<std::size_t>(idx) >= fields.size()) {
    throw MalformedRowError(line, "missing column " + std::to_string(idx));
  }
  try {
    return parse_double(fields[static_cast<std::size_t>(idx)]);
  } catch (const std::exception& e) {
    throw MalformedRowError(line, e.what());
  }
}

}  // namespace

std::vector<VehicleTrack> parse_csv(const std::filesystem::path& path, Unit unit) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open csv file: " + path.string());
  return parse_csv(in, unit);
}

std::vector<VehicleTrack> parse_csv(std::istream& in, Unit unit) {
  std::string line;
  if (!std::getline(in, line)) throw MalformedRowError(1, "missing header row");
  const ColumnMap cols = map_columns(split_csv_line(line));
  const double scale = unit == Unit::Feet ? kFeetToMeters : 1.0;

  std::unordered_map<std::int64_t, std::vector<TrackPoint>> by_vehicle;
  std::size_t line_number = 1;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    const auto vehicle = static_cast<std::int64_t>(parse_field(fields, cols.vehicle_id, line_number));
    TrackPoint p;
    p.frame_index = static_cast<std::int64_t>(parse_field(fields, cols.frame_id, line_number));
    if (p.frame_index < 0) throw MalformedRowError(line_number, "negative frame id");
    p.x = parse_field(fields, cols.local_x, line_number) * scale;
    p.y = parse_field(fields, cols.local_y, line_number) * scale;
    p.v = parse_field(fields, cols.v_vel, line_number) * scale;
    if (p.v < 0) throw MalformedRowError(line_number, "negative speed");
    if (cols.v_acc >= 0) p.a = parse_field(fields, cols.v_acc, line_number) * scale;
    p.lane_id = static_cast<int>(parse_field(fields, cols.lane_id, line_number));
    by_vehicle[vehicle].push_back(p);
  }

  std::vector<VehicleTrack> tracks;
  tracks.reserve(by_vehicle.size());
  for (auto& [vehicle, points] : by_vehicle) {
    std::sort(points.begin(), points.end(),
              [](const TrackPoint& a, const TrackPoint& b) { return a.frame_index < b.frame_index; });
    for (std::size_t i = 1; i < points.size(); ++i) {
      if (points[i].frame_index == points[i - 1].frame_index) {
        throw NonMonotoneFramesError(std::to_string(vehicle));
      }
    }
    tracks.push_back({vehicle, std::move(points)});
  }
  std::sort(tracks.begin(), tracks.end(),
            [](const VehicleTrack& a, const VehicleTrack& b) { return a.vehicle_id < b.vehicle_id; });
  return tracks;
}

namespace {

struct IndexedTrack {
  const VehicleTrack* track = nullptr;
  std::int64_t first_frame = 0;
  std::int64_t last_frame = 0;
  std::unordered_map<std::int64_t, std::size_t> frame_to_idx;

  bool covers(std::int64_t frame0, int window) const {
    if (frame0 < first_frame || frame0 + window - 1 > last_frame) return false;
    for (int t = 0; t < window; ++t) {
      if (!frame_to_idx.contains(frame0 + t)) return false;
    }
    return true;
  }

  const TrackPoint& at_frame(std::int64_t frame) const {
    return track->points[frame_to_idx.at(frame)];
  }
};

bool has_jump(std::span<const TrackPoint> points, double threshold) {
  for (std::size_t i = 1; i < points.size(); ++i) {
    const double dx = points[i].x - points[i - 1].x;
    const double dy = points[i].y - points[i - 1].y;
    if (std::hypot(dx, dy) > threshold) return true;
  }
  return false;
}

double path_length(std::span<const TrackPoint> points) {
  double total = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    total += std::hypot(points[i].x - points[i - 1].x, points[i].y - points[i - 1].y);
  }
  return total;
}

}  // namespace

SceneBuildResult build_scenes(const std::vector<VehicleTrack>& tracks,
                              const SceneBuildOptions& options) {
  SceneBuildResult result;
  const int window = options.window;

  std::vector<IndexedTrack> indexed(tracks.size());
  for (std::size_t i = 0; i < tracks.size(); ++i) {
    indexed[i].track = &tracks[i];
    if (tracks[i].points.empty()) continue;
    indexed[i].first_frame = tracks[i].points.front().frame_index;
    indexed[i].last_frame = tracks[i].points.back().frame_index;
    for (std::size_t k = 0; k < tracks[i].points.size(); ++k) {
      indexed[i].frame_to_idx.emplace(tracks[i].points[k].frame_index, k);
    }
  }

  for (std::size_t ei = 0; ei < indexed.size(); ++ei) {
    const auto& ego = indexed[ei];
    if (ego.track->points.empty()) continue;
    for (std::int64_t frame0 = ego.first_frame; frame0 + window - 1 <= ego.last_frame;
         frame0 += options.stride) {
      if (!ego.covers(frame0, window)) {
        ++result.report.dropped_incomplete;
        continue;
      }
      const std::int64_t mid = frame0 + window / 2;
      const TrackPoint& ego_mid = ego.at_frame(mid);
      if (!ego_mid.lane_id.has_value()) {
        ++result.report.dropped_incomplete;
        continue;
      }
      const int ego_lane = *ego_mid.lane_id;

      // Nearest candidate per slot; ties to the smaller vehicle id. Vehicle
      // order is sorted by id, so the first strictly-nearer candidate wins.
      struct Candidate {
        std::size_t track_index;
        double abs_dy;
      };
      std::array<std::optional<Candidate>, kRoleSlots> slot_pick;
      for (std::size_t ci = 0; ci < indexed.size(); ++ci) {
        if (ci == ei) continue;
        const auto& cand = indexed[ci];
        if (!cand.covers(frame0, window)) continue;
        const TrackPoint& cand_mid = cand.at_frame(mid);
        if (!cand_mid.lane_id.has_value()) continue;
        const int lane_delta = *cand_mid.lane_id - ego_lane;
        if (lane_delta < -1 || lane_delta > 1) continue;
        const double dy = cand_mid.y - ego_mid.y;
        const bool ahead = dy > 0.0;
        RoleSlot slot;
        if (lane_delta == 0) slot = ahead ? RoleSlot::Front : RoleSlot::Rear;
        else if (lane_delta == -1) slot = ahead ? RoleSlot::FrontLeft : RoleSlot::RearLeft;
        else slot = ahead ? RoleSlot::FrontRight : RoleSlot::RearRight;
        auto& pick = slot_pick[static_cast<int>(slot)];
        if (!pick || std::abs(dy) < pick->abs_dy) pick = Candidate{ci, std::abs(dy)};
      }

      std::vector<RawAgentTrack> agents;
      auto window_points = [&](const IndexedTrack& it) {
        std::vector<TrackPoint> pts;
        pts.reserve(static_cast<std::size_t>(window));
        for (int t = 0; t < window; ++t) pts.push_back(it.at_frame(frame0 + t));
        return pts;
      };
      agents.push_back({RoleSlot::Ego, window_points(ego)});
      for (int s = 0; s < kRoleSlots; ++s) {
        if (slot_pick[s]) {
          agents.push_back({static_cast<RoleSlot>(s), window_points(indexed[slot_pick[s]->track_index])});
        }
      }

      bool jump = false;
      bool stationary = false;
      for (const auto& agent : agents) {
        if (has_jump(agent.points, options.jump_threshold)) jump = true;
        if (path_length(agent.points) < options.stationary_eps) stationary = true;
      }
      if (jump) {
        ++result.report.dropped_jump;
        continue;
      }
      if (stationary) {
        ++result.report.dropped_stationary;
        continue;
      }

      const std::string ego_id = std::to_string(ego.track->vehicle_id);
      result.scenes.push_back(
          to_ego_frame(ego_id + ":" + std::to_string(frame0), ego_id, frame0, agents));
      ++result.report.scenes_kept;
    }
  }
  return result;
}

std::string filter_report_to_json(const FilterReport& report) {
  nlohmann::ordered_json j;
  j["scenes_kept"] = report.scenes_kept;
  j["dropped_jump"] = report.dropped_jump;
  j["dropped_stationary"] = report.dropped_stationary;
  j["dropped_incomplete"] = report.dropped_incomplete;
  j["candidates"] = report.candidates();
  return j.dump(2) + "\n";
}

}  // namespace scenewatch
