#include "scenewatch/predictor.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "scenewatch/errors.hpp"

namespace scenewatch {

void PredictorConfig::validate() const {
  if (t_enc + t_pred != kSceneFrames) throw Error("predictor: t_enc + t_pred must equal 50");
  if (t_label < 1 || t_label > t_enc) throw Error("predictor: t_label must lie in [1, t_enc]");
  if (lambda_pos < 0 || lambda_vel < 0) throw Error("predictor: lambda weights must be >= 0");
  if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0) {
    throw Error("predictor: d_model must be divisible by n_heads");
  }
  if (n_layers < 1 || d_ff < 1 || batch < 1 || max_epochs < 1 || patience < 0) {
    throw Error("predictor: invalid training configuration");
  }
}

PredictionResult PredictionResult::empty(const std::string& scene_id, int horizon,
                                         const std::array<bool, kRoleSlots>& present) {
  PredictionResult out;
  out.scene_id = scene_id;
  out.horizon = horizon;
  out.present = present;
  out.predicted.assign(static_cast<std::size_t>(horizon) * kRoleSlots * kFeatures, 0.0);
  out.actual.assign(static_cast<std::size_t>(horizon) * kRoleSlots * kFeatures, 0.0);
  return out;
}

PredictionResult predict_cv(const SceneTensor& scene) {
  constexpr int kVelWindow = 5;
  auto result = PredictionResult::empty(scene.scene_id, kPredictSteps, scene.present);
  const int last = kEncodeSteps - 1;

  for (int s = 0; s < kRoleSlots; ++s) {
    if (!scene.present[s]) continue;
    // Mean per-step velocity over the last five observed frames (four
    // consecutive deltas telescope to this difference).
    const double step_vx =
        (scene.at(last, s, kFeatX) - scene.at(last - kVelWindow + 1, s, kFeatX)) / (kVelWindow - 1);
    const double step_vy =
        (scene.at(last, s, kFeatY) - scene.at(last - kVelWindow + 1, s, kFeatY)) / (kVelWindow - 1);
    const double x0 = scene.at(last, s, kFeatX);
    const double y0 = scene.at(last, s, kFeatY);
    const double v_hold = scene.at(last, s, kFeatV);

    for (int t = 0; t < kPredictSteps; ++t) {
      result.pred_at(t, s, kFeatX) = x0 + step_vx * (t + 1);
      result.pred_at(t, s, kFeatY) = y0 + step_vy * (t + 1);
      result.pred_at(t, s, kFeatV) = v_hold;
      result.actual_at(t, s, kFeatX) = scene.at(kEncodeSteps + t, s, kFeatX);
      result.actual_at(t, s, kFeatY) = scene.at(kEncodeSteps + t, s, kFeatY);
      result.actual_at(t, s, kFeatV) = scene.at(kEncodeSteps + t, s, kFeatV);
    }
  }
  return result;
}

double loss(const PredictionResult& pred, const PredictorConfig& cfg) {
  if (pred.predicted.size() != pred.actual.size() ||
      pred.predicted.size() !=
          static_cast<std::size_t>(pred.horizon) * kRoleSlots * kFeatures) {
    throw ShapeMismatchError("loss: predicted/actual shapes differ");
  }
  double total = 0.0;
  std::size_t count = 0;
  for (int t = 0; t < pred.horizon; ++t) {
    for (int s = 0; s < kRoleSlots; ++s) {
      if (!pred.present[s]) continue;
      const double dx = pred.pred_at(t, s, kFeatX) - pred.actual_at(t, s, kFeatX);
      const double dy = pred.pred_at(t, s, kFeatY) - pred.actual_at(t, s, kFeatY);
      const double dv = pred.pred_at(t, s, kFeatV) - pred.actual_at(t, s, kFeatV);
      total += cfg.lambda_pos * (dx * dx + dy * dy) + cfg.lambda_vel * dv * dv;
      ++count;
    }
  }
  if (count == 0) return 0.0;
  return total / static_cast<double>(count);
}

DisplacementErrors evaluate_ade_fde(std::span<const PredictionResult> preds) {
  if (preds.empty()) throw EmptyInputError("evaluate_ade_fde: no predictions");
  double ade_sum = 0.0, fde_sum = 0.0;
  std::size_t ade_count = 0, fde_count = 0;
  for (const auto& pred : preds) {
    for (int s = 0; s < kRoleSlots; ++s) {
      if (!pred.present[s]) continue;
      for (int t = 0; t < pred.horizon; ++t) {
        const double dx = pred.pred_at(t, s, kFeatX) - pred.actual_at(t, s, kFeatX);
        const double dy = pred.pred_at(t, s, kFeatY) - pred.actual_at(t, s, kFeatY);
        const double d = std::hypot(dx, dy);
        ade_sum += d;
        ++ade_count;
        if (t == pred.horizon - 1) {
          fde_sum += d;
          ++fde_count;
        }
      }
    }
  }
  if (ade_count == 0) throw EmptyInputError("evaluate_ade_fde: no present agents");
  return {ade_sum / static_cast<double>(ade_count), fde_sum / static_cast<double>(fde_count)};
}

namespace {

nlohmann::ordered_json tensor_to_json(const std::vector<double>& values, int horizon) {
  auto out = nlohmann::ordered_json::array();
  std::size_t i = 0;
  for (int t = 0; t < horizon; ++t) {
    auto step = nlohmann::ordered_json::array();
    for (int s = 0; s < kRoleSlots; ++s) {
      auto feats = nlohmann::ordered_json::array();
      for (int f = 0; f < kFeatures; ++f) feats.push_back(values[i++]);
      step.push_back(std::move(feats));
    }
    out.push_back(std::move(step));
  }
  return out;
}

void tensor_from_json(const nlohmann::json& j, int horizon, std::vector<double>& values) {
  if (j.size() != static_cast<std::size_t>(horizon)) {
    throw Error("prediction record: wrong horizon length");
  }
  values.clear();
  values.reserve(static_cast<std::size_t>(horizon) * kRoleSlots * kFeatures);
  for (const auto& step : j) {
    if (step.size() != kRoleSlots) throw Error("prediction record: step must have 7 slots");
    for (const auto& feats : step) {
      if (feats.size() != kFeatures) throw Error("prediction record: slot must have 3 features");
      for (const auto& v : feats) values.push_back(v.get<double>());
    }
  }
}

}  // namespace

void save_predictions_jsonl(const std::filesystem::path& path,
                            std::span<const PredictionResult> preds) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write predictions file: " + path.string());
  for (const auto& pred : preds) {
    nlohmann::ordered_json j;
    j["scene_id"] = pred.scene_id;
    j["present"] = pred.present;
    j["predicted"] = tensor_to_json(pred.predicted, pred.horizon);
    j["actual"] = tensor_to_json(pred.actual, pred.horizon);
    out << j.dump() << '\n';
  }
}

std::vector<PredictionResult> load_predictions_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open predictions file: " + path.string());
  std::vector<PredictionResult> preds;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    PredictionResult pred;
    pred.scene_id = j.at("scene_id").get<std::string>();
    const auto& present = j.at("present");
    if (present.size() != kRoleSlots) throw Error("prediction record: present mask must have 7 entries");
    for (int s = 0; s < kRoleSlots; ++s) pred.present[s] = present[s].get<bool>();
    pred.horizon = static_cast<int>(j.at("predicted").size());
    tensor_from_json(j.at("predicted"), pred.horizon, pred.predicted);
    tensor_from_json(j.at("actual"), pred.horizon, pred.actual);
    preds.push_back(std::move(pred));
  }
  return preds;
}

}  // namespace scenewatch
