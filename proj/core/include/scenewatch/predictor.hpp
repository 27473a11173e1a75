#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "scenewatch/scene.hpp"

namespace scenewatch {

inline constexpr int kEncodeSteps = 25;
inline constexpr int kPredictSteps = 25;

// Hyperparameters of the sequence-to-sequence predictor. The desk-scale
// defaults train in seconds; d_model 256 reproduces the full-size setup.
struct PredictorConfig {
  int t_enc = kEncodeSteps;
  int t_pred = kPredictSteps;
  int t_label = 11;   // trailing history frames fed as decoder context
  int d_model = 32;
  int n_layers = 2;
  int n_heads = 2;
  int d_ff = 64;
  double lambda_pos = 1.0;
  double lambda_vel = 0.5;
  double lr = 1e-3;
  int lr_step = 20;
  double lr_gamma = 0.1;
  double weight_decay = 0.01;
  int batch = 32;
  int max_epochs = 100;
  int patience = 10;
  std::uint64_t seed = 0;

  void validate() const;
};

// Predicted vs actual future (x, y, v) per role slot, in the ego frame and
// physical units. Absent slots are zero-filled and excluded everywhere.
struct PredictionResult {
  std::string scene_id;
  int horizon = kPredictSteps;
  std::array<bool, kRoleSlots> present{};
  std::vector<double> predicted;  // horizon x 7 x 3, row-major
  std::vector<double> actual;

  double& pred_at(int t, int slot, int feat) {
    return predicted[static_cast<std::size_t>((t * kRoleSlots + slot) * kFeatures + feat)];
  }
  double pred_at(int t, int slot, int feat) const {
    return predicted[static_cast<std::size_t>((t * kRoleSlots + slot) * kFeatures + feat)];
  }
  double& actual_at(int t, int slot, int feat) {
    return actual[static_cast<std::size_t>((t * kRoleSlots + slot) * kFeatures + feat)];
  }
  double actual_at(int t, int slot, int feat) const {
    return actual[static_cast<std::size_t>((t * kRoleSlots + slot) * kFeatures + feat)];
  }

  static PredictionResult empty(const std::string& scene_id, int horizon,
                                const std::array<bool, kRoleSlots>& present);
};

// Constant-velocity baseline: extrapolates each present agent from its last
// observed position with the mean per-step velocity of its last five observed
// frames; predicted speed is held at the last observed value.
PredictionResult predict_cv(const SceneTensor& scene);

// Weighted MSE over future positions and speeds, averaged over present
// agent-timesteps: lambda_pos*((dx)^2+(dy)^2) + lambda_vel*(dv)^2.
// Throws ShapeMismatchError.
double loss(const PredictionResult& pred, const PredictorConfig& cfg);

struct DisplacementErrors {
  double ade = 0.0;
  double fde = 0.0;
};

// Average / final displacement error over present agents; throws
// EmptyInputError on an empty collection.
DisplacementErrors evaluate_ade_fde(std::span<const PredictionResult> preds);

// Predictions store: one JSON object per line,
//   {"scene_id", "present": [7 bools], "predicted": [25][7][3], "actual": ...}
void save_predictions_jsonl(const std::filesystem::path& path,
                            std::span<const PredictionResult> preds);
std::vector<PredictionResult> load_predictions_jsonl(const std::filesystem::path& path);

}  // namespace scenewatch
