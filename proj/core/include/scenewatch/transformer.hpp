#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "scenewatch/nn.hpp"
#include "scenewatch/predictor.hpp"

namespace scenewatch {

struct TrainLog {
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_loss;
  int stopped_epoch = 0;  // number of epochs actually run
  double best_val = 0.0;
};

// Sequence-to-sequence multi-agent predictor. The encoder self-attends over
// the 25 history steps (each step the 21-vector of all slots, absent slots
// zeroed); the decoder consumes the last t_label embedded history frames plus
// t_pred learned placeholder queries under learned positional embeddings,
// with self-attention and cross-attention into the encoder output; a linear
// head emits the 25 x 7 x 3 future block in one shot.
class TransformerPredictor {
 public:
  TransformerPredictor(const PredictorConfig& config, const NormStats& norm);

  const PredictorConfig& config() const { return config_; }
  const NormStats& norm() const { return norm_; }

  // Named parameter tensors in registration order.
  std::span<const std::pair<std::string, nn::NodePtr>> parameters() const { return params_; }

  // Mean training loss over the given pre-normalized scenes (forward only).
  double loss_value(std::span<const SceneTensor> normalized_scenes) const;
  // Same, but accumulates gradients into the parameter nodes (grads are
  // zeroed first). Used by the optimizer and by gradient checks.
  double loss_and_gradients(std::span<const SceneTensor> normalized_scenes);

  // Inference on a raw physical-units scene; normalization and
  // denormalization happen inside.
  PredictionResult predict(const SceneTensor& raw_scene) const;
  std::vector<PredictionResult> predict_all(std::span<const SceneTensor> raw_scenes,
                                            int threads = 1) const;

  // Versioned binary of named parameter tensors with shapes.
  void save(const std::filesystem::path& path) const;
  static TransformerPredictor load(const std::filesystem::path& path);

 private:
  friend std::pair<TransformerPredictor, TrainLog> train_transformer(
      std::span<const SceneTensor>, std::span<const SceneTensor>, const PredictorConfig&,
      const NormStats&);

  nn::NodePtr forward(nn::Graph& g, const SceneTensor& normalized) const;
  nn::NodePtr scene_loss(nn::Graph& g, const SceneTensor& normalized) const;

  nn::NodePtr param(const std::string& name) const;

  PredictorConfig config_;
  NormStats norm_;
  std::vector<std::pair<std::string, nn::NodePtr>> params_;
  std::map<std::string, std::size_t> param_index_;
  Eigen::MatrixXd encoder_pos_;  // fixed sinusoidal positional encoding
};

// AdamW with StepLR decay and early stopping on validation loss; training is
// bit-reproducible for a fixed config seed. Scenes must be pre-normalized.
// Throws NonFiniteLossError if a batch loss stops being finite.
std::pair<TransformerPredictor, TrainLog> train_transformer(
    std::span<const SceneTensor> train_normalized, std::span<const SceneTensor> val_normalized,
    const PredictorConfig& config, const NormStats& norm);

}  // namespace scenewatch
