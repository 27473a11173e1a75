#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "scenewatch/cluster.hpp"
#include "scenewatch/eval.hpp"
#include "scenewatch/ingest.hpp"
#include "scenewatch/predictor.hpp"
#include "scenewatch/residual.hpp"
#include "scenewatch/synth.hpp"

namespace scenewatch {

inline constexpr const char* kToolVersion = "0.1.0";

enum class InputMode { Synth, Scenes, Csv };
enum class PredictorKind { Cv, Transformer };

// Full configuration of an end-to-end run. One root seed feeds every
// stochastic stage through named derivation; no stage draws ambient entropy.
struct PipelineConfig {
  std::uint64_t seed = 7;
  int threads = 1;

  InputMode input_mode = InputMode::Synth;
  SynthConfig synth;                    // Synth mode
  std::filesystem::path scenes_path;    // Scenes mode
  std::filesystem::path labels_path;    // Scenes mode, optional
  std::filesystem::path csv_path;       // Csv mode
  Unit csv_unit = Unit::Meters;
  SceneBuildOptions build;

  PredictorKind predictor = PredictorKind::Cv;
  std::filesystem::path model_path;  // optional pre-trained transformer
  PredictorConfig train_cfg;
  SplitSpec split;

  ResidualWeights weights;
  std::vector<std::string> aggregators = {"max", "mean", "q95", "topk"};
  int topk_k = 5;

  std::vector<double> contaminations = {0.10, 0.15, 0.20};
  ForestConfig forest;
  bool refit_per_level = true;
  double tau_min = 0.95;
  double selected_contamination = 0.15;

  BaselineOptions baseline;
  ProxyOptions proxy_options;
  ClusterOptions cluster;

  static PipelineConfig from_json_text(const std::string& text);
  static PipelineConfig from_json_file(const std::filesystem::path& path);
  std::string to_json_text() const;

  EvalOptions eval_options() const;
};

struct StageRecord {
  std::string name;
  std::map<std::string, std::string> inputs;   // relative path -> sha256
  std::map<std::string, std::string> outputs;
  double wall_ms = 0.0;
};

struct RunManifest {
  std::string tool_version = kToolVersion;
  std::string config_json;
  std::vector<StageRecord> stages;

  std::string to_json_text() const;
};

// Executes ingest/synth -> (train) -> predict -> score -> proxies ->
// evaluate -> cluster -> report, persisting every intermediate into out_dir.
// A failure in stage k leaves the outputs of stages < k on disk and raises
// StageFailureError naming the stage.
RunManifest run_pipeline(const PipelineConfig& config, const std::filesystem::path& out_dir);

}  // namespace scenewatch
