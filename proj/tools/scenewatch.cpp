// scenewatch: label-free detection of safety-critical driving scenes from
// multi-agent trajectory data. Subcommands cover each pipeline stage plus an
// end-to-end `run`. Exit codes: 0 success, 1 usage error, 2 stage failure.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <set>

#include "scenewatch/cluster.hpp"
#include "scenewatch/errors.hpp"
#include "scenewatch/eval.hpp"
#include "scenewatch/ingest.hpp"
#include "scenewatch/pipeline.hpp"
#include "scenewatch/predictor.hpp"
#include "scenewatch/proxies.hpp"
#include "scenewatch/report.hpp"
#include "scenewatch/residual.hpp"
#include "scenewatch/rng.hpp"
#include "scenewatch/scene_io.hpp"
#include "scenewatch/synth.hpp"
#include "scenewatch/transformer.hpp"
#include "scenewatch/util.hpp"

namespace sw = scenewatch;

namespace {

struct GlobalOpts {
  std::uint64_t seed = 7;
  int threads = 1;
  std::string config_path;
};

sw::PredictorConfig load_predictor_config(const std::string& path, std::uint64_t seed) {
  sw::PredictorConfig cfg;
  if (!path.empty()) {
    const auto text = sw::read_text_file(path);
    sw::PipelineConfig full;
    // Reuse the pipeline parser for the predictor block.
    full = sw::PipelineConfig::from_json_text(text);
    cfg = full.train_cfg;
  }
  cfg.seed = seed;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scenewatch: prediction-residual anomaly mining for driving scenes"};
  app.require_subcommand(1);

  GlobalOpts global;
  app.add_option("--seed", global.seed, "root seed for every stochastic stage");
  app.add_option("--threads", global.threads, "worker threads for parallel stages");
  app.add_option("--config", global.config_path, "pipeline config JSON (run subcommand)");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "parse a trajectory CSV into ego-centric scenes");
  std::string ingest_csv, ingest_unit = "meters", ingest_out = "scenes.jsonl",
              ingest_report = "report.json";
  int ingest_stride = sw::kSceneFrames;
  ingest->add_option("--csv", ingest_csv, "NGSIM-style trajectory CSV")->required();
  ingest->add_option("--unit", ingest_unit, "feet|meters")->check(CLI::IsMember({"feet", "meters"}));
  ingest->add_option("--stride", ingest_stride, "window stride in frames");
  ingest->add_option("--out", ingest_out, "output scenes JSONL");
  ingest->add_option("--report", ingest_report, "filter report JSON");

  // synth
  auto* synth = app.add_subcommand("synth", "generate labeled synthetic scenes");
  int synth_n = 2000;
  double synth_frac = 0.1;
  std::string synth_out = "scenes.jsonl", synth_labels = "labels.jsonl";
  synth->add_option("--n", synth_n, "number of scenes");
  synth->add_option("--anomaly-frac", synth_frac, "fraction of injected anomalies");
  synth->add_option("--out", synth_out, "output scenes JSONL");
  synth->add_option("--labels", synth_labels, "output labels JSONL");

  // train
  auto* train = app.add_subcommand("train", "train the transformer predictor");
  std::string train_scenes, train_cfg_path, train_out = "model.bin", train_log = "train.csv";
  train->add_option("--scenes", train_scenes, "scenes JSONL")->required();
  train->add_option("--config", train_cfg_path, "predictor config JSON");
  train->add_option("--out", train_out, "output model file");
  train->add_option("--log", train_log, "per-epoch loss CSV");

  // predict
  auto* predict = app.add_subcommand("predict", "run a predictor over scenes");
  std::string predict_model, predict_scenes, predict_out = "preds.jsonl";
  predict->add_option("--model", predict_model,
                      "model.bin from train; omit for the constant-velocity baseline");
  predict->add_option("--scenes", predict_scenes, "scenes JSONL")->required();
  predict->add_option("--out", predict_out, "output predictions JSONL");

  // score
  auto* score = app.add_subcommand("score", "aggregate residuals into scene scores");
  std::string score_preds, score_agg = "max", score_out = "scores.csv";
  int score_k = 5;
  double score_alpha_pos = 1.0, score_alpha_vel = 0.5;
  score->add_option("--preds", score_preds, "predictions JSONL")->required();
  score->add_option("--agg", score_agg, "max|mean|q95|topk")
      ->check(CLI::IsMember({"max", "mean", "q95", "topk"}));
  score->add_option("--k", score_k, "k for topk");
  score->add_option("--alpha-pos", score_alpha_pos, "position residual weight");
  score->add_option("--alpha-vel", score_alpha_vel, "velocity residual weight");
  score->add_option("--out", score_out, "output scores CSV");

  // iforest
  auto* iforest = app.add_subcommand("iforest", "isolation forest over scene scores");
  std::string if_scores, if_out = "flags.csv";
  double if_contamination = 0.15;
  int if_trees = 100, if_subsample = 256;
  iforest->add_option("--scores", if_scores, "scores CSV")->required();
  iforest->add_option("--contamination", if_contamination, "expected outlier fraction");
  iforest->add_option("--trees", if_trees, "number of trees");
  iforest->add_option("--subsample", if_subsample, "per-tree subsample size");
  iforest->add_option("--out", if_out, "output flags CSV");

  // proxies
  auto* proxies_cmd = app.add_subcommand("proxies", "surrogate safety measures per scene");
  std::string proxies_scenes, proxies_out = "proxies.csv";
  double proxies_harsh = 3.0;
  proxies_cmd->add_option("--scenes", proxies_scenes, "scenes JSONL")->required();
  proxies_cmd->add_option("--harsh-threshold", proxies_harsh, "harsh closing speed (m/s)");
  proxies_cmd->add_option("--out", proxies_out, "output proxies CSV");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "stability + proxy alignment + baselines");
  std::string eval_scores_dir, eval_proxies, eval_out = "eval.json", eval_labels,
              eval_flags_out = "flags.csv";
  bool eval_no_refit = false;
  evaluate->add_option("--scores-dir", eval_scores_dir, "directory of scores_<agg>.csv files")
      ->required();
  evaluate->add_option("--proxies", eval_proxies, "proxies CSV")->required();
  evaluate->add_option("--labels", eval_labels, "labels JSONL (adds enrichment section)");
  evaluate->add_option("--out", eval_out, "output eval JSON");
  evaluate->add_option("--flags-out", eval_flags_out, "flags CSV at the selected config");
  evaluate->add_flag("--no-refit", eval_no_refit, "share one forest fit across levels");

  // cluster
  auto* cluster_cmd = app.add_subcommand("cluster", "K-Means over flagged scenes' error features");
  std::string cluster_preds, cluster_flags, cluster_out = "clusters.json";
  cluster_cmd->add_option("--preds", cluster_preds, "predictions JSONL")->required();
  cluster_cmd->add_option("--flags", cluster_flags, "flags CSV")->required();
  cluster_cmd->add_option("--out", cluster_out, "output cluster report JSON");

  // run
  auto* run = app.add_subcommand("run", "end-to-end pipeline from a config file");
  std::string run_out_dir = "run";
  run->add_option("--out-dir", run_out_dir, "output directory");

  // report
  auto* report_cmd = app.add_subcommand("report", "consolidated report for a completed run");
  std::string report_dir;
  report_cmd->add_option("--run-dir", report_dir, "run directory")->required();

  // global flags may appear after the subcommand name
  for (auto* sub : app.get_subcommands(nullptr)) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*ingest) {
      const auto unit = ingest_unit == "feet" ? sw::Unit::Feet : sw::Unit::Meters;
      const auto tracks = sw::parse_csv(ingest_csv, unit);
      sw::SceneBuildOptions opts;
      opts.stride = ingest_stride;
      const auto result = sw::build_scenes(tracks, opts);
      sw::save_scenes_jsonl(ingest_out, result.scenes);
      sw::write_text_file(ingest_report, sw::filter_report_to_json(result.report));
      std::printf("kept %lld scenes (%lld candidates)\n",
                  static_cast<long long>(result.report.scenes_kept),
                  static_cast<long long>(result.report.candidates()));
    } else if (*synth) {
      sw::SynthConfig cfg;
      cfg.n_scenes = synth_n;
      cfg.anomaly_fraction = synth_frac;
      cfg.seed = global.seed;
      const auto result = sw::generate(cfg);
      sw::save_scenes_jsonl(synth_out, result.scenes);
      sw::save_labels_jsonl(synth_labels, result.labels);
      std::printf("generated %zu scenes\n", result.scenes.size());
    } else if (*train) {
      const auto scenes = sw::load_scenes_jsonl(train_scenes);
      sw::SplitSpec split_spec;
      split_spec.seed = sw::derive_seed(global.seed, "split");
      const auto parts = sw::split(scenes, split_spec);
      if (parts.train.empty() || parts.val.empty()) {
        throw sw::Error("train/val split is empty; need more scenes");
      }
      const auto norm = sw::fit_norm(parts.train);
      std::vector<sw::SceneTensor> train_n, val_n;
      for (const auto& s : parts.train) train_n.push_back(sw::apply_norm(s, norm));
      for (const auto& s : parts.val) val_n.push_back(sw::apply_norm(s, norm));
      auto cfg = load_predictor_config(train_cfg_path, sw::derive_seed(global.seed, "train"));
      const auto [model, log] = sw::train_transformer(train_n, val_n, cfg, norm);
      model.save(train_out);
      std::string csv = "epoch,train_loss,val_loss\n";
      for (std::size_t e = 0; e < log.train_loss.size(); ++e) {
        csv += std::to_string(e + 1) + ',' + sw::format_double(log.train_loss[e]) + ',' +
               sw::format_double(log.val_loss[e]) + '\n';
      }
      sw::write_text_file(train_log, csv);
      std::printf("trained %d epochs, best val loss %s\n", log.stopped_epoch,
                  sw::format_double(log.best_val).c_str());
    } else if (*predict) {
      const auto scenes = sw::load_scenes_jsonl(predict_scenes);
      std::vector<sw::PredictionResult> preds(scenes.size());
      if (predict_model.empty() || predict_model == "cv") {
        sw::parallel_for(scenes.size(), global.threads,
                         [&](std::size_t i) { preds[i] = sw::predict_cv(scenes[i]); });
      } else {
        const auto model = sw::TransformerPredictor::load(predict_model);
        preds = model.predict_all(scenes, global.threads);
      }
      sw::save_predictions_jsonl(predict_out, preds);
      const auto errs = sw::evaluate_ade_fde(preds);
      std::printf("ADE %.4f m, FDE %.4f m over %zu scenes\n", errs.ade, errs.fde, preds.size());
    } else if (*score) {
      const auto preds = sw::load_predictions_jsonl(score_preds);
      const auto agg = sw::Aggregator::parse(score_agg, score_k);
      const sw::ResidualWeights weights{score_alpha_pos, score_alpha_vel};
      std::vector<sw::SceneScore> rows(preds.size());
      sw::parallel_for(preds.size(), global.threads, [&](std::size_t i) {
        rows[i] = sw::score_scene(preds[i], weights, agg);
      });
      sw::save_scores_csv(score_out, rows);
      std::printf("scored %zu scenes with %s\n", rows.size(), agg.name().c_str());
    } else if (*iforest) {
      const auto scores = sw::load_scores_csv(if_scores);
      std::vector<std::string> ids(scores.size());
      std::vector<double> values(scores.size());
      for (std::size_t i = 0; i < scores.size(); ++i) {
        ids[i] = scores[i].scene_id;
        values[i] = scores[i].residual_score;
      }
      sw::ForestConfig cfg;
      cfg.n_trees = if_trees;
      cfg.subsample = if_subsample;
      cfg.contamination = if_contamination;
      cfg.seed = sw::derive_seed(global.seed, "iforest");
      const auto rows = sw::score_and_flag(ids, values, cfg, global.threads);
      sw::save_flags_csv(if_out, rows);
      std::size_t flagged = 0;
      for (const auto& r : rows) flagged += r.flagged;
      std::printf("flagged %zu of %zu scenes\n", flagged, rows.size());
    } else if (*proxies_cmd) {
      const auto scenes = sw::load_scenes_jsonl(proxies_scenes);
      sw::ProxyOptions opts;
      opts.harsh_threshold = proxies_harsh;
      const auto rows = sw::compute_proxies_all(scenes, opts, global.threads);
      sw::save_proxies_csv(proxies_out, rows);
      std::printf("computed proxies for %zu scenes\n", rows.size());
    } else if (*evaluate) {
      const auto proxies = sw::load_proxies_csv(eval_proxies);
      std::vector<sw::AggregatorScores> tables;
      for (const char* name : {"max", "mean", "q95", "topk"}) {
        const auto path = std::filesystem::path(eval_scores_dir) / ("scores_" + std::string(name) + ".csv");
        if (!std::filesystem::exists(path)) continue;
        const auto rows = sw::load_scores_csv(path);
        sw::AggregatorScores table;
        table.aggregator = name;
        for (const auto& r : rows) {
          table.scene_ids.push_back(r.scene_id);
          table.scores.push_back(r.residual_score);
        }
        tables.push_back(std::move(table));
      }
      if (tables.empty()) throw sw::Error("no scores_<agg>.csv files in " + eval_scores_dir);

      sw::EvalOptions opts;
      opts.forest.seed = sw::derive_seed(global.seed, "forest");
      opts.refit_per_level = !eval_no_refit;
      opts.threads = global.threads;

      sw::EvalReport report;
      report.stability = sw::stability_sweep(tables, opts);
      report.alignment = sw::alignment_sweep(tables, proxies, opts);
      report.selected = sw::select_config(report.stability, report.alignment, opts);

      const auto sel = std::find_if(tables.begin(), tables.end(), [&](const auto& t) {
        return t.aggregator == report.selected.aggregator;
      });
      const auto level = std::find(opts.contaminations.begin(), opts.contaminations.end(),
                                   report.selected.contamination);
      const auto iso = sw::iso_scores_at_level(
          *sel, static_cast<std::size_t>(std::distance(opts.contaminations.begin(), level)), opts);
      const auto flags = sw::flag_top(sel->scene_ids, iso, report.selected.contamination);
      std::vector<sw::ForestScoreRow> flag_rows(iso.size());
      std::set<std::string> ours;
      for (std::size_t i = 0; i < iso.size(); ++i) {
        flag_rows[i] = {sel->scene_ids[i], iso[i], flags[i] != 0};
        if (flags[i]) ours.insert(sel->scene_ids[i]);
      }
      sw::save_flags_csv(eval_flags_out, flag_rows);

      sw::BaselineOptions base_opts;
      base_opts.seed = sw::derive_seed(global.seed, "baseline");
      base_opts.threads = global.threads;
      const auto base = sw::baselines(proxies, ours, base_opts);
      report.overlap = base.overlap;
      report.ccdf = sw::ccdf_points(sel->scores);
      report.ade = 0.0;
      report.fde = 0.0;

      auto contrast_of = [&](auto&& getter) {
        std::vector<double> fv, uv;
        for (const auto& row : proxies) {
          (ours.contains(row.scene_id) ? fv : uv).push_back(getter(row));
        }
        return sw::ContrastRow{sw::mean_of(fv), sw::population_std(fv), sw::mean_of(uv),
                               sw::population_std(uv)};
      };
      report.contrast["min_ttc"] = contrast_of([&](const sw::ProxyRow& r) {
        return std::min(r.min_ttc, base_opts.ttc_cap);
      });
      report.contrast["min_dist"] = contrast_of([](const sw::ProxyRow& r) { return r.min_dist; });
      report.contrast["max_dv"] = contrast_of([](const sw::ProxyRow& r) { return r.max_dv; });
      report.contrast["max_acc"] = contrast_of([](const sw::ProxyRow& r) { return r.max_acc; });

      sw::write_text_file(eval_out, sw::eval_report_to_json(report));
      std::printf("selected %s at c=%.2f\n", report.selected.aggregator.c_str(),
                  report.selected.contamination);
    } else if (*cluster_cmd) {
      const auto preds = sw::load_predictions_jsonl(cluster_preds);
      const auto flag_rows = sw::load_flags_csv(cluster_flags);
      std::set<std::string> flagged;
      for (const auto& r : flag_rows) {
        if (r.flagged) flagged.insert(r.scene_id);
      }
      std::vector<sw::ErrorFeatures> features;
      for (const auto& pred : preds) {
        if (flagged.contains(pred.scene_id)) features.push_back(sw::extract_features(pred));
      }
      sw::ClusterOptions opts;
      opts.seed = sw::derive_seed(global.seed, "cluster");
      const auto report = sw::select_k_and_report(features, opts);
      sw::save_cluster_report(cluster_out, report);
      std::printf("selected k=%d over %zu flagged scenes\n", report.k, features.size());
    } else if (*run) {
      sw::PipelineConfig cfg;
      if (!global.config_path.empty()) {
        cfg = sw::PipelineConfig::from_json_file(global.config_path);
      }
      if (app.count("--seed")) cfg.seed = global.seed;
      if (app.count("--threads")) cfg.threads = global.threads;
      const auto manifest = sw::run_pipeline(cfg, run_out_dir);
      std::printf("pipeline complete: %zu stages -> %s\n", manifest.stages.size(),
                  run_out_dir.c_str());
    } else if (*report_cmd) {
      sw::emit_report(report_dir);
      std::printf("report written to %s\n", report_dir.c_str());
    }
  } catch (const sw::StageFailureError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
