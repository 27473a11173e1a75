#include "scenewatch/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <set>

#include <json.hpp>

#include "scenewatch/errors.hpp"
#include "scenewatch/report.hpp"
#include "scenewatch/rng.hpp"
#include "scenewatch/scene_io.hpp"
#include "scenewatch/transformer.hpp"
#include "scenewatch/util.hpp"

namespace scenewatch {

namespace {

using ordered_json = nlohmann::ordered_json;

template <typename T>
T get_or(const nlohmann::json& j, const std::string& key, T fallback) {
  if (j.contains(key)) return j.at(key).get<T>();
  return fallback;
}

}  // namespace

PipelineConfig PipelineConfig::from_json_file(const std::filesystem::path& path) {
  return from_json_text(read_text_file(path));
}

PipelineConfig PipelineConfig::from_json_text(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  PipelineConfig cfg;
  cfg.seed = get_or<std::uint64_t>(j, "seed", cfg.seed);
  cfg.threads = get_or<int>(j, "threads", cfg.threads);

  if (j.contains("input")) {
    const auto& in = j.at("input");
    const auto mode = in.at("mode").get<std::string>();
    if (mode == "synth") {
      cfg.input_mode = InputMode::Synth;
      cfg.synth.n_scenes = get_or<int>(in, "n_scenes", cfg.synth.n_scenes);
      cfg.synth.anomaly_fraction = get_or<double>(in, "anomaly_fraction", cfg.synth.anomaly_fraction);
      cfg.synth.noise_std = get_or<double>(in, "noise_std", cfg.synth.noise_std);
      if (in.contains("idm")) {
        const auto& idm = in.at("idm");
        cfg.synth.idm.desired_speed = get_or<double>(idm, "desired_speed", cfg.synth.idm.desired_speed);
        cfg.synth.idm.time_headway = get_or<double>(idm, "time_headway", cfg.synth.idm.time_headway);
        cfg.synth.idm.max_accel = get_or<double>(idm, "max_accel", cfg.synth.idm.max_accel);
        cfg.synth.idm.comfortable_decel =
            get_or<double>(idm, "comfortable_decel", cfg.synth.idm.comfortable_decel);
        cfg.synth.idm.jam_distance = get_or<double>(idm, "jam_distance", cfg.synth.idm.jam_distance);
      }
    } else if (mode == "scenes") {
      cfg.input_mode = InputMode::Scenes;
      cfg.scenes_path = in.at("scenes").get<std::string>();
      if (in.contains("labels") && !in.at("labels").is_null()) {
        cfg.labels_path = in.at("labels").get<std::string>();
      }
    } else if (mode == "csv") {
      cfg.input_mode = InputMode::Csv;
      cfg.csv_path = in.at("csv").get<std::string>();
      cfg.csv_unit = get_or<std::string>(in, "unit", "meters") == "feet" ? Unit::Feet : Unit::Meters;
      cfg.build.stride = get_or<int>(in, "stride", cfg.build.stride);
      cfg.build.jump_threshold = get_or<double>(in, "jump_threshold", cfg.build.jump_threshold);
      cfg.build.stationary_eps = get_or<double>(in, "stationary_eps", cfg.build.stationary_eps);
    } else {
      throw Error("pipeline config: unknown input mode '" + mode + "'");
    }
  }

  if (j.contains("predictor")) {
    const auto& p = j.at("predictor");
    const auto kind = p.at("kind").get<std::string>();
    if (kind == "cv") cfg.predictor = PredictorKind::Cv;
    else if (kind == "transformer") cfg.predictor = PredictorKind::Transformer;
    else throw Error("pipeline config: unknown predictor '" + kind + "'");
    if (p.contains("model") && !p.at("model").is_null()) {
      cfg.model_path = p.at("model").get<std::string>();
    }
    cfg.train_cfg.d_model = get_or<int>(p, "d_model", cfg.train_cfg.d_model);
    cfg.train_cfg.n_layers = get_or<int>(p, "n_layers", cfg.train_cfg.n_layers);
    cfg.train_cfg.n_heads = get_or<int>(p, "n_heads", cfg.train_cfg.n_heads);
    cfg.train_cfg.d_ff = get_or<int>(p, "d_ff", cfg.train_cfg.d_ff);
    cfg.train_cfg.t_label = get_or<int>(p, "t_label", cfg.train_cfg.t_label);
    cfg.train_cfg.lr = get_or<double>(p, "lr", cfg.train_cfg.lr);
    cfg.train_cfg.lr_step = get_or<int>(p, "lr_step", cfg.train_cfg.lr_step);
    cfg.train_cfg.lr_gamma = get_or<double>(p, "lr_gamma", cfg.train_cfg.lr_gamma);
    cfg.train_cfg.weight_decay = get_or<double>(p, "weight_decay", cfg.train_cfg.weight_decay);
    cfg.train_cfg.batch = get_or<int>(p, "batch", cfg.train_cfg.batch);
    cfg.train_cfg.max_epochs = get_or<int>(p, "max_epochs", cfg.train_cfg.max_epochs);
    cfg.train_cfg.patience = get_or<int>(p, "patience", cfg.train_cfg.patience);
  }

  if (j.contains("residual_weights")) {
    cfg.weights.alpha_pos = get_or<double>(j.at("residual_weights"), "alpha_pos", cfg.weights.alpha_pos);
    cfg.weights.alpha_vel = get_or<double>(j.at("residual_weights"), "alpha_vel", cfg.weights.alpha_vel);
  }
  cfg.aggregators = get_or<std::vector<std::string>>(j, "aggregators", cfg.aggregators);
  cfg.topk_k = get_or<int>(j, "topk_k", cfg.topk_k);
  cfg.contaminations = get_or<std::vector<double>>(j, "contaminations", cfg.contaminations);
  if (j.contains("forest")) {
    cfg.forest.n_trees = get_or<int>(j.at("forest"), "n_trees", cfg.forest.n_trees);
    cfg.forest.subsample = get_or<int>(j.at("forest"), "subsample", cfg.forest.subsample);
  }
  cfg.refit_per_level = get_or<bool>(j, "refit_per_level", cfg.refit_per_level);
  cfg.tau_min = get_or<double>(j, "tau_min", cfg.tau_min);
  cfg.selected_contamination = get_or<double>(j, "selected_contamination", cfg.selected_contamination);
  if (j.contains("baseline")) {
    const auto& b = j.at("baseline");
    cfg.baseline.ttc_threshold = get_or<double>(b, "ttc_threshold", cfg.baseline.ttc_threshold);
    cfg.baseline.contamination = get_or<double>(b, "contamination", cfg.baseline.contamination);
    cfg.baseline.ttc_cap = get_or<double>(b, "ttc_cap", cfg.baseline.ttc_cap);
  }
  cfg.proxy_options.harsh_threshold = get_or<double>(j, "harsh_threshold", cfg.proxy_options.harsh_threshold);
  if (j.contains("cluster")) {
    cfg.cluster.k_min = get_or<int>(j.at("cluster"), "k_min", cfg.cluster.k_min);
    cfg.cluster.k_max = get_or<int>(j.at("cluster"), "k_max", cfg.cluster.k_max);
  }
  return cfg;
}

std::string PipelineConfig::to_json_text() const {
  ordered_json j;
  j["seed"] = seed;
  j["threads"] = threads;
  ordered_json in;
  switch (input_mode) {
    case InputMode::Synth:
      in["mode"] = "synth";
      in["n_scenes"] = synth.n_scenes;
      in["anomaly_fraction"] = synth.anomaly_fraction;
      in["noise_std"] = synth.noise_std;
      in["idm"] = {{"desired_speed", synth.idm.desired_speed},
                   {"time_headway", synth.idm.time_headway},
                   {"max_accel", synth.idm.max_accel},
                   {"comfortable_decel", synth.idm.comfortable_decel},
                   {"jam_distance", synth.idm.jam_distance}};
      break;
    case InputMode::Scenes:
      in["mode"] = "scenes";
      in["scenes"] = scenes_path.string();
      if (!labels_path.empty()) in["labels"] = labels_path.string();
      break;
    case InputMode::Csv:
      in["mode"] = "csv";
      in["csv"] = csv_path.string();
      in["unit"] = csv_unit == Unit::Feet ? "feet" : "meters";
      in["stride"] = build.stride;
      in["jump_threshold"] = build.jump_threshold;
      in["stationary_eps"] = build.stationary_eps;
      break;
  }
  j["input"] = std::move(in);
  ordered_json p;
  p["kind"] = predictor == PredictorKind::Cv ? "cv" : "transformer";
  if (!model_path.empty()) p["model"] = model_path.string();
  if (predictor == PredictorKind::Transformer) {
    p["d_model"] = train_cfg.d_model;
    p["n_layers"] = train_cfg.n_layers;
    p["n_heads"] = train_cfg.n_heads;
    p["d_ff"] = train_cfg.d_ff;
    p["t_label"] = train_cfg.t_label;
    p["lr"] = train_cfg.lr;
    p["lr_step"] = train_cfg.lr_step;
    p["lr_gamma"] = train_cfg.lr_gamma;
    p["weight_decay"] = train_cfg.weight_decay;
    p["batch"] = train_cfg.batch;
    p["max_epochs"] = train_cfg.max_epochs;
    p["patience"] = train_cfg.patience;
  }
  j["predictor"] = std::move(p);
  j["residual_weights"] = {{"alpha_pos", weights.alpha_pos}, {"alpha_vel", weights.alpha_vel}};
  j["aggregators"] = aggregators;
  j["topk_k"] = topk_k;
  j["contaminations"] = contaminations;
  j["forest"] = {{"n_trees", forest.n_trees}, {"subsample", forest.subsample}};
  j["refit_per_level"] = refit_per_level;
  j["tau_min"] = tau_min;
  j["selected_contamination"] = selected_contamination;
  j["baseline"] = {{"ttc_threshold", baseline.ttc_threshold},
                   {"contamination", baseline.contamination},
                   {"ttc_cap", baseline.ttc_cap}};
  j["harsh_threshold"] = proxy_options.harsh_threshold;
  j["cluster"] = {{"k_min", cluster.k_min}, {"k_max", cluster.k_max}};
  return j.dump(2) + "\n";
}

EvalOptions PipelineConfig::eval_options() const {
  EvalOptions opts;
  opts.contaminations = contaminations;
  opts.forest = forest;
  opts.forest.seed = derive_seed(seed, "forest");
  opts.refit_per_level = refit_per_level;
  opts.tau_min = tau_min;
  opts.default_contamination = selected_contamination;
  opts.threads = threads;
  return opts;
}

std::string RunManifest::to_json_text() const {
  ordered_json j;
  j["tool_version"] = tool_version;
  j["config"] = nlohmann::json::parse(config_json);
  auto stages_json = ordered_json::array();
  for (const auto& stage : stages) {
    ordered_json s;
    s["name"] = stage.name;
    s["inputs"] = stage.inputs;
    s["outputs"] = stage.outputs;
    s["wall_ms"] = stage.wall_ms;
    stages_json.push_back(std::move(s));
  }
  j["stages"] = std::move(stages_json);
  return j.dump(2) + "\n";
}

namespace {

struct StageRunner {
  std::filesystem::path out_dir;
  RunManifest* manifest;

  template <typename Fn>
  void run(const std::string& name, const std::vector<std::filesystem::path>& inputs,
           const std::vector<std::filesystem::path>& outputs, Fn&& fn) {
    StageRecord record;
    record.name = name;
    const auto start = std::chrono::steady_clock::now();
    try {
      fn();
    } catch (const StageFailureError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageFailureError(name, e.what());
    }
    record.wall_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - start)
                         .count();
    for (const auto& path : inputs) {
      if (std::filesystem::exists(path)) {
        record.inputs[relative_name(path)] = sha256_file_hex(path);
      }
    }
    for (const auto& path : outputs) {
      if (std::filesystem::exists(path)) {
        record.outputs[relative_name(path)] = sha256_file_hex(path);
      }
    }
    manifest->stages.push_back(std::move(record));
  }

  std::string relative_name(const std::filesystem::path& path) const {
    std::error_code ec;
    const auto rel = std::filesystem::relative(path, out_dir, ec);
    if (!ec && !rel.empty() && rel.native()[0] != '.') return rel.string();
    return path.string();
  }
};

}  // namespace

RunManifest run_pipeline(const PipelineConfig& config, const std::filesystem::path& out_dir) {
  if (config.aggregators.empty()) throw Error("pipeline: aggregator list is empty");
  if (std::find(config.contaminations.begin(), config.contaminations.end(),
                config.selected_contamination) == config.contaminations.end()) {
    throw Error("pipeline: selected_contamination must be one of the contamination levels");
  }
  std::filesystem::create_directories(out_dir);

  RunManifest manifest;
  manifest.config_json = config.to_json_text();
  StageRunner stage{out_dir, &manifest};

  const auto scenes_file = out_dir / "scenes.jsonl";
  const auto labels_file = out_dir / "labels.jsonl";
  const auto filter_file = out_dir / "filter_report.json";
  const auto model_file = out_dir / "model.bin";
  const auto trainlog_file = out_dir / "train.csv";
  const auto preds_file = out_dir / "preds.jsonl";
  const auto proxies_file = out_dir / "proxies.csv";
  const auto eval_file = out_dir / "eval.json";
  const auto flags_file = out_dir / "flags.csv";
  const auto clusters_file = out_dir / "clusters.json";

  // --- ingest ---------------------------------------------------------
  std::vector<SceneTensor> scenes;
  std::vector<GroundTruthLabel> labels;
  bool have_labels = false;
  stage.run("ingest", {}, {scenes_file, labels_file, filter_file}, [&] {
    switch (config.input_mode) {
      case InputMode::Synth: {
        SynthConfig synth_cfg = config.synth;
        synth_cfg.seed = derive_seed(config.seed, "synth");
        auto result = generate(synth_cfg);
        scenes = std::move(result.scenes);
        labels = std::move(result.labels);
        have_labels = true;
        save_scenes_jsonl(scenes_file, scenes);
        save_labels_jsonl(labels_file, labels);
        break;
      }
      case InputMode::Scenes: {
        if (!std::filesystem::exists(config.scenes_path)) {
          throw Error("scenes file does not exist: " + config.scenes_path.string() +
                      " (pass a scenes.jsonl produced by 'synth' or 'ingest')");
        }
        scenes = load_scenes_jsonl(config.scenes_path);
        save_scenes_jsonl(scenes_file, scenes);
        if (!config.labels_path.empty()) {
          labels = load_labels_jsonl(config.labels_path);
          have_labels = true;
          save_labels_jsonl(labels_file, labels);
        }
        break;
      }
      case InputMode::Csv: {
        if (!std::filesystem::exists(config.csv_path)) {
          throw Error("csv file does not exist: " + config.csv_path.string());
        }
        const auto tracks = parse_csv(config.csv_path, config.csv_unit);
        auto result = build_scenes(tracks, config.build);
        scenes = std::move(result.scenes);
        save_scenes_jsonl(scenes_file, scenes);
        write_text_file(filter_file, filter_report_to_json(result.report));
        break;
      }
    }
    if (scenes.empty()) throw Error("no scenes to process");
  });

  // --- train (transformer without a pre-trained model) ----------------
  const bool needs_training =
      config.predictor == PredictorKind::Transformer && config.model_path.empty();
  std::optional<TransformerPredictor> model;
  if (needs_training) {
    stage.run("train", {scenes_file}, {model_file, trainlog_file}, [&] {
      SplitSpec split_spec = config.split;
      split_spec.seed = derive_seed(config.seed, "split");
      const auto parts = split(scenes, split_spec);
      if (parts.train.empty() || parts.val.empty()) {
        throw Error("train/val split is empty; need more scenes");
      }
      const auto norm = fit_norm(parts.train);
      std::vector<SceneTensor> train_n, val_n;
      train_n.reserve(parts.train.size());
      for (const auto& s : parts.train) train_n.push_back(apply_norm(s, norm));
      val_n.reserve(parts.val.size());
      for (const auto& s : parts.val) val_n.push_back(apply_norm(s, norm));

      PredictorConfig train_cfg = config.train_cfg;
      train_cfg.seed = derive_seed(config.seed, "train");
      auto [trained, log] = train_transformer(train_n, val_n, train_cfg, norm);
      trained.save(model_file);
      std::string csv = "epoch,train_loss,val_loss\n";
      for (std::size_t e = 0; e < log.train_loss.size(); ++e) {
        csv += std::to_string(e + 1) + ',' + format_double(log.train_loss[e]) + ',' +
               format_double(log.val_loss[e]) + '\n';
      }
      write_text_file(trainlog_file, csv);
      model.emplace(std::move(trained));
    });
  } else if (config.predictor == PredictorKind::Transformer) {
    model.emplace(TransformerPredictor::load(config.model_path));
  }

  // --- predict ---------------------------------------------------------
  std::vector<PredictionResult> preds;
  stage.run("predict", {scenes_file}, {preds_file}, [&] {
    if (config.predictor == PredictorKind::Cv) {
      preds.resize(scenes.size());
      parallel_for(scenes.size(), config.threads,
                   [&](std::size_t i) { preds[i] = predict_cv(scenes[i]); });
    } else {
      preds = model->predict_all(scenes, config.threads);
    }
    save_predictions_jsonl(preds_file, preds);
  });

  // --- score -----------------------------------------------------------
  std::vector<AggregatorScores> agg_scores;
  std::vector<std::filesystem::path> score_files;
  for (const auto& name : config.aggregators) {
    score_files.push_back(out_dir / ("scores_" + name + ".csv"));
  }
  stage.run("score", {preds_file}, score_files, [&] {
    for (std::size_t ai = 0; ai < config.aggregators.size(); ++ai) {
      const auto agg = Aggregator::parse(config.aggregators[ai], config.topk_k);
      AggregatorScores table;
      table.aggregator = agg.name();
      table.scene_ids.resize(preds.size());
      table.scores.resize(preds.size());
      std::vector<SceneScore> rows(preds.size());
      parallel_for(preds.size(), config.threads, [&](std::size_t i) {
        rows[i] = score_scene(preds[i], config.weights, agg);
      });
      for (std::size_t i = 0; i < preds.size(); ++i) {
        table.scene_ids[i] = rows[i].scene_id;
        table.scores[i] = rows[i].residual_score;
      }
      save_scores_csv(score_files[ai], rows);
      agg_scores.push_back(std::move(table));
    }
  });

  // --- proxies ----------------------------------------------------------
  std::vector<ProxyRow> proxies;
  stage.run("proxies", {scenes_file}, {proxies_file}, [&] {
    proxies = compute_proxies_all(scenes, config.proxy_options, config.threads);
    save_proxies_csv(proxies_file, proxies);
  });

  // --- evaluate ---------------------------------------------------------
  stage.run("evaluate", {preds_file, proxies_file}, {eval_file, flags_file}, [&] {
    const auto opts = config.eval_options();
    EvalReport report;
    report.stability = stability_sweep(agg_scores, opts);
    report.alignment = alignment_sweep(agg_scores, proxies, opts);
    report.selected = select_config(report.stability, report.alignment, opts);
    report.ttc_cap = config.baseline.ttc_cap;
    report.harsh_threshold = config.proxy_options.harsh_threshold;

    const auto selected_it =
        std::find_if(agg_scores.begin(), agg_scores.end(),
                     [&](const auto& t) { return t.aggregator == report.selected.aggregator; });
    if (selected_it == agg_scores.end()) throw Error("selected aggregator has no score table");
    const auto level_it = std::find(config.contaminations.begin(), config.contaminations.end(),
                                    report.selected.contamination);
    const auto level_index =
        static_cast<std::size_t>(std::distance(config.contaminations.begin(), level_it));
    const auto iso = iso_scores_at_level(*selected_it, level_index, opts);
    const auto flags = flag_top(selected_it->scene_ids, iso, report.selected.contamination);
    std::vector<ForestScoreRow> flag_rows(iso.size());
    std::set<std::string> ours;
    for (std::size_t i = 0; i < iso.size(); ++i) {
      flag_rows[i] = {selected_it->scene_ids[i], iso[i], flags[i] != 0};
      if (flags[i]) ours.insert(selected_it->scene_ids[i]);
    }
    save_flags_csv(flags_file, flag_rows);

    BaselineOptions baseline_opts = config.baseline;
    baseline_opts.seed = derive_seed(config.seed, "baseline");
    baseline_opts.threads = config.threads;
    const auto base = baselines(proxies, ours, baseline_opts);
    report.overlap = base.overlap;

    report.ccdf = ccdf_points(selected_it->scores);

    // Flagged-vs-unflagged physical contrast (min_ttc capped for the mean).
    auto contrast_of = [&](auto&& getter) {
      std::vector<double> flagged_vals, unflagged_vals;
      for (const auto& row : proxies) {
        (ours.contains(row.scene_id) ? flagged_vals : unflagged_vals).push_back(getter(row));
      }
      ContrastRow c;
      c.flagged_mean = mean_of(flagged_vals);
      c.flagged_std = population_std(flagged_vals);
      c.unflagged_mean = mean_of(unflagged_vals);
      c.unflagged_std = population_std(unflagged_vals);
      return c;
    };
    report.contrast["min_ttc"] = contrast_of(
        [&](const ProxyRow& r) { return std::min(r.min_ttc, config.baseline.ttc_cap); });
    report.contrast["min_dist"] = contrast_of([](const ProxyRow& r) { return r.min_dist; });
    report.contrast["max_dv"] = contrast_of([](const ProxyRow& r) { return r.max_dv; });
    report.contrast["max_acc"] = contrast_of([](const ProxyRow& r) { return r.max_acc; });

    const auto errors = evaluate_ade_fde(preds);
    report.ade = errors.ade;
    report.fde = errors.fde;

    if (have_labels) {
      std::map<std::string, AnomalyKind> kind_of;
      for (const auto& label : labels) kind_of[label.scene_id] = label.kind;
      auto subtle = [](AnomalyKind k) {
        return k == AnomalyKind::LateralDrift || k == AnomalyKind::FollowInstability;
      };
      auto& enrich = report.enrichment;
      enrich.available = true;
      std::int64_t unique_subtle = 0, ttc_subtle = 0, unique_total = 0;
      for (const auto& id : ours) {
        const auto kind = kind_of.count(id) ? kind_of[id] : AnomalyKind::None;
        ++enrich.ours_by_kind[to_string(kind)];
        const bool unique = !base.ttc_flagged.contains(id) && !base.iforest_flagged.contains(id);
        if (unique) {
          ++unique_total;
          ++enrich.unique_ours_by_kind[to_string(kind)];
          unique_subtle += subtle(kind);
        }
      }
      for (const auto& id : base.ttc_flagged) {
        const auto kind = kind_of.count(id) ? kind_of[id] : AnomalyKind::None;
        ++enrich.ttc_flagged_by_kind[to_string(kind)];
        ttc_subtle += subtle(kind);
      }
      enrich.unique_ours_subtle_fraction =
          unique_total ? static_cast<double>(unique_subtle) / static_cast<double>(unique_total) : 0.0;
      enrich.ttc_flagged_subtle_fraction =
          base.ttc_flagged.empty()
              ? 0.0
              : static_cast<double>(ttc_subtle) / static_cast<double>(base.ttc_flagged.size());
    }

    write_text_file(eval_file, eval_report_to_json(report));
  });

  // --- cluster ----------------------------------------------------------
  stage.run("cluster", {preds_file, flags_file}, {clusters_file}, [&] {
    const auto flag_rows = load_flags_csv(flags_file);
    std::set<std::string> flagged;
    for (const auto& row : flag_rows) {
      if (row.flagged) flagged.insert(row.scene_id);
    }
    std::vector<ErrorFeatures> features;
    for (const auto& pred : preds) {
      if (flagged.contains(pred.scene_id)) features.push_back(extract_features(pred));
    }
    ClusterOptions cluster_opts = config.cluster;
    cluster_opts.seed = derive_seed(config.seed, "cluster");
    save_cluster_report(clusters_file, select_k_and_report(features, cluster_opts));
  });

  // --- report -----------------------------------------------------------
  stage.run("report", {eval_file, clusters_file},
            {out_dir / "report.json", out_dir / "summary.md", out_dir / "report.schema.json"},
            [&] { emit_report(out_dir); });

  write_text_file(out_dir / "manifest.json", manifest.to_json_text());
  return manifest;
}

}  // namespace scenewatch
