#include "scenewatch/transformer.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "scenewatch/errors.hpp"
#include "scenewatch/rng.hpp"
#include "scenewatch/util.hpp"

namespace scenewatch {

namespace {

constexpr int kStepWidth = kRoleSlots * kFeatures;  // 21

Eigen::MatrixXd sinusoidal_encoding(int length, int d_model) {
  Eigen::MatrixXd pe(length, d_model);
  for (int pos = 0; pos < length; ++pos) {
    for (int i = 0; i < d_model; ++i) {
      const double angle = pos / std::pow(10000.0, (2.0 * (i / 2)) / d_model);
      pe(pos, i) = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

// History steps as rows: t_enc x 21, absent slots zeroed (scenes are stored
// that way already).
Eigen::MatrixXd history_matrix(const SceneTensor& scene, int t_enc) {
  Eigen::MatrixXd out(t_enc, kStepWidth);
  for (int t = 0; t < t_enc; ++t) {
    for (int s = 0; s < kRoleSlots; ++s) {
      for (int f = 0; f < kFeatures; ++f) {
        out(t, s * kFeatures + f) = scene.at(t, s, f);
      }
    }
  }
  return out;
}

Eigen::MatrixXd future_matrix(const SceneTensor& scene, int t_enc, int t_pred) {
  Eigen::MatrixXd out(t_pred, kStepWidth);
  for (int t = 0; t < t_pred; ++t) {
    for (int s = 0; s < kRoleSlots; ++s) {
      for (int f = 0; f < kFeatures; ++f) {
        out(t, s * kFeatures + f) = scene.at(t_enc + t, s, f);
      }
    }
  }
  return out;
}

// Loss weights: lambda_pos on x/y columns, lambda_vel on v columns of present
// slots, all divided by the present agent-timestep count so the scene loss is
// the mean the loss() contract defines.
Eigen::MatrixXd loss_weights(const SceneTensor& scene, const PredictorConfig& cfg) {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(cfg.t_pred, kStepWidth);
  int n_present = 0;
  for (int s = 0; s < kRoleSlots; ++s) n_present += scene.present[s];
  const double count = static_cast<double>(cfg.t_pred) * n_present;
  if (count == 0) return w;
  for (int s = 0; s < kRoleSlots; ++s) {
    if (!scene.present[s]) continue;
    for (int t = 0; t < cfg.t_pred; ++t) {
      w(t, s * kFeatures + kFeatX) = cfg.lambda_pos / count;
      w(t, s * kFeatures + kFeatY) = cfg.lambda_pos / count;
      w(t, s * kFeatures + kFeatV) = cfg.lambda_vel / count;
    }
  }
  return w;
}

}  // namespace

TransformerPredictor::TransformerPredictor(const PredictorConfig& config, const NormStats& norm)
    : config_(config), norm_(norm) {
  config_.validate();
  const int d = config_.d_model;
  Rng rng(derive_seed(config_.seed, "transformer-init"));

  auto glorot = [&rng](int rows, int cols) {
    const double limit = std::sqrt(6.0 / (rows + cols));
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      m(i / m.cols(), i % m.cols()) = rng.uniform(-limit, limit);
    }
    return m;
  };
  auto small_normal = [&rng](int rows, int cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      m(i / m.cols(), i % m.cols()) = rng.normal(0.0, 0.02);
    }
    return m;
  };

  auto add_param = [this](const std::string& name, Eigen::MatrixXd value) {
    param_index_[name] = params_.size();
    params_.emplace_back(name, nn::make_leaf(std::move(value)));
  };

  auto add_attention = [&](const std::string& prefix) {
    for (const char* mat : {"wq", "wk", "wv", "wo"}) {
      add_param(prefix + "." + mat, glorot(d, d));
      add_param(prefix + "." + mat + "_b", Eigen::MatrixXd::Zero(1, d));
    }
  };
  auto add_layernorm = [&](const std::string& prefix) {
    add_param(prefix + ".gamma", Eigen::MatrixXd::Ones(1, d));
    add_param(prefix + ".beta", Eigen::MatrixXd::Zero(1, d));
  };
  auto add_ffn = [&](const std::string& prefix) {
    add_param(prefix + ".w1", glorot(d, config_.d_ff));
    add_param(prefix + ".b1", Eigen::MatrixXd::Zero(1, config_.d_ff));
    add_param(prefix + ".w2", glorot(config_.d_ff, d));
    add_param(prefix + ".b2", Eigen::MatrixXd::Zero(1, d));
  };

  add_param("enc.embed.w", glorot(kStepWidth, d));
  add_param("enc.embed.b", Eigen::MatrixXd::Zero(1, d));
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = "enc.layer" + std::to_string(l);
    add_attention(p + ".attn");
    add_layernorm(p + ".ln1");
    add_ffn(p + ".ffn");
    add_layernorm(p + ".ln2");
  }

  add_param("dec.embed.w", glorot(kStepWidth, d));
  add_param("dec.embed.b", Eigen::MatrixXd::Zero(1, d));
  add_param("dec.queries", small_normal(config_.t_pred, d));
  add_param("dec.pos", small_normal(config_.t_label + config_.t_pred, d));
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = "dec.layer" + std::to_string(l);
    add_attention(p + ".self");
    add_layernorm(p + ".ln1");
    add_attention(p + ".cross");
    add_layernorm(p + ".ln2");
    add_ffn(p + ".ffn");
    add_layernorm(p + ".ln3");
  }

  add_param("head.w", glorot(d, kStepWidth));
  add_param("head.b", Eigen::MatrixXd::Zero(1, kStepWidth));

  encoder_pos_ = sinusoidal_encoding(config_.t_enc, d);
}

nn::NodePtr TransformerPredictor::param(const std::string& name) const {
  return params_[param_index_.at(name)].second;
}

namespace {

// Multi-head attention: queries from `q_in`, keys/values from `kv_in`.
nn::NodePtr attention(nn::Graph& g, const std::function<nn::NodePtr(const std::string&)>& p,
                      const std::string& prefix, const nn::NodePtr& q_in,
                      const nn::NodePtr& kv_in, int n_heads) {
  const auto q = g.add_rowvec(g.matmul(q_in, p(prefix + ".wq")), p(prefix + ".wq_b"));
  const auto k = g.add_rowvec(g.matmul(kv_in, p(prefix + ".wk")), p(prefix + ".wk_b"));
  const auto v = g.add_rowvec(g.matmul(kv_in, p(prefix + ".wv")), p(prefix + ".wv_b"));
  const int d = static_cast<int>(q->value.cols());
  const int dh = d / n_heads;

  std::vector<nn::NodePtr> heads;
  for (int h = 0; h < n_heads; ++h) {
    const auto qh = g.slice_cols(q, h * dh, dh);
    const auto kh = g.slice_cols(k, h * dh, dh);
    const auto vh = g.slice_cols(v, h * dh, dh);
    const auto scores = g.scale(g.matmul(qh, g.transpose(kh)), 1.0 / std::sqrt(double(dh)));
    heads.push_back(g.matmul(g.softmax_rows(scores), vh));
  }
  const auto merged = g.concat_cols(heads);
  return g.add_rowvec(g.matmul(merged, p(prefix + ".wo")), p(prefix + ".wo_b"));
}

nn::NodePtr feed_forward(nn::Graph& g,
                         const std::function<nn::NodePtr(const std::string&)>& p,
                         const std::string& prefix, const nn::NodePtr& x) {
  const auto h = g.gelu(g.add_rowvec(g.matmul(x, p(prefix + ".w1")), p(prefix + ".b1")));
  return g.add_rowvec(g.matmul(h, p(prefix + ".w2")), p(prefix + ".b2"));
}

}  // namespace

nn::NodePtr TransformerPredictor::forward(nn::Graph& g, const SceneTensor& normalized) const {
  auto p = [this](const std::string& name) { return param(name); };

  // Encoder: embed + sinusoidal positions, then post-LN self-attention blocks.
  const Eigen::MatrixXd history = history_matrix(normalized, config_.t_enc);
  const auto history_node = g.constant(history);
  auto enc = g.add_const(
      g.add_rowvec(g.matmul(history_node, p("enc.embed.w")), p("enc.embed.b")), encoder_pos_);
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string pre = "enc.layer" + std::to_string(l);
    enc = g.layer_norm(g.add(enc, attention(g, p, pre + ".attn", enc, enc, config_.n_heads)),
                       p(pre + ".ln1.gamma"), p(pre + ".ln1.beta"));
    enc = g.layer_norm(g.add(enc, feed_forward(g, p, pre + ".ffn", enc)),
                       p(pre + ".ln2.gamma"), p(pre + ".ln2.beta"));
  }

  // Decoder input: embedded trailing history frames + learned queries, under
  // learned positional embeddings.
  const auto label_rows = g.constant(
      history.middleRows(config_.t_enc - config_.t_label, config_.t_label));
  const auto context = g.add_rowvec(g.matmul(label_rows, p("dec.embed.w")), p("dec.embed.b"));
  const std::array<nn::NodePtr, 2> dec_parts{context, p("dec.queries")};
  auto dec = g.add(g.concat_rows(dec_parts), p("dec.pos"));
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string pre = "dec.layer" + std::to_string(l);
    dec = g.layer_norm(g.add(dec, attention(g, p, pre + ".self", dec, dec, config_.n_heads)),
                       p(pre + ".ln1.gamma"), p(pre + ".ln1.beta"));
    dec = g.layer_norm(g.add(dec, attention(g, p, pre + ".cross", dec, enc, config_.n_heads)),
                       p(pre + ".ln2.gamma"), p(pre + ".ln2.beta"));
    dec = g.layer_norm(g.add(dec, feed_forward(g, p, pre + ".ffn", dec)),
                       p(pre + ".ln3.gamma"), p(pre + ".ln3.beta"));
  }

  // Head reads the placeholder positions only.
  const auto future = g.slice_rows(dec, config_.t_label, config_.t_pred);
  return g.add_rowvec(g.matmul(future, p("head.w")), p("head.b"));
}

nn::NodePtr TransformerPredictor::scene_loss(nn::Graph& g, const SceneTensor& normalized) const {
  const auto pred = forward(g, normalized);
  return g.weighted_squared_error(pred, future_matrix(normalized, config_.t_enc, config_.t_pred),
                                  loss_weights(normalized, config_));
}

double TransformerPredictor::loss_value(std::span<const SceneTensor> normalized_scenes) const {
  if (normalized_scenes.empty()) throw EmptyInputError("loss_value: no scenes");
  nn::Graph g;
  std::vector<nn::NodePtr> losses;
  for (const auto& scene : normalized_scenes) losses.push_back(scene_loss(g, scene));
  return g.mean_of_scalars(losses)->value(0, 0);
}

double TransformerPredictor::loss_and_gradients(std::span<const SceneTensor> normalized_scenes) {
  if (normalized_scenes.empty()) throw EmptyInputError("loss_and_gradients: no scenes");
  for (auto& [name, node] : params_) node->zero_grad();
  nn::Graph g;
  std::vector<nn::NodePtr> losses;
  for (const auto& scene : normalized_scenes) losses.push_back(scene_loss(g, scene));
  const auto total = g.mean_of_scalars(losses);
  g.backward(total);
  return total->value(0, 0);
}

PredictionResult TransformerPredictor::predict(const SceneTensor& raw_scene) const {
  const SceneTensor normalized = apply_norm(raw_scene, norm_);
  nn::Graph g;
  const auto out = forward(g, normalized);

  auto result = PredictionResult::empty(raw_scene.scene_id, config_.t_pred, raw_scene.present);
  for (int t = 0; t < config_.t_pred; ++t) {
    for (int s = 0; s < kRoleSlots; ++s) {
      if (!raw_scene.present[s]) continue;
      for (int f = 0; f < kFeatures; ++f) {
        const double denorm =
            out->value(t, s * kFeatures + f) * norm_.stddev[static_cast<std::size_t>(f)] +
            norm_.mean[static_cast<std::size_t>(f)];
        result.pred_at(t, s, f) = denorm;
        result.actual_at(t, s, f) = raw_scene.at(config_.t_enc + t, s, f);
      }
    }
  }
  return result;
}

std::vector<PredictionResult> TransformerPredictor::predict_all(
    std::span<const SceneTensor> raw_scenes, int threads) const {
  std::vector<PredictionResult> out(raw_scenes.size());
  parallel_for(raw_scenes.size(), threads,
               [&](std::size_t i) { out[i] = predict(raw_scenes[i]); });
  return out;
}

std::pair<TransformerPredictor, TrainLog> train_transformer(
    std::span<const SceneTensor> train_normalized, std::span<const SceneTensor> val_normalized,
    const PredictorConfig& config, const NormStats& norm) {
  if (train_normalized.empty() || val_normalized.empty()) {
    throw EmptyInputError("train_transformer: empty train or val set");
  }
  TransformerPredictor model(config, norm);
  TrainLog log;

  // AdamW state per parameter.
  struct AdamState {
    Eigen::MatrixXd m, v;
  };
  std::vector<AdamState> state;
  for (const auto& [name, node] : model.parameters()) {
    state.push_back({Eigen::MatrixXd::Zero(node->value.rows(), node->value.cols()),
                     Eigen::MatrixXd::Zero(node->value.rows(), node->value.cols())});
  }
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  std::int64_t step = 0;

  std::vector<std::size_t> order(train_normalized.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<Eigen::MatrixXd> best_params;
  double best_val = std::numeric_limits<double>::infinity();
  int epochs_since_best = 0;

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    const double lr = config.lr * std::pow(config.lr_gamma, epoch / config.lr_step);
    Rng shuffle_rng(derive_seed(config.seed, "train-epoch", static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double epoch_loss = 0.0;
    std::size_t n_batches = 0;
    std::vector<SceneTensor> batch;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch)) {
      batch.clear();
      const auto end = std::min(order.size(), start + static_cast<std::size_t>(config.batch));
      for (std::size_t i = start; i < end; ++i) batch.push_back(train_normalized[order[i]]);

      const double batch_loss = model.loss_and_gradients(batch);
      if (!std::isfinite(batch_loss)) {
        throw NonFiniteLossError("training diverged: non-finite loss at epoch " +
                                 std::to_string(epoch) + ", batch " + std::to_string(n_batches));
      }
      epoch_loss += batch_loss;
      ++n_batches;

      ++step;
      const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      auto params = model.parameters();
      for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& node = *params[pi].second;
        auto& st = state[pi];
        st.m = kBeta1 * st.m + (1.0 - kBeta1) * node.grad;
        st.v = kBeta2 * st.v + (1.0 - kBeta2) * node.grad.cwiseProduct(node.grad);
        const Eigen::MatrixXd m_hat = st.m / bc1;
        const Eigen::MatrixXd v_hat = st.v / bc2;
        const Eigen::MatrixXd denom = (v_hat.cwiseSqrt().array() + kEps).matrix();
        node.value -= lr * (m_hat.cwiseQuotient(denom) + config.weight_decay * node.value);
      }
    }
    log.train_loss.push_back(epoch_loss / static_cast<double>(n_batches));

    const double val = model.loss_value(val_normalized);
    log.val_loss.push_back(val);
    log.stopped_epoch = epoch + 1;

    if (val < best_val) {
      best_val = val;
      epochs_since_best = 0;
      best_params.clear();
      for (const auto& [name, node] : model.parameters()) best_params.push_back(node->value);
    } else {
      ++epochs_since_best;
      if (epochs_since_best > config.patience) break;
    }
  }

  if (!best_params.empty()) {
    auto params = model.parameters();
    for (std::size_t pi = 0; pi < params.size(); ++pi) params[pi].second->value = best_params[pi];
  }
  log.best_val = best_val;
  return {std::move(model), std::move(log)};
}

namespace {
constexpr char kModelMagic[8] = {'S', 'W', 'T', 'F', '0', '0', '0', '1'};

void write_u32(std::ostream& out, std::uint32_t v) {
  char buf[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(buf, 4);
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  return static_cast<std::uint32_t>(buf[0]) | (static_cast<std::uint32_t>(buf[1]) << 8) |
         (static_cast<std::uint32_t>(buf[2]) << 16) | (static_cast<std::uint32_t>(buf[3]) << 24);
}
}  // namespace

void TransformerPredictor::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write model file: " + path.string());
  out.write(kModelMagic, sizeof(kModelMagic));

  nlohmann::ordered_json meta;
  meta["t_enc"] = config_.t_enc;
  meta["t_pred"] = config_.t_pred;
  meta["t_label"] = config_.t_label;
  meta["d_model"] = config_.d_model;
  meta["n_layers"] = config_.n_layers;
  meta["n_heads"] = config_.n_heads;
  meta["d_ff"] = config_.d_ff;
  meta["lambda_pos"] = config_.lambda_pos;
  meta["lambda_vel"] = config_.lambda_vel;
  meta["seed"] = config_.seed;
  meta["norm_mean"] = norm_.mean;
  meta["norm_std"] = norm_.stddev;
  const std::string meta_str = meta.dump();
  write_u32(out, static_cast<std::uint32_t>(meta_str.size()));
  out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));

  write_u32(out, static_cast<std::uint32_t>(params_.size()));
  for (const auto& [name, node] : params_) {
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<std::uint32_t>(node->value.rows()));
    write_u32(out, static_cast<std::uint32_t>(node->value.cols()));
    for (Eigen::Index r = 0; r < node->value.rows(); ++r) {
      for (Eigen::Index c = 0; c < node->value.cols(); ++c) {
        const double v = node->value(r, c);
        out.write(reinterpret_cast<const char*>(&v), sizeof(double));
      }
    }
  }
}

TransformerPredictor TransformerPredictor::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open model file: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kModelMagic, sizeof(magic)) != 0) {
    throw Error("not a scenewatch model file: " + path.string());
  }

  const auto meta_len = read_u32(in);
  std::string meta_str(meta_len, '\0');
  in.read(meta_str.data(), meta_len);
  const auto meta = nlohmann::json::parse(meta_str);

  PredictorConfig cfg;
  cfg.t_enc = meta.at("t_enc").get<int>();
  cfg.t_pred = meta.at("t_pred").get<int>();
  cfg.t_label = meta.at("t_label").get<int>();
  cfg.d_model = meta.at("d_model").get<int>();
  cfg.n_layers = meta.at("n_layers").get<int>();
  cfg.n_heads = meta.at("n_heads").get<int>();
  cfg.d_ff = meta.at("d_ff").get<int>();
  cfg.lambda_pos = meta.at("lambda_pos").get<double>();
  cfg.lambda_vel = meta.at("lambda_vel").get<double>();
  cfg.seed = meta.at("seed").get<std::uint64_t>();
  NormStats norm;
  for (int f = 0; f < kFeatures; ++f) {
    norm.mean[static_cast<std::size_t>(f)] = meta.at("norm_mean")[static_cast<std::size_t>(f)].get<double>();
    norm.stddev[static_cast<std::size_t>(f)] = meta.at("norm_std")[static_cast<std::size_t>(f)].get<double>();
  }

  TransformerPredictor model(cfg, norm);
  const auto n_tensors = read_u32(in);
  if (n_tensors != model.params_.size()) {
    throw Error("model file tensor count mismatch");
  }
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    const auto name_len = read_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto rows = read_u32(in);
    const auto cols = read_u32(in);
    const auto it = model.param_index_.find(name);
    if (it == model.param_index_.end()) throw Error("unknown tensor in model file: " + name);
    auto& node = *model.params_[it->second].second;
    if (node.value.rows() != static_cast<Eigen::Index>(rows) ||
        node.value.cols() != static_cast<Eigen::Index>(cols)) {
      throw Error("tensor shape mismatch in model file: " + name);
    }
    for (std::uint32_t r = 0; r < rows; ++r) {
      for (std::uint32_t c = 0; c < cols; ++c) {
        double v;
        in.read(reinterpret_cast<char*>(&v), sizeof(double));
        node.value(r, c) = v;
      }
    }
  }
  if (!in) throw Error("truncated model file: " + path.string());
  return model;
}

}  // namespace scenewatch
