#include "atal/model.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace atal {

namespace {
constexpr double kBatchNormMomentum = 0.1;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (feature_dim <= 0 || num_heads <= 0 || ff_dim <= 0 || num_encoder_blocks <= 0 ||
      head_hidden_1 <= 0 || head_hidden_2 <= 0) {
    fail("all extents must be positive");
  }
  if (num_classes < 2) fail("num_classes must be at least 2");
  if (feature_dim % num_heads != 0) {
    fail("feature_dim " + std::to_string(feature_dim) + " not divisible by num_heads " +
         std::to_string(num_heads));
  }
  if (feature_dim % 2 != 0) fail("feature_dim must be even for the positional encoding");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) fail("dropout_rate must be in [0, 1)");
  if (epsilon <= 0.0) fail("epsilon must be positive");
}

Tensor positional_encoding(int timesteps, int dim) {
  if (dim % 2 != 0) {
    throw std::invalid_argument("positional_encoding: dimension must be even, got " +
                                std::to_string(dim));
  }
  if (timesteps < 0) throw std::invalid_argument("positional_encoding: negative length");
  Tensor pe({timesteps, dim});
  for (int pos = 0; pos < timesteps; ++pos) {
    for (int i = 0; i < dim / 2; ++i) {
      const double denom = std::pow(10000.0, (2.0 * i) / dim);
      const double arg = pos / denom;
      pe.at(pos, 2 * i) = std::sin(arg);
      pe.at(pos, 2 * i + 1) = std::cos(arg);
    }
  }
  return pe;
}

int64_t ModelParams::parameter_count() const {
  int64_t n = 0;
  visit([&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

ModelParams init_params(const ModelConfig& config, uint64_t seed) {
  config.validate();
  ModelParams p;
  p.config = config;
  p.config.seed = seed;
  Rng rng(derive_seed(seed, "init"));

  auto weight = [&](int fan_in, int fan_out) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    Tensor w({fan_in, fan_out});
    for (int64_t i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-bound, bound);
    return w;
  };

  const int d = config.feature_dim;
  p.blocks.resize(static_cast<size_t>(config.num_encoder_blocks));
  for (EncoderBlockParams& b : p.blocks) {
    b.w_q = weight(d, d);
    b.w_k = weight(d, d);
    b.w_v = weight(d, d);
    b.w_o = weight(d, d);
    b.b_o = Tensor({d});
    b.mlp_w1 = weight(d, config.ff_dim);
    b.mlp_b1 = Tensor({config.ff_dim});
    b.mlp_w2 = weight(config.ff_dim, d);
    b.mlp_b2 = Tensor({d});
    b.ln1_gain = Tensor::full({d}, 1.0);
    b.ln1_bias = Tensor({d});
    b.ln2_gain = Tensor::full({d}, 1.0);
    b.ln2_bias = Tensor({d});
  }

  auto head = [&](int out_dim) {
    HeadParams h;
    h.fc1_w = weight(d, config.head_hidden_1);
    h.fc1_b = Tensor({config.head_hidden_1});
    h.bn1_gain = Tensor::full({config.head_hidden_1}, 1.0);
    h.bn1_bias = Tensor({config.head_hidden_1});
    h.bn1 = BatchNormState(config.head_hidden_1);
    h.fc2_w = weight(config.head_hidden_1, config.head_hidden_2);
    h.fc2_b = Tensor({config.head_hidden_2});
    h.bn2_gain = Tensor::full({config.head_hidden_2}, 1.0);
    h.bn2_bias = Tensor({config.head_hidden_2});
    h.bn2 = BatchNormState(config.head_hidden_2);
    h.out_w = weight(config.head_hidden_2, out_dim);
    h.out_b = Tensor({out_dim});
    return h;
  };
  p.cls_head = head(config.num_classes);
  p.reg_head = head(2);
  return p;
}

ModelGraph::ModelGraph(Tape& tape, ModelParams& params, bool params_require_grad,
                       uint64_t dropout_stream)
    : tape_(&tape),
      params_(&params),
      dropout_rng_(derive_seed(derive_seed(params.config.seed, "dropout") ^ dropout_stream,
                               "dropout-stream")) {
  params.config.validate();
  params.visit([&](const std::string&, Tensor& t) {
    const Tape::Id id = tape_->leaf(t, params_require_grad);
    bound_.emplace_back(&t, id);
    index_.emplace(&t, id);
  });
}

Tape::Id ModelGraph::param_id(const Tensor& t) const {
  auto it = index_.find(&t);
  if (it == index_.end()) throw std::logic_error("param_id: tensor is not a bound parameter");
  return it->second;
}

Tape::Id ModelGraph::linear(Tape::Id x, const Tensor& w, const Tensor& b) {
  return tape_->add_row_vec(tape_->matmul(x, param_id(w)), param_id(b));
}

Tape::Id ModelGraph::encode(const Tensor& features, const std::vector<uint8_t>& valid,
                            bool add_positional_encoding,
                            std::vector<Tape::Id>* attention_probs) {
  const ModelConfig& cfg = params_->config;
  if (features.rank() != 2 || features.dim(1) != cfg.feature_dim) {
    throw std::invalid_argument("encode: feature shape " + features.shape_string() +
                                " does not match configured feature_dim " +
                                std::to_string(cfg.feature_dim));
  }
  const int T = features.dim(0);
  if (T < 1) throw std::invalid_argument("encode: empty sequence");
  if (!valid.empty() && static_cast<int>(valid.size()) != T) {
    throw std::invalid_argument("encode: validity mask length does not match sequence");
  }

  bool any_masked = false;
  int valid_count = T;
  if (!valid.empty()) {
    valid_count = 0;
    for (uint8_t v : valid) valid_count += v ? 1 : 0;
    any_masked = valid_count != T;
  }
  if (valid_count == 0) {
    throw std::invalid_argument("encode: all timesteps masked out");
  }

  Tensor x_in = features;
  if (add_positional_encoding) {
    const Tensor pe = positional_encoding(T, cfg.feature_dim);
    for (int64_t i = 0; i < x_in.size(); ++i) x_in.data()[i] += pe.data()[i];
  }
  Tape::Id x = tape_->constant(std::move(x_in));

  Tape::Id mask_bias = -1;
  if (any_masked) {
    Tensor mb({T, T});
    const double neg_inf = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < T; ++i)
      for (int j = 0; j < T; ++j) mb.at(i, j) = valid[static_cast<size_t>(j)] ? 0.0 : neg_inf;
    mask_bias = tape_->constant(std::move(mb));
  }

  const int dh = cfg.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  for (const EncoderBlockParams& blk : params_->blocks) {
    const Tape::Id q = tape_->matmul(x, param_id(blk.w_q));
    const Tape::Id k = tape_->matmul(x, param_id(blk.w_k));
    const Tape::Id v = tape_->matmul(x, param_id(blk.w_v));

    std::vector<Tape::Id> head_outs;
    head_outs.reserve(static_cast<size_t>(cfg.num_heads));
    for (int h = 0; h < cfg.num_heads; ++h) {
      const int c0 = h * dh, c1 = (h + 1) * dh;
      const Tape::Id qh = tape_->slice_cols(q, c0, c1);
      const Tape::Id kh = tape_->slice_cols(k, c0, c1);
      const Tape::Id vh = tape_->slice_cols(v, c0, c1);
      Tape::Id scores = tape_->scale(tape_->matmul(qh, tape_->transpose(kh)), inv_sqrt_dh);
      if (mask_bias >= 0) scores = tape_->add(scores, mask_bias);
      const Tape::Id probs = tape_->softmax(scores, 1);
      if (attention_probs) attention_probs->push_back(probs);
      head_outs.push_back(tape_->matmul(probs, vh));
    }
    Tape::Id msa = tape_->concat_cols(head_outs);
    msa = tape_->add_row_vec(tape_->matmul(msa, param_id(blk.w_o)), param_id(blk.b_o));
    if (cfg.dropout_rate > 0.0) msa = tape_->dropout(msa, cfg.dropout_rate, dropout_rng_);

    // Post-norm residual order: normalize after each add.
    const Tape::Id x1 = tape_->layer_norm(tape_->add(x, msa), param_id(blk.ln1_gain),
                                          param_id(blk.ln1_bias), cfg.epsilon);
    Tape::Id mlp = linear(x1, blk.mlp_w1, blk.mlp_b1);
    mlp = tape_->gelu(mlp);
    mlp = linear(mlp, blk.mlp_w2, blk.mlp_b2);
    if (cfg.dropout_rate > 0.0) mlp = tape_->dropout(mlp, cfg.dropout_rate, dropout_rng_);
    x = tape_->layer_norm(tape_->add(x1, mlp), param_id(blk.ln2_gain),
                          param_id(blk.ln2_bias), cfg.epsilon);
  }
  return x;
}

ModelGraph::HeadsOut ModelGraph::heads(Tape::Id rows, NormMode mode, bool update_stats,
                                       const std::vector<uint8_t>& row_valid) {
  const ModelConfig& cfg = params_->config;
  auto trunk = [&](HeadParams& h) {
    Tape::Id t = linear(rows, h.fc1_w, h.fc1_b);
    t = tape_->batch_norm(t, param_id(h.bn1_gain), param_id(h.bn1_bias), h.bn1, mode,
                          cfg.epsilon, kBatchNormMomentum, row_valid, update_stats);
    t = tape_->relu(t);
    t = linear(t, h.fc2_w, h.fc2_b);
    t = tape_->batch_norm(t, param_id(h.bn2_gain), param_id(h.bn2_bias), h.bn2, mode,
                          cfg.epsilon, kBatchNormMomentum, row_valid, update_stats);
    t = tape_->relu(t);
    return tape_->add_row_vec(tape_->matmul(t, param_id(h.out_w)), param_id(h.out_b));
  };

  HeadsOut out;
  const Tape::Id cls_logits = trunk(params_->cls_head);
  out.cls_probs = tape_->softmax(cls_logits, 1);
  out.p_event = tape_->slice_cols(out.cls_probs, 1, 2);
  out.reg = trunk(params_->reg_head);
  return out;
}

void ModelGraph::sgd_step(double lr) {
  for (auto& [tensor, id] : bound_) {
    const Tensor& g = tape_->grad(id);
    for (int64_t i = 0; i < g.size(); ++i) {
      if (!std::isfinite(g.data()[i])) {
        throw std::runtime_error("sgd_step: non-finite gradient encountered");
      }
      tensor->data()[i] -= lr * g.data()[i];
    }
  }
}

std::vector<TimestepPrediction> forward(const Tensor& features, ModelParams& params,
                                        NormMode mode) {
  Tape tape;
  ModelGraph graph(tape, params, /*params_require_grad=*/false);
  const Tape::Id encoded = graph.encode(features);
  const ModelGraph::HeadsOut heads =
      graph.heads(encoded, mode, /*update_stats=*/mode == NormMode::kTrain);

  const Tensor& p = tape.value(heads.p_event);
  const Tensor& reg = tape.value(heads.reg);
  std::vector<TimestepPrediction> out(static_cast<size_t>(features.dim(0)));
  for (int t = 0; t < features.dim(0); ++t) {
    out[static_cast<size_t>(t)] =
        TimestepPrediction{reg.at(t, 0), reg.at(t, 1), p.at(t, 0)};
  }
  return out;
}

}  // namespace atal
