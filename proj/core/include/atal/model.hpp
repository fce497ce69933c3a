#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "atal/tape.hpp"
#include "atal/tensor.hpp"

namespace atal {

/// Architecture hyperparameters. Defaults are the full-scale network; tests
/// shrink everything for tractability.
struct ModelConfig {
  int feature_dim = 2048;
  int num_heads = 16;
  int ff_dim = 168;
  int num_encoder_blocks = 1;
  int head_hidden_1 = 1024;
  int head_hidden_2 = 512;
  int num_classes = 2;
  double dropout_rate = 0.0;
  double epsilon = 1e-5;
  uint64_t seed = 0;

  void validate() const;
  int head_dim() const { return feature_dim / num_heads; }
};

/// Per-timestep output triple: distances (seconds) to the enclosing action's
/// start and end, and the probability that the behavior is present.
struct TimestepPrediction {
  double d_start_s = 0.0;
  double d_end_s = 0.0;
  double p_event = 0.0;
};

/// Sinusoidal encoding: row `pos` holds sin(pos/10000^(2i/d)) at column 2i
/// and cos of the same argument at column 2i+1. Requires even d.
Tensor positional_encoding(int timesteps, int dim);

struct EncoderBlockParams {
  Tensor w_q, w_k, w_v;  // [d x d] projections, bias-free
  Tensor w_o, b_o;       // post-attention linear
  Tensor mlp_w1, mlp_b1;
  Tensor mlp_w2, mlp_b2;
  Tensor ln1_gain, ln1_bias;
  Tensor ln2_gain, ln2_bias;
};

/// One prediction head: linear -> batch-norm -> ReLU -> linear -> batch-norm
/// -> ReLU -> final linear. Classification and regression each own a full
/// trunk; only the final width differs.
struct HeadParams {
  Tensor fc1_w, fc1_b, bn1_gain, bn1_bias;
  Tensor fc2_w, fc2_b, bn2_gain, bn2_bias;
  Tensor out_w, out_b;
  BatchNormState bn1, bn2;
};

struct ModelParams {
  ModelConfig config;
  std::vector<EncoderBlockParams> blocks;
  HeadParams cls_head, reg_head;

  /// Visits every learnable tensor in a fixed order; this order defines the
  /// checkpoint layout and the tape binding.
  template <typename F>
  void visit(F&& f) {
    for (size_t b = 0; b < blocks.size(); ++b) {
      const std::string p = "block" + std::to_string(b) + ".";
      EncoderBlockParams& blk = blocks[b];
      f(p + "w_q", blk.w_q);
      f(p + "w_k", blk.w_k);
      f(p + "w_v", blk.w_v);
      f(p + "w_o", blk.w_o);
      f(p + "b_o", blk.b_o);
      f(p + "mlp_w1", blk.mlp_w1);
      f(p + "mlp_b1", blk.mlp_b1);
      f(p + "mlp_w2", blk.mlp_w2);
      f(p + "mlp_b2", blk.mlp_b2);
      f(p + "ln1_gain", blk.ln1_gain);
      f(p + "ln1_bias", blk.ln1_bias);
      f(p + "ln2_gain", blk.ln2_gain);
      f(p + "ln2_bias", blk.ln2_bias);
    }
    auto head = [&](const std::string& p, HeadParams& h) {
      f(p + "fc1_w", h.fc1_w);
      f(p + "fc1_b", h.fc1_b);
      f(p + "bn1_gain", h.bn1_gain);
      f(p + "bn1_bias", h.bn1_bias);
      f(p + "fc2_w", h.fc2_w);
      f(p + "fc2_b", h.fc2_b);
      f(p + "bn2_gain", h.bn2_gain);
      f(p + "bn2_bias", h.bn2_bias);
      f(p + "out_w", h.out_w);
      f(p + "out_b", h.out_b);
    };
    head("cls.", cls_head);
    head("reg.", reg_head);
  }

  template <typename F>
  void visit(F&& f) const {
    const_cast<ModelParams*>(this)->visit(
        [&](const std::string& name, Tensor& t) { f(name, static_cast<const Tensor&>(t)); });
  }

  template <typename F>
  void visit_norm_states(F&& f) {
    f("cls.bn1", cls_head.bn1);
    f("cls.bn2", cls_head.bn2);
    f("reg.bn1", reg_head.bn1);
    f("reg.bn2", reg_head.bn2);
  }

  template <typename F>
  void visit_norm_states(F&& f) const {
    const_cast<ModelParams*>(this)->visit_norm_states(
        [&](const std::string& name, BatchNormState& s) {
          f(name, static_cast<const BatchNormState&>(s));
        });
  }

  int64_t parameter_count() const;
};

/// Deterministic initialization: weights uniform in +-sqrt(6/(fan_in+fan_out)),
/// biases zero, normalization gains one.
ModelParams init_params(const ModelConfig& config, uint64_t seed);

/// Builds the network on a caller-owned tape. Parameters are bound as leaves
/// once at construction; gradients are read back through param_id().
/// `dropout_stream` decorrelates dropout masks between graphs built from the
/// same parameters (one stream per training batch).
class ModelGraph {
 public:
  ModelGraph(Tape& tape, ModelParams& params, bool params_require_grad,
             uint64_t dropout_stream = 0);

  /// Positional encoding plus the encoder stack for one video. `valid` flags
  /// real timesteps (empty means all valid); padded key positions are
  /// excluded from attention by additive -inf logits. Rejects inputs whose
  /// width differs from the configured feature dimension and sequences with
  /// no valid timestep.
  Tape::Id encode(const Tensor& features, const std::vector<uint8_t>& valid = {},
                  bool add_positional_encoding = true,
                  std::vector<Tape::Id>* attention_probs = nullptr);

  struct HeadsOut {
    Tape::Id cls_probs;  // [R x num_classes], rows sum to 1
    Tape::Id p_event;    // [R x 1], probability of the behavior class
    Tape::Id reg;        // [R x 2], raw (d_start, d_end) in seconds
  };
  /// Runs both heads over a row matrix (concatenated timesteps). In train
  /// mode batch-norm statistics come from the rows flagged valid.
  HeadsOut heads(Tape::Id rows, NormMode mode, bool update_stats = true,
                 const std::vector<uint8_t>& row_valid = {});

  Tape::Id param_id(const Tensor& t) const;
  Tape& tape() { return *tape_; }

  /// p <- p - lr * dp for every bound parameter. Rejects non-finite gradients.
  void sgd_step(double lr);

 private:
  Tape::Id linear(Tape::Id x, const Tensor& w, const Tensor& b);

  Tape* tape_;
  ModelParams* params_;
  std::vector<std::pair<Tensor*, Tape::Id>> bound_;
  std::unordered_map<const Tensor*, Tape::Id> index_;
  Rng dropout_rng_;
};

/// Single-sequence forward pass: positional encoding, encoder blocks, heads.
/// Output length equals input length.
std::vector<TimestepPrediction> forward(const Tensor& features, ModelParams& params,
                                        NormMode mode = NormMode::kInfer);

}  // namespace atal
