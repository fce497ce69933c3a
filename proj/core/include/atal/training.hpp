#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "atal/dataset.hpp"
#include "atal/model.hpp"
#include "atal/tape.hpp"
#include "atal/tensor.hpp"

namespace atal {

struct TrainConfig {
  int epochs = 100;
  int batch_size = 10;
  double learning_rate = 1e-3;
  double plateau_factor = 0.01;
  int plateau_patience = 5;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double regression_weight = 1.0;
  uint64_t seed = 0;

  void validate() const;
};

/// Per-timestep supervision derived from one annotation track. The regression
/// targets are boundary distances in seconds, defined only where reg_mask is
/// on (inside a ground-truth segment).
struct TimestepTargets {
  std::vector<uint8_t> labels;
  Tensor reg_targets;  // [T x 2]: (distance to start, distance to end)
  std::vector<uint8_t> reg_mask;
  std::vector<uint8_t> valid;
};

/// Label 1 where the timestep center lies inside a segment; there the targets
/// are (t - start, end - t). Track segments must be sorted and disjoint
/// (merge_track guarantees this).
TimestepTargets make_targets(const AnnotationTrack& track,
                             const std::vector<double>& time_grid);

// -- losses -------------------------------------------------------------------
// Each loss exists twice: a tape builder used by training (differentiable) and
// a plain scalar reference. Tests hold the two against each other.

/// Mean over valid timesteps of -alpha_t (1-p_t)^gamma log(p_t), where p_t is
/// the probability assigned to the true class; alpha_t is `alpha` for
/// positives and 1-alpha for negatives, or identically 1 when `balanced` is
/// off. Probabilities are clamped to [1e-7, 1-1e-7].
Tape::Id focal_loss_node(Tape& tape, Tape::Id p_event,
                         const std::vector<uint8_t>& labels, double alpha,
                         double gamma, const std::vector<uint8_t>& valid,
                         bool balanced = true);
double focal_loss(const std::vector<double>& p_event,
                  const std::vector<uint8_t>& labels, double alpha, double gamma,
                  const std::vector<uint8_t>& valid, bool balanced = true);

/// Mean squared error over masked-on timesteps and both offset components;
/// exactly zero (with zero gradient) when the mask is empty.
Tape::Id regression_loss_node(Tape& tape, Tape::Id reg_out, const Tensor& targets,
                              const std::vector<uint8_t>& reg_mask);
double regression_loss(const Tensor& pred, const Tensor& targets,
                       const std::vector<uint8_t>& reg_mask);

Tape::Id total_loss_node(Tape& tape, Tape::Id cls_loss, Tape::Id reg_loss,
                         double regression_weight);
double total_loss(double cls_loss, double reg_loss, double regression_weight);

/// p <- p - lr*g. Rejects non-finite gradients.
void sgd_step(Tensor& param, const Tensor& grad, double lr);

// -- learning-rate schedule -----------------------------------------------------

/// Multiplies the rate by `factor` whenever the best-so-far loss fails to
/// strictly improve for `patience` consecutive observations, then resets the
/// counter. The rate never increases.
class PlateauScheduler {
 public:
  PlateauScheduler(double initial_lr, double factor, int patience);

  /// Records one epoch-mean loss; returns the rate for subsequent epochs.
  double observe(double loss);
  double lr() const { return lr_; }

 private:
  double lr_;
  double factor_;
  int patience_;
  double best_;
  int bad_epochs_ = 0;
  bool has_best_ = false;
};

/// Pure replay of the schedule over a full loss history.
double plateau_schedule(const std::vector<double>& loss_history, double initial_lr,
                        double factor, int patience);

// -- training loop -----------------------------------------------------------------

struct TrainVideo {
  std::string video_id;
  Tensor features;  // [T x feature_dim]
  TimestepTargets targets;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double cls_loss = 0.0;
  double reg_loss = 0.0;
  double total_loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochRecord> log;
};

/// Seeded shuffle each epoch, zero-padded batches with validity masks,
/// forward/backward/SGD per batch, plateau schedule on the epoch-mean total
/// loss. Aborts with diagnostics if a loss goes non-finite.
TrainResult train(const std::vector<TrainVideo>& videos, const ModelConfig& model_config,
                  const TrainConfig& train_config);

/// One record per epoch: epoch, cls, reg, total, lr; tab-separated with a
/// leading '#' header comment. Byte-deterministic for identical runs.
std::string format_train_log(const std::vector<EpochRecord>& log);

}  // namespace atal
