#include "atal/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "atal/rng.hpp"
#include "atal/text.hpp"

namespace atal {

namespace {
constexpr double kProbClamp = 1e-7;

Tensor column(const std::vector<uint8_t>& v) {
  Tensor t({static_cast<int>(v.size()), 1});
  for (size_t i = 0; i < v.size(); ++i) t.data()[i] = v[i] ? 1.0 : 0.0;
  return t;
}

int count_on(const std::vector<uint8_t>& v) {
  int n = 0;
  for (uint8_t x : v) n += x ? 1 : 0;
  return n;
}
}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("train config: " + msg); };
  if (epochs < 1) fail("epochs must be positive");
  if (batch_size < 1) fail("batch_size must be positive");
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) fail("plateau_factor must be in (0,1)");
  if (plateau_patience < 1) fail("plateau_patience must be at least 1");
  if (!(focal_alpha > 0.0 && focal_alpha <= 1.0)) fail("focal_alpha must be in (0,1]");
  if (focal_gamma < 0.0) fail("focal_gamma must be non-negative");
  if (regression_weight < 0.0) fail("regression_weight must be non-negative");
}

TimestepTargets make_targets(const AnnotationTrack& track,
                             const std::vector<double>& time_grid) {
  if (time_grid.empty()) {
    throw std::invalid_argument("make_targets: empty timestep grid");
  }
  const int T = static_cast<int>(time_grid.size());
  TimestepTargets out;
  out.labels.assign(static_cast<size_t>(T), 0);
  out.reg_targets = Tensor({T, 2});
  out.reg_mask.assign(static_cast<size_t>(T), 0);
  out.valid.assign(static_cast<size_t>(T), 1);
  for (int t = 0; t < T; ++t) {
    const double tc = time_grid[static_cast<size_t>(t)];
    for (const Segment& s : track.segments) {
      if (tc < s.start_s) break;  // segments sorted
      if (tc <= s.end_s) {
        out.labels[static_cast<size_t>(t)] = 1;
        out.reg_mask[static_cast<size_t>(t)] = 1;
        out.reg_targets.at(t, 0) = tc - s.start_s;
        out.reg_targets.at(t, 1) = s.end_s - tc;
        break;
      }
    }
  }
  return out;
}

// -- focal loss ---------------------------------------------------------------

namespace {
// Shared setup for both focal paths: element weights alpha_t and the count of
// valid timesteps.
struct FocalSetup {
  std::vector<double> alpha_t;
  int n_valid = 0;
};

FocalSetup focal_setup(size_t n, const std::vector<uint8_t>& labels, double alpha,
                       const std::vector<uint8_t>& valid, bool balanced) {
  if (labels.size() != n || valid.size() != n) {
    throw std::invalid_argument("focal_loss: labels/valid length mismatch");
  }
  FocalSetup s;
  s.alpha_t.resize(n);
  for (size_t i = 0; i < n; ++i) {
    s.alpha_t[i] = balanced ? (labels[i] ? alpha : 1.0 - alpha) : 1.0;
    s.n_valid += valid[i] ? 1 : 0;
  }
  if (s.n_valid == 0) throw std::invalid_argument("focal_loss: no valid timesteps");
  return s;
}
}  // namespace

Tape::Id focal_loss_node(Tape& tape, Tape::Id p_event,
                         const std::vector<uint8_t>& labels, double alpha,
                         double gamma, const std::vector<uint8_t>& valid,
                         bool balanced) {
  const Tensor& p = tape.value(p_event);
  if (p.rank() != 2 || p.dim(1) != 1) {
    throw std::invalid_argument("focal_loss: expected [T x 1] probabilities, got " +
                                p.shape_string());
  }
  const size_t n = static_cast<size_t>(p.dim(0));
  const FocalSetup setup = focal_setup(n, labels, alpha, valid, balanced);

  const Tape::Id y = tape.constant(column(labels));
  std::vector<uint8_t> not_labels(n);
  for (size_t i = 0; i < n; ++i) not_labels[i] = labels[i] ? 0 : 1;
  const Tape::Id y_neg = tape.constant(column(not_labels));

  // p_true = y*p + (1-y)*(1-p), clamped away from {0,1}.
  const Tape::Id one_minus_p = tape.add_const(tape.scale(p_event, -1.0), 1.0);
  Tape::Id p_true = tape.add(tape.mul(y, p_event), tape.mul(y_neg, one_minus_p));
  p_true = tape.clamp(p_true, kProbClamp, 1.0 - kProbClamp);

  const Tape::Id focal_w = tape.pow_const(
      tape.add_const(tape.scale(p_true, -1.0), 1.0), gamma);
  Tensor alpha_col({static_cast<int>(n), 1});
  for (size_t i = 0; i < n; ++i) alpha_col.data()[i] = setup.alpha_t[i];
  const Tape::Id weights = tape.mul(tape.constant(std::move(alpha_col)), focal_w);

  Tape::Id term = tape.mul(weights, tape.log(p_true));
  term = tape.mul(tape.constant(column(valid)), term);
  return tape.scale(tape.sum_all(term), -1.0 / setup.n_valid);
}

double focal_loss(const std::vector<double>& p_event,
                  const std::vector<uint8_t>& labels, double alpha, double gamma,
                  const std::vector<uint8_t>& valid, bool balanced) {
  const FocalSetup setup = focal_setup(p_event.size(), labels, alpha, valid, balanced);
  double sum = 0.0;
  for (size_t i = 0; i < p_event.size(); ++i) {
    if (!valid[i]) continue;
    double pt = labels[i] ? p_event[i] : 1.0 - p_event[i];
    pt = std::min(1.0 - kProbClamp, std::max(kProbClamp, pt));
    sum += -setup.alpha_t[i] * std::pow(1.0 - pt, gamma) * std::log(pt);
  }
  return sum / setup.n_valid;
}

// -- regression loss ------------------------------------------------------------

Tape::Id regression_loss_node(Tape& tape, Tape::Id reg_out, const Tensor& targets,
                              const std::vector<uint8_t>& reg_mask) {
  // Note: tape.value() references go stale after the next recorded node, so
  // everything needed later is copied out first.
  const std::vector<int> pred_shape = tape.value(reg_out).shape();
  check_same_shape(tape.value(reg_out), targets, "regression_loss");
  if (pred_shape.size() != 2 || static_cast<int>(reg_mask.size()) != pred_shape[0]) {
    throw std::invalid_argument("regression_loss: mask length does not match rows");
  }
  const int n_on = count_on(reg_mask);
  if (n_on == 0) {
    return tape.constant(Tensor::scalar(0.0));
  }
  Tensor mask({static_cast<int>(reg_mask.size())});
  for (size_t i = 0; i < reg_mask.size(); ++i) mask.at(static_cast<int>(i)) = reg_mask[i] ? 1.0 : 0.0;
  const Tape::Id diff = tape.sub(reg_out, tape.constant(targets));
  const Tape::Id sq = tape.mul(diff, diff);
  const Tape::Id masked = tape.mul_col_vec(sq, tape.constant(std::move(mask)));
  return tape.scale(tape.sum_all(masked),
                    1.0 / (static_cast<double>(n_on) * pred_shape[1]));
}

double regression_loss(const Tensor& pred, const Tensor& targets,
                       const std::vector<uint8_t>& reg_mask) {
  check_same_shape(pred, targets, "regression_loss");
  if (pred.rank() != 2 || static_cast<int>(reg_mask.size()) != pred.dim(0)) {
    throw std::invalid_argument("regression_loss: mask length does not match rows");
  }
  const int n_on = count_on(reg_mask);
  if (n_on == 0) return 0.0;
  double sum = 0.0;
  for (int i = 0; i < pred.dim(0); ++i) {
    if (!reg_mask[static_cast<size_t>(i)]) continue;
    for (int j = 0; j < pred.dim(1); ++j) {
      const double d = pred.at(i, j) - targets.at(i, j);
      sum += d * d;
    }
  }
  return sum / (static_cast<double>(n_on) * pred.dim(1));
}

Tape::Id total_loss_node(Tape& tape, Tape::Id cls_loss, Tape::Id reg_loss,
                         double regression_weight) {
  return tape.add(cls_loss, tape.scale(reg_loss, regression_weight));
}

double total_loss(double cls_loss, double reg_loss, double regression_weight) {
  if (!std::isfinite(cls_loss) || !std::isfinite(reg_loss)) {
    throw std::runtime_error("total_loss: non-finite constituent loss");
  }
  return cls_loss + regression_weight * reg_loss;
}

void sgd_step(Tensor& param, const Tensor& grad, double lr) {
  check_same_shape(param, grad, "sgd_step");
  for (int64_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad.data()[i])) {
      throw std::runtime_error("sgd_step: non-finite gradient at element " +
                               std::to_string(i));
    }
  }
  for (int64_t i = 0; i < param.size(); ++i) param.data()[i] -= lr * grad.data()[i];
}

// -- scheduler ---------------------------------------------------------------------

PlateauScheduler::PlateauScheduler(double initial_lr, double factor, int patience)
    : lr_(initial_lr), factor_(factor), patience_(patience), best_(0.0) {
  if (!(initial_lr > 0.0)) throw std::invalid_argument("scheduler: lr must be positive");
  if (!(factor > 0.0 && factor < 1.0)) throw std::invalid_argument("scheduler: factor must be in (0,1)");
  if (patience < 1) throw std::invalid_argument("scheduler: patience must be at least 1");
}

double PlateauScheduler::observe(double loss) {
  if (!has_best_ || loss < best_) {
    best_ = loss;
    has_best_ = true;
    bad_epochs_ = 0;
  } else {
    ++bad_epochs_;
    if (bad_epochs_ >= patience_) {
      lr_ *= factor_;
      bad_epochs_ = 0;
    }
  }
  return lr_;
}

double plateau_schedule(const std::vector<double>& loss_history, double initial_lr,
                        double factor, int patience) {
  if (loss_history.empty()) {
    throw std::invalid_argument("scheduler: loss history must be non-empty");
  }
  PlateauScheduler s(initial_lr, factor, patience);
  double lr = initial_lr;
  for (double v : loss_history) lr = s.observe(v);
  return lr;
}

// -- training loop -------------------------------------------------------------------

namespace {

struct BatchLoss {
  double cls = 0.0;
  double reg = 0.0;
  double total = 0.0;
};

BatchLoss run_batch(ModelParams& params, const std::vector<const TrainVideo*>& batch,
                    const TrainConfig& cfg, double lr, uint64_t step_index) {
  const int t_max = (*std::max_element(batch.begin(), batch.end(),
                                       [](const TrainVideo* a, const TrainVideo* b) {
                                         return a->features.dim(0) < b->features.dim(0);
                                       }))
                        ->features.dim(0);
  const int d = params.config.feature_dim;

  Tape tape;
  ModelGraph graph(tape, params, /*params_require_grad=*/true, step_index);

  std::vector<Tape::Id> encoded;
  std::vector<uint8_t> row_valid, row_labels, row_reg_mask;
  Tensor reg_targets({static_cast<int>(batch.size()) * t_max, 2});
  int row0 = 0;
  for (const TrainVideo* video : batch) {
    const int T = video->features.dim(0);
    Tensor padded({t_max, d});
    for (int t = 0; t < T; ++t)
      for (int j = 0; j < d; ++j) padded.at(t, j) = video->features.at(t, j);
    std::vector<uint8_t> valid(static_cast<size_t>(t_max), 0);
    bool all_valid = T == t_max;
    for (int t = 0; t < T; ++t) {
      valid[static_cast<size_t>(t)] = video->targets.valid[static_cast<size_t>(t)];
      all_valid = all_valid && valid[static_cast<size_t>(t)];
    }
    encoded.push_back(graph.encode(padded, all_valid ? std::vector<uint8_t>{} : valid));

    for (int t = 0; t < t_max; ++t) {
      const bool real = t < T;
      row_valid.push_back(real ? video->targets.valid[static_cast<size_t>(t)] : 0);
      row_labels.push_back(real ? video->targets.labels[static_cast<size_t>(t)] : 0);
      row_reg_mask.push_back(real ? video->targets.reg_mask[static_cast<size_t>(t)] : 0);
      reg_targets.at(row0 + t, 0) = real ? video->targets.reg_targets.at(t, 0) : 0.0;
      reg_targets.at(row0 + t, 1) = real ? video->targets.reg_targets.at(t, 1) : 0.0;
    }
    row0 += t_max;
  }

  const Tape::Id rows = encoded.size() == 1 ? encoded[0] : tape.concat_rows(encoded);
  const ModelGraph::HeadsOut heads =
      graph.heads(rows, NormMode::kTrain, /*update_stats=*/true, row_valid);

  const Tape::Id cls = focal_loss_node(tape, heads.p_event, row_labels, cfg.focal_alpha,
                                       cfg.focal_gamma, row_valid);
  const Tape::Id reg = regression_loss_node(tape, heads.reg, reg_targets, row_reg_mask);
  const Tape::Id total = total_loss_node(tape, cls, reg, cfg.regression_weight);

  BatchLoss out{tape.value(cls).at(0), tape.value(reg).at(0), tape.value(total).at(0)};
  if (!std::isfinite(out.total)) {
    throw std::runtime_error("non-finite loss");
  }
  tape.backward(total);
  graph.sgd_step(lr);
  return out;
}

}  // namespace

TrainResult train(const std::vector<TrainVideo>& videos, const ModelConfig& model_config,
                  const TrainConfig& train_config) {
  model_config.validate();
  train_config.validate();
  if (videos.empty()) throw std::invalid_argument("train: empty dataset");
  for (const TrainVideo& v : videos) {
    if (v.features.dim(1) != model_config.feature_dim) {
      throw std::invalid_argument("train: video " + v.video_id + " has feature dim " +
                                  std::to_string(v.features.dim(1)) + ", config expects " +
                                  std::to_string(model_config.feature_dim));
    }
  }

  TrainResult result;
  result.params = init_params(model_config, model_config.seed);

  Rng shuffle_rng(derive_seed(train_config.seed, "shuffle"));
  PlateauScheduler scheduler(train_config.learning_rate, train_config.plateau_factor,
                             train_config.plateau_patience);
  double lr = train_config.learning_rate;

  std::vector<size_t> order(videos.size());
  std::iota(order.begin(), order.end(), 0);

  uint64_t step_index = 0;
  for (int epoch = 1; epoch <= train_config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double sum_cls = 0.0, sum_reg = 0.0, sum_total = 0.0;
    int batches = 0;
    for (size_t b0 = 0; b0 < order.size(); b0 += static_cast<size_t>(train_config.batch_size)) {
      std::vector<const TrainVideo*> batch;
      for (size_t i = b0; i < std::min(order.size(), b0 + static_cast<size_t>(train_config.batch_size)); ++i) {
        batch.push_back(&videos[order[i]]);
      }
      BatchLoss loss;
      try {
        loss = run_batch(result.params, batch, train_config, lr, ++step_index);
      } catch (const std::exception& e) {
        std::string ids;
        for (const TrainVideo* v : batch) ids += (ids.empty() ? "" : ",") + v->video_id;
        throw std::runtime_error("epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(batches) + " [" + ids + "]: " + e.what());
      }
      sum_cls += loss.cls;
      sum_reg += loss.reg;
      sum_total += loss.total;
      ++batches;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.cls_loss = sum_cls / batches;
    rec.reg_loss = sum_reg / batches;
    rec.total_loss = sum_total / batches;
    rec.lr = lr;
    result.log.push_back(rec);
    lr = scheduler.observe(rec.total_loss);
  }
  return result;
}

std::string format_train_log(const std::vector<EpochRecord>& log) {
  std::string out = "# epoch\tcls_loss\treg_loss\ttotal_loss\tlr\n";
  for (const EpochRecord& r : log) {
    out += std::to_string(r.epoch);
    out += '\t';
    out += fmt_double(r.cls_loss);
    out += '\t';
    out += fmt_double(r.reg_loss);
    out += '\t';
    out += fmt_double(r.total_loss);
    out += '\t';
    out += fmt_double(r.lr);
    out += '\n';
  }
  return out;
}

}  // namespace atal
