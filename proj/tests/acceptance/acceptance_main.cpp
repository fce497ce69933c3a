// Acceptance suite: one self-contained check per criterion, one PASS/FAIL
// line each. Exits nonzero if anything fails. Run a single criterion with
// `acceptance --only N`.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "atal/checkpoint.hpp"
#include "atal/dataset.hpp"
#include "atal/evaluation.hpp"
#include "atal/model.hpp"
#include "atal/postprocess.hpp"
#include "atal/rng.hpp"
#include "atal/tape.hpp"
#include "atal/training.hpp"

using namespace atal;
namespace fs = std::filesystem;

namespace {

struct Check {
  int id;
  std::string name;
  std::function<bool(std::string&)> run;
};

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max(std::abs(a) + std::abs(b), 1e-6);
}

ModelConfig desk_config(int feature_dim, int heads, int ff, int h1, int h2, uint64_t seed) {
  ModelConfig cfg;
  cfg.feature_dim = feature_dim;
  cfg.num_heads = heads;
  cfg.ff_dim = ff;
  cfg.num_encoder_blocks = 1;
  cfg.head_hidden_1 = h1;
  cfg.head_hidden_2 = h2;
  cfg.seed = seed;
  return cfg;
}

Tensor gaussian_tensor(std::vector<int> shape, uint64_t seed) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.next_gaussian();
  return t;
}

// ---------------------------------------------------------------------------
// 1. gradient correctness
// ---------------------------------------------------------------------------

bool check_gradients(std::string& detail) {
  const auto start = std::chrono::steady_clock::now();
  ModelConfig cfg = desk_config(8, 2, 16, 8, 4, 301);
  ModelParams params = init_params(cfg, cfg.seed);
  const int T = 6;
  const Tensor features = gaussian_tensor({T, cfg.feature_dim}, 302);
  const std::vector<uint8_t> labels = {0, 1, 1, 0, 1, 0};
  const std::vector<uint8_t> valid(T, 1);
  Tensor reg_targets({T, 2});
  for (int t = 0; t < T; ++t) {
    reg_targets.at(t, 0) = 0.5 + 0.3 * t;
    reg_targets.at(t, 1) = 2.0 - 0.2 * t;
  }

  Tape tape;
  ModelGraph graph(tape, params, true);
  const Tape::Id enc = graph.encode(features);
  const auto heads = graph.heads(enc, NormMode::kTrain, false, valid);
  const Tape::Id cls = focal_loss_node(tape, heads.p_event, labels, 0.25, 2.0, valid);
  const Tape::Id reg = regression_loss_node(tape, heads.reg, reg_targets, labels);
  const Tape::Id total = total_loss_node(tape, cls, reg, 1.0);
  tape.backward(total);

  int checked = 0;
  double worst = 0.0;
  bool ok = true;
  params.visit([&](const std::string& name, Tensor& t) {
    const Tape::Id id = graph.param_id(t);
    const Tensor analytic = tape.grad(id);
    for (int64_t e = 0; e < t.size(); ++e) {
      const Tensor base = tape.value(id);
      Tensor plus = base, minus = base;
      const double h = 1e-5;
      plus.data()[e] += h;
      minus.data()[e] -= h;
      tape.set_leaf(id, plus);
      tape.replay();
      const double fp = tape.value(total).at(0);
      tape.set_leaf(id, minus);
      tape.replay();
      const double fm = tape.value(total).at(0);
      tape.set_leaf(id, base);
      const double fd = (fp - fm) / (2.0 * h);
      const double err = rel_err(analytic.data()[e], fd);
      worst = std::max(worst, err);
      ++checked;
      if (err >= 1e-4) {
        ok = false;
        detail += " mismatch at " + name + "[" + std::to_string(e) + "]";
      }
    }
  });
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  detail = std::to_string(checked) + " parameters, worst rel err " + std::to_string(worst) +
           ", " + std::to_string(seconds) + " s" + detail;
  return ok && seconds < 60.0;
}

// ---------------------------------------------------------------------------
// 2. attention invariants
// ---------------------------------------------------------------------------

bool check_attention(std::string& detail) {
  ModelConfig cfg = desk_config(8, 2, 16, 8, 4, 311);
  cfg.num_encoder_blocks = 2;
  ModelParams params = init_params(cfg, cfg.seed);

  // Weight rows over unmasked keys sum to 1; masked keys get exactly zero.
  for (uint64_t seed : {1u, 2u, 3u}) {
    const int T = 9;
    Rng mask_rng(seed);
    std::vector<uint8_t> valid(T, 1);
    for (int t = 0; t < T; ++t) valid[static_cast<size_t>(t)] = mask_rng.next_double() < 0.7;
    valid[0] = 1;
    Tape tape;
    ModelGraph graph(tape, params, false);
    std::vector<Tape::Id> probs;
    graph.encode(gaussian_tensor({T, cfg.feature_dim}, 320 + seed), valid, true, &probs);
    for (Tape::Id p : probs) {
      const Tensor& w = tape.value(p);
      for (int i = 0; i < T; ++i) {
        double sum = 0.0;
        for (int j = 0; j < T; ++j) {
          if (!valid[static_cast<size_t>(j)] && w.at(i, j) != 0.0) {
            detail = "masked key received nonzero weight";
            return false;
          }
          sum += w.at(i, j);
        }
        if (std::abs(sum - 1.0) >= 1e-9) {
          detail = "row sum off by " + std::to_string(std::abs(sum - 1.0));
          return false;
        }
      }
    }
  }

  // Permutation equivariance without positional encoding (inference-mode
  // normalization); the two-block encoder plus heads permute with the input.
  {
    Tape warm_tape;
    ModelGraph warm(warm_tape, params, false);
    warm.heads(warm.encode(gaussian_tensor({16, cfg.feature_dim}, 331)), NormMode::kTrain,
               true);
  }
  const int T = 11;
  const Tensor x = gaussian_tensor({T, cfg.feature_dim}, 332);
  std::vector<int> perm(T);
  for (int i = 0; i < T; ++i) perm[static_cast<size_t>(i)] = i;
  Rng rng(333);
  rng.shuffle(perm);
  Tensor xp({T, cfg.feature_dim});
  for (int i = 0; i < T; ++i)
    for (int j = 0; j < cfg.feature_dim; ++j)
      xp.at(i, j) = x.at(perm[static_cast<size_t>(i)], j);

  auto run = [&](const Tensor& feats) {
    Tape tape;
    ModelGraph graph(tape, params, false);
    const auto heads = graph.heads(graph.encode(feats, {}, false), NormMode::kInfer, false);
    std::vector<double> out;
    for (int t = 0; t < T; ++t) {
      out.push_back(tape.value(heads.p_event).at(t, 0));
      out.push_back(tape.value(heads.reg).at(t, 0));
      out.push_back(tape.value(heads.reg).at(t, 1));
    }
    return out;
  };
  const auto base = run(x);
  const auto permuted = run(xp);
  double max_dev = 0.0;
  for (int i = 0; i < T; ++i) {
    for (int c = 0; c < 3; ++c) {
      max_dev = std::max(
          max_dev, std::abs(permuted[static_cast<size_t>(3 * i + c)] -
                            base[static_cast<size_t>(3 * perm[static_cast<size_t>(i)] + c)]));
    }
  }
  detail = "max equivariance deviation " + std::to_string(max_dev);
  return max_dev < 1e-9;
}

// ---------------------------------------------------------------------------
// 3. decode/target round trip
// ---------------------------------------------------------------------------

bool check_roundtrip(std::string& detail) {
  Rng rng(341);
  int checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    // Tracks on a dyadic grid so the constructed offsets subtract exactly.
    const double quantum = 1.0 / 1024.0;
    std::vector<Segment> segs;
    double cursor = 0.0;
    const int n = static_cast<int>(rng.uniform_int(1, 5));
    for (int i = 0; i < n; ++i) {
      const double start = cursor + static_cast<double>(rng.uniform_int(1, 300)) * quantum;
      const double end = start + static_cast<double>(rng.uniform_int(1, 500)) * quantum;
      segs.push_back({start, end});
      cursor = end + quantum;
    }
    const AnnotationTrack track = merge_track("v", "look_face", segs);
    std::vector<double> grid;
    const int steps = static_cast<int>(rng.uniform_int(16, 96));
    const int stride = static_cast<int>(rng.uniform_int(3, 40));
    for (int i = 0; i < steps; ++i) grid.push_back(static_cast<double>(i * stride) * quantum);

    const TimestepTargets targets = make_targets(track, grid);
    std::vector<TimestepPrediction> preds(grid.size());
    for (size_t t = 0; t < grid.size(); ++t) {
      preds[t] = TimestepPrediction{targets.reg_targets.at(static_cast<int>(t), 0),
                                    targets.reg_targets.at(static_cast<int>(t), 1),
                                    targets.reg_mask[t] ? 1.0 : 0.0};
    }
    const auto decoded = decode(preds, grid, 0.5, cursor + 100.0, "look_face");
    size_t k = 0;
    for (size_t t = 0; t < grid.size(); ++t) {
      if (!targets.reg_mask[t]) continue;
      const Segment* enclosing = nullptr;
      for (const Segment& s : track.segments) {
        if (grid[t] >= s.start_s && grid[t] <= s.end_s) enclosing = &s;
      }
      if (!enclosing || k >= decoded.size()) {
        detail = "lost a masked-on timestep";
        return false;
      }
      if (decoded[k].start_s != enclosing->start_s || decoded[k].end_s != enclosing->end_s) {
        detail = "decode mismatch at trial " + std::to_string(trial);
        return false;
      }
      ++k;
      ++checked;
    }
    if (k != decoded.size()) {
      detail = "decode emitted extra segments";
      return false;
    }
  }
  detail = std::to_string(checked) + " masked-on timesteps reproduced exactly";
  return checked > 1000;
}

// ---------------------------------------------------------------------------
// 4. NMS oracle equivalence
// ---------------------------------------------------------------------------

std::vector<ScoredSegment> nms_reference(std::vector<ScoredSegment> cands, double thr) {
  std::sort(cands.begin(), cands.end(), [](const ScoredSegment& a, const ScoredSegment& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.start_s != b.start_s) return a.start_s < b.start_s;
    const double da = a.end_s - a.start_s, db = b.end_s - b.start_s;
    if (da != db) return da < db;
    return a.end_s < b.end_s;
  });
  std::vector<ScoredSegment> kept;
  for (const ScoredSegment& c : cands) {
    bool ok = true;
    for (const ScoredSegment& k : kept) {
      if (t_iou(k, c) > thr) ok = false;
    }
    if (ok) kept.push_back(c);
  }
  return kept;
}

bool check_nms(std::string& detail) {
  Rng rng(351);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<ScoredSegment> cands;
    const int n = static_cast<int>(rng.uniform_int(0, 20));
    for (int i = 0; i < n; ++i) {
      const double s = rng.uniform(0, 40);
      cands.push_back(ScoredSegment{s, s + rng.uniform(0.5, 12),
                                    rng.uniform_int(0, 9) / 10.0 + 0.05, "c"});
    }
    const auto mine = nms(cands, 0.5);
    const auto ref = nms_reference(cands, 0.5);
    if (mine.size() != ref.size()) {
      detail = "size mismatch at trial " + std::to_string(trial);
      return false;
    }
    for (size_t i = 0; i < mine.size(); ++i) {
      if (mine[i].start_s != ref[i].start_s || mine[i].end_s != ref[i].end_s ||
          mine[i].score != ref[i].score) {
        detail = "order/set mismatch at trial " + std::to_string(trial);
        return false;
      }
      for (size_t j = i + 1; j < mine.size(); ++j) {
        if (t_iou(mine[i], mine[j]) > 0.5) {
          detail = "pairwise overlap above 0.5 survived";
          return false;
        }
      }
    }
  }
  detail = "1000 random candidate sets, exact set and order match";
  return true;
}

// ---------------------------------------------------------------------------
// 5. AP oracle equivalence
// ---------------------------------------------------------------------------

double ap_oracle(const PredictionsByVideo& preds, const SegmentsByVideo& gts, double thr) {
  struct P {
    std::string video;
    ScoredSegment s;
  };
  std::vector<P> ranked;
  for (const auto& [video, segs] : preds) {
    for (const ScoredSegment& s : segs) ranked.push_back({video, s});
  }
  std::sort(ranked.begin(), ranked.end(), [](const P& a, const P& b) {
    if (a.s.score != b.s.score) return a.s.score > b.s.score;
    if (a.s.start_s != b.s.start_s) return a.s.start_s < b.s.start_s;
    const double da = a.s.end_s - a.s.start_s, db = b.s.end_s - b.s.start_s;
    if (da != db) return da < db;
    return a.video < b.video;
  });
  size_t n_gt = 0;
  for (const auto& [v, s] : gts) n_gt += s.size();
  if (n_gt == 0 || ranked.empty()) return 0.0;

  auto tp_at = [&](size_t k) {
    std::map<std::string, std::vector<uint8_t>> used;
    for (const auto& [v, s] : gts) used[v].assign(s.size(), 0);
    int tp = 0;
    for (size_t i = 0; i < k; ++i) {
      const P& p = ranked[i];
      auto it = gts.find(p.video);
      if (it == gts.end()) continue;
      int best = -1;
      double best_iou = 0.0;
      for (size_t g = 0; g < it->second.size(); ++g) {
        if (used[p.video][g]) continue;
        const double iou =
            t_iou(p.s.start_s, p.s.end_s, it->second[g].start_s, it->second[g].end_s);
        if (iou > best_iou) {
          best_iou = iou;
          best = static_cast<int>(g);
        }
      }
      if (best >= 0 && best_iou >= thr) {
        used[p.video][static_cast<size_t>(best)] = 1;
        ++tp;
      }
    }
    return tp;
  };

  double ap = 0.0, prev_recall = 0.0;
  for (size_t k = 1; k <= ranked.size(); ++k) {
    const int tp = tp_at(k);
    const double precision = static_cast<double>(tp) / static_cast<double>(k);
    const double recall = static_cast<double>(tp) / static_cast<double>(n_gt);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

bool check_ap(std::string& detail) {
  Rng rng(361);
  for (int trial = 0; trial < 1000; ++trial) {
    SegmentsByVideo gt;
    PredictionsByVideo preds;
    const int videos = static_cast<int>(rng.uniform_int(1, 3));
    const int n_gt = static_cast<int>(rng.uniform_int(1, 5));
    const int n_pred = static_cast<int>(rng.uniform_int(0, 10));
    for (int g = 0; g < n_gt; ++g) {
      const double s = rng.uniform(0, 20);
      gt["v" + std::to_string(rng.uniform_int(0, videos - 1))].push_back(
          {s, s + rng.uniform(0.5, 6)});
    }
    for (int p = 0; p < n_pred; ++p) {
      const double s = rng.uniform(0, 20);
      preds["v" + std::to_string(rng.uniform_int(0, videos - 1))].push_back(
          ScoredSegment{s, s + rng.uniform(0.5, 6), rng.uniform_int(1, 8) / 8.0, "c"});
    }
    double prev = 2.0;
    for (double thr : {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}) {
      const double mine = average_precision(preds, gt, thr).ap;
      const double ref = ap_oracle(preds, gt, thr);
      if (std::abs(mine - ref) > 1e-12) {
        detail = "oracle mismatch " + std::to_string(mine) + " vs " + std::to_string(ref);
        return false;
      }
      if (mine > prev + 1e-12) {
        detail = "AP increased with the threshold";
        return false;
      }
      prev = mine;
    }
  }
  detail = "1000 random instances within 1e-12, threshold-monotone";
  return true;
}

// ---------------------------------------------------------------------------
// 6. loss unit checks
// ---------------------------------------------------------------------------

bool check_losses(std::string& detail) {
  // Focal with gamma 0 and balancing off reduces to cross-entropy.
  Rng rng(371);
  std::vector<double> p(64);
  std::vector<uint8_t> labels(64), valid(64, 1);
  for (size_t i = 0; i < p.size(); ++i) {
    p[i] = rng.uniform(0.02, 0.98);
    labels[i] = rng.next_double() < 0.3 ? 1 : 0;
  }
  const double focal = focal_loss(p, labels, 0.25, 0.0, valid, false);
  double ce = 0.0;
  for (size_t i = 0; i < p.size(); ++i) ce += -std::log(labels[i] ? p[i] : 1.0 - p[i]);
  ce /= static_cast<double>(p.size());
  if (std::abs(focal - ce) >= 1e-9) {
    detail = "cross-entropy reduction off by " + std::to_string(std::abs(focal - ce));
    return false;
  }

  // Single positive at p = 0.5, gamma 2: 0.25 ln 2.
  const double single = focal_loss({0.5}, {1}, 0.25, 2.0, {1}, false);
  if (std::abs(single - 0.25 * std::log(2.0)) >= 1e-5 || std::abs(single - 0.17329) >= 1e-4) {
    detail = "single-point focal value " + std::to_string(single);
    return false;
  }

  // MSE hand trace.
  if (regression_loss(Tensor::from_rows({{1, 1}}), Tensor::from_rows({{0, 3}}), {1}) != 2.5) {
    detail = "MSE hand example failed";
    return false;
  }

  // Scheduler hand traces.
  if (std::abs(plateau_schedule({1.0, 0.9, 0.91, 0.92, 0.93, 0.94, 0.95}, 1e-3, 0.01, 5) -
               1e-5) > 1e-18) {
    detail = "plateau trace failed";
    return false;
  }
  std::vector<double> two_plateaus = {1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.01, 1.01, 1.01, 1.01, 1.01};
  if (std::abs(plateau_schedule(two_plateaus, 1e-3, 0.01, 5) - 1e-7) > 1e-18) {
    detail = "double plateau trace failed";
    return false;
  }
  std::vector<double> improving;
  for (int i = 0; i < 30; ++i) improving.push_back(1.0 - 0.01 * i);
  if (plateau_schedule(improving, 1e-3, 0.01, 5) != 1e-3) {
    detail = "improving run must keep its rate";
    return false;
  }
  detail = "cross-entropy reduction, focal/MSE/scheduler hand traces reproduced";
  return true;
}

// ---------------------------------------------------------------------------
// 7. synthetic end-to-end
// ---------------------------------------------------------------------------

struct E2eMetrics {
  double accuracy = 0.0;
  double ap50 = 0.0;
  double baseline = 0.0;  // majority-class frame rate of the test split
};

E2eMetrics run_pipeline(double snr, uint64_t seed, int epochs, std::string* log_out) {
  SynthConfig synth;
  synth.videos = 50;
  synth.steps = 84;
  synth.feature_dim = 32;
  synth.snr = snr;
  synth.videos_per_subject = 2;  // 25 subjects -> an exact 40/10 video split
  synth.seed = seed;
  // Short, window-aligned behaviors: 6-9 one-window glances per video keep
  // the frame-accuracy bar above the all-negative baseline while boundary
  // offsets stay recoverable by the desk-scale model.
  synth.min_segments = 6;
  synth.max_segments = 9;
  synth.min_duration_s = synth.window_s();
  synth.max_duration_s = synth.window_s();
  const SynthCorpus corpus = synth_generate(synth);

  std::vector<std::pair<std::string, std::string>> video_subject;
  for (const SynthVideo& v : corpus.videos) {
    video_subject.emplace_back(v.features.video_id, v.subject_id);
  }
  const SplitResult split = train_test_split(video_subject, 0.8, seed);

  const std::string label = "look_face";
  std::vector<TrainVideo> train_videos;
  std::vector<const SynthVideo*> test_videos;
  for (const SynthVideo& v : corpus.videos) {
    const bool in_train = std::find(split.train_videos.begin(), split.train_videos.end(),
                                    v.features.video_id) != split.train_videos.end();
    if (in_train) {
      TrainVideo tv;
      tv.video_id = v.features.video_id;
      tv.features = v.features.to_tensor();
      for (const AnnotationTrack& track : v.tracks) {
        if (track.label == label) tv.targets = make_targets(track, v.features.time_grid());
      }
      train_videos.push_back(std::move(tv));
    } else {
      test_videos.push_back(&v);
    }
  }

  ModelConfig model = desk_config(32, 4, 64, 192, 288, derive_seed(seed, "model"));
  TrainConfig tc;
  tc.epochs = epochs;
  tc.seed = derive_seed(seed, "train");
  TrainResult result = train(train_videos, model, tc);
  if (log_out) *log_out = format_train_log(result.log);

  ConfusionCounts counts;
  PredictionsByVideo preds_by_video;
  SegmentsByVideo gts_by_video;
  for (const SynthVideo* v : test_videos) {
    const auto preds = forward(v->features.to_tensor(), result.params, NormMode::kInfer);
    std::vector<ScoredSegment> segments = decode(preds, v->features.time_grid(), 0.4,
                                                 v->features.duration_s(), label);
    segments = nms(std::move(segments), 0.5, NmsMode::kHard);
    const AnnotationTrack* track = nullptr;
    for (const AnnotationTrack& t : v->tracks) {
      if (t.label == label) track = &t;
    }
    const auto grid = v->features.time_grid();
    const auto gt_labels = rasterize(track->segments, grid);
    const auto pred_labels = rasterize(segments, grid);
    const FrameMetrics fm = frame_metrics(pred_labels, gt_labels);
    counts.tp += fm.counts.tp;
    counts.fp += fm.counts.fp;
    counts.tn += fm.counts.tn;
    counts.fn += fm.counts.fn;
    preds_by_video[v->features.video_id] = segments;
    gts_by_video[v->features.video_id] = track->segments;
  }

  E2eMetrics out;
  const FrameMetrics fm = metrics_from_counts(counts);
  out.accuracy = fm.accuracy;
  out.ap50 = average_precision(preds_by_video, gts_by_video, 0.5).ap;
  const double positives = static_cast<double>(counts.tp + counts.fn);
  const double total = static_cast<double>(counts.total());
  const double pos_rate = positives / total;
  out.baseline = std::max(pos_rate, 1.0 - pos_rate);
  return out;
}

bool check_end_to_end(std::string& detail) {
  const auto start = std::chrono::steady_clock::now();
  const E2eMetrics separable = run_pipeline(4.0, 20260811, 100, nullptr);
  const E2eMetrics null_corpus = run_pipeline(0.0, 20260811, 100, nullptr);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  detail = "snr4: accuracy " + std::to_string(separable.accuracy) + ", AP@0.5 " +
           std::to_string(separable.ap50) + "; snr0: accuracy " +
           std::to_string(null_corpus.accuracy) + " (baseline " +
           std::to_string(null_corpus.baseline) + "), AP@0.5 " +
           std::to_string(null_corpus.ap50) + "; " + std::to_string(seconds) + " s";

  if (seconds >= 300.0) return false;
  if (separable.accuracy < 0.90) return false;
  if (separable.ap50 < 0.80) return false;
  if (std::abs(null_corpus.accuracy - null_corpus.baseline) > 0.05) return false;
  if (null_corpus.ap50 > 0.15) return false;
  return true;
}

// ---------------------------------------------------------------------------
// 8. determinism and formats
// ---------------------------------------------------------------------------

bool check_determinism(std::string& detail) {
  // Seeded training logs reproduce byte for byte.
  SynthConfig synth;
  synth.videos = 6;
  synth.steps = 30;
  synth.feature_dim = 16;
  synth.classes = {"look_face"};
  synth.seed = 401;
  const SynthCorpus corpus = synth_generate(synth);
  std::vector<TrainVideo> videos;
  for (const SynthVideo& v : corpus.videos) {
    TrainVideo tv;
    tv.video_id = v.features.video_id;
    tv.features = v.features.to_tensor();
    tv.targets = make_targets(v.tracks[0], v.features.time_grid());
    videos.push_back(std::move(tv));
  }
  ModelConfig model = desk_config(16, 2, 16, 16, 8, 402);
  TrainConfig tc;
  tc.epochs = 4;
  tc.batch_size = 3;
  tc.seed = 403;
  const TrainResult r1 = train(videos, model, tc);
  const TrainResult r2 = train(videos, model, tc);
  if (format_train_log(r1.log) != format_train_log(r2.log)) {
    detail = "training logs differ between identically seeded runs";
    return false;
  }

  const fs::path dir = fs::temp_directory_path() / "atal_acceptance_fmt";
  fs::remove_all(dir);
  fs::create_directories(dir);

  // Checkpoint round trip, bitwise.
  save_checkpoint(dir / "a.atal", r1.params, "look_face");
  const LoadedCheckpoint loaded = load_checkpoint(dir / "a.atal");
  save_checkpoint(dir / "b.atal", loaded.params, loaded.class_label);
  auto slurp = [](const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
  };
  if (slurp(dir / "a.atal") != slurp(dir / "b.atal")) {
    detail = "checkpoint write-read-write drifted";
    return false;
  }

  // ATFX round trip, bitwise.
  write_atfx(dir / "v.atfx", corpus.videos[0].features);
  const FeatureSequence back = read_atfx(dir / "v.atfx");
  write_atfx(dir / "w.atfx", back);
  if (slurp(dir / "v.atfx") != slurp(dir / "w.atfx")) {
    detail = "feature file round trip drifted";
    return false;
  }

  // Corrupted-header fuzz cases must all be rejected.
  const std::string good = slurp(dir / "v.atfx");
  int cases = 0, rejected = 0;
  auto expect_reject = [&](const std::string& mutated) {
    ++cases;
    std::ofstream(dir / "bad.atfx", std::ios::binary | std::ios::trunc) << mutated;
    try {
      read_atfx(dir / "bad.atfx");
    } catch (const std::exception&) {
      ++rejected;
    }
  };
  for (int byte = 0; byte < 4; ++byte) {
    std::string m = good;
    m[static_cast<size_t>(byte)] ^= 0x20;
    expect_reject(m);
  }
  {
    std::string m = good;
    m[4] = 7;
    expect_reject(m);
  }
  for (size_t cut : {3u, 9u, 17u, 25u}) expect_reject(good.substr(0, cut));
  expect_reject(good.substr(0, good.size() - 3));
  {
    // Inconsistent step count: steps field sits after magic|version|idlen|id.
    const size_t steps_off = 12 + corpus.videos[0].features.video_id.size();
    std::string m = good;
    m[steps_off] = static_cast<char>(m[steps_off] + 1);
    expect_reject(m);
  }
  if (rejected != cases) {
    detail = "fuzz corpus: " + std::to_string(cases - rejected) + " corruptions accepted";
    return false;
  }
  detail = "logs byte-identical, round trips bitwise, " + std::to_string(cases) +
           "/" + std::to_string(cases) + " corruptions rejected";
  return true;
}

// ---------------------------------------------------------------------------
// 9. report fidelity
// ---------------------------------------------------------------------------

bool check_report(std::string& detail) {
  EvaluationReport report;
  report.tiou_thresholds = {0.1, 0.3, 0.5, 0.7};
  for (const char* label : {"look_face", "look_object", "smile", "vocal"}) {
    ClassReport c;
    c.label = label;
    c.frames = metrics_from_counts({30, 10, 50, 10});
    c.ap.thresholds = report.tiou_thresholds;
    c.ap.ap = {0.95, 0.74, 0.45, 0.13};
    c.ap.average = (0.95 + 0.74 + 0.45 + 0.13) / 4.0;
    report.classes.push_back(std::move(c));
  }
  const std::string text = render_report(report);
  for (const char* needle : {"Sensitivity", "Specificity", "F1-score", "Accuracy", "0.1",
                             "0.3", "0.5", "0.7", "Avg."}) {
    if (text.find(needle) == std::string::npos) {
      detail = std::string("rendered report lacks '") + needle + "'";
      return false;
    }
  }
  const ApRow defaults = ap_table({}, SegmentsByVideo{{"v", {{0, 1}}}});
  if (defaults.thresholds != std::vector<double>{0.1, 0.3, 0.5, 0.7}) {
    detail = "default threshold set is wrong";
    return false;
  }
  detail = "threshold columns {0.1, 0.3, 0.5, 0.7, Avg.} and all four metrics present";
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--only" && i + 1 < argc) only = std::atoi(argv[i + 1]);
  }

  const std::vector<Check> checks = {
      {1, "gradient correctness vs central finite differences", check_gradients},
      {2, "attention invariants and permutation equivariance", check_attention},
      {3, "decode/target round trip on randomized tracks", check_roundtrip},
      {4, "hard NMS equals the brute-force greedy reference", check_nms},
      {5, "AP equals the exhaustive PR-curve oracle", check_ap},
      {6, "loss and scheduler unit checks", check_losses},
      {7, "synthetic end-to-end training run", check_end_to_end},
      {8, "determinism and file-format round trips", check_determinism},
      {9, "report fidelity", check_report},
  };

  int failures = 0;
  for (const Check& check : checks) {
    if (only != 0 && check.id != only) continue;
    std::string detail;
    bool ok = false;
    try {
      ok = check.run(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    std::cout << (ok ? "[PASS] " : "[FAIL] ") << check.id << ". " << check.name;
    if (!detail.empty()) std::cout << " — " << detail;
    std::cout << std::endl;
    if (!ok) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
