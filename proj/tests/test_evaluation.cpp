#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "atal/evaluation.hpp"
#include "atal/rng.hpp"

using namespace atal;

namespace {

ScoredSegment seg(double s, double e, double score) {
  return ScoredSegment{s, e, score, "look_face"};
}

// Exhaustive PR-curve oracle: for each cutoff rank k, re-run the greedy
// matching from scratch on the top-k predictions and integrate the curve.
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

  auto tp_at_cutoff = [&](size_t k) {
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

  double ap = 0.0;
  double prev_recall = 0.0;
  for (size_t k = 1; k <= ranked.size(); ++k) {
    const int tp = tp_at_cutoff(k);
    const double precision = static_cast<double>(tp) / static_cast<double>(k);
    const double recall = static_cast<double>(tp) / static_cast<double>(n_gt);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

}  // namespace

TEST_SUITE("rasterize") {
  TEST_CASE("empty list gives zeros") {
    const auto labels = rasterize(std::vector<Segment>{}, {1.0, 2.0, 3.0});
    CHECK(labels == std::vector<uint8_t>{0, 0, 0});
  }

  TEST_CASE("full coverage gives ones") {
    const auto labels = rasterize(std::vector<Segment>{{0.0, 10.0}}, {1.0, 5.0, 9.0});
    CHECK(labels == std::vector<uint8_t>{1, 1, 1});
  }

  TEST_CASE("containment is inclusive on both ends") {
    const auto labels = rasterize(std::vector<Segment>{{2.0, 6.0}}, {1.0, 3.0, 5.0, 7.0});
    CHECK(labels == std::vector<uint8_t>{0, 1, 1, 0});
    const auto edges = rasterize(std::vector<Segment>{{2.0, 6.0}}, {2.0, 6.0});
    CHECK(edges == std::vector<uint8_t>{1, 1});
  }
}

TEST_SUITE("frame metrics") {
  TEST_CASE("hand-computed confusion example") {
    // 3 TP, 1 FP, 5 TN, 1 FN over ten timesteps.
    const std::vector<uint8_t> gt = {1, 1, 1, 1, 0, 0, 0, 0, 0, 0};
    const std::vector<uint8_t> pr = {1, 1, 1, 0, 1, 0, 0, 0, 0, 0};
    const FrameMetrics m = frame_metrics(pr, gt);
    CHECK(m.counts.tp == 3);
    CHECK(m.counts.fp == 1);
    CHECK(m.counts.tn == 5);
    CHECK(m.counts.fn == 1);
    CHECK(m.accuracy == doctest::Approx(0.8));
    CHECK(m.sensitivity == doctest::Approx(0.75));
    CHECK(m.specificity == doctest::Approx(0.8333).epsilon(1e-3));
    CHECK(m.precision == doctest::Approx(0.75));
    CHECK(m.f1 == doctest::Approx(0.75));
  }

  TEST_CASE("perfect agreement") {
    const std::vector<uint8_t> v = {1, 0, 1, 1, 0};
    const FrameMetrics m = frame_metrics(v, v);
    CHECK(m.accuracy == 1.0);
    CHECK(m.f1 == 1.0);
  }

  TEST_CASE("all-negative inputs flag sensitivity as degenerate") {
    const std::vector<uint8_t> v = {0, 0, 0};
    const FrameMetrics m = frame_metrics(v, v);
    CHECK(m.specificity == 1.0);
    CHECK(m.sensitivity == 0.0);
    CHECK(m.sensitivity_degenerate);
    CHECK(m.accuracy == 1.0);
  }

  TEST_CASE("length mismatch is rejected") {
    CHECK_THROWS_AS(frame_metrics({1}, {1, 0}), std::invalid_argument);
  }

  TEST_CASE("accuracy is one exactly when there are no errors") {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<uint8_t> gt, pr;
      for (int i = 0; i < 20; ++i) {
        gt.push_back(rng.uniform(0.0, 1.0) < 0.5 ? 1 : 0);
        pr.push_back(rng.uniform(0.0, 1.0) < 0.5 ? 1 : 0);
      }
      const FrameMetrics m = frame_metrics(pr, gt);
      CHECK((m.accuracy == 1.0) == (m.counts.fp == 0 && m.counts.fn == 0));
    }
  }

  TEST_CASE("f1 ignores true negatives") {
    const std::vector<uint8_t> gt1 = {1, 1, 0, 0};
    const std::vector<uint8_t> pr1 = {1, 0, 1, 0};
    std::vector<uint8_t> gt2 = gt1, pr2 = pr1;
    for (int i = 0; i < 50; ++i) {
      gt2.push_back(0);
      pr2.push_back(0);
    }
    CHECK(frame_metrics(pr1, gt1).f1 == doctest::Approx(frame_metrics(pr2, gt2).f1));
  }
}

TEST_SUITE("average precision") {
  TEST_CASE("predictions identical to ground truth give AP 1 at every threshold") {
    SegmentsByVideo gt{{"v1", {{1, 3}, {5, 8}}}, {"v2", {{0, 4}}}};
    PredictionsByVideo preds;
    for (const auto& [video, segs] : gt) {
      for (const Segment& s : segs) preds[video].push_back(seg(s.start_s, s.end_s, 0.9));
    }
    for (double thr : {0.1, 0.3, 0.5, 0.7, 0.99}) {
      CHECK(average_precision(preds, gt, thr).ap == doctest::Approx(1.0).epsilon(1e-12));
    }
  }

  TEST_CASE("hand-traced two-prediction example") {
    // One gt; rank-1 prediction disjoint, rank-2 prediction with IoU 0.6:
    // PR points (0, r1) then (0.5, recall 1) -> AP 0.5 at threshold 0.5.
    SegmentsByVideo gt{{"v", {{10, 20}}}};
    PredictionsByVideo preds{{"v", {seg(30, 40, 0.9), seg(10, 18, 0.8)}}};
    const double iou = t_iou(10, 18, 10, 20);
    REQUIRE(iou == doctest::Approx(0.8));
    const ApResult r = average_precision(preds, gt, 0.5);
    CHECK(r.ap == doctest::Approx(0.5).epsilon(1e-12));
  }

  TEST_CASE("threshold above every achievable overlap gives AP 0") {
    SegmentsByVideo gt{{"v", {{0, 10}}}};
    PredictionsByVideo preds{{"v", {seg(5, 15, 0.9)}}};  // IoU 1/3
    CHECK(average_precision(preds, gt, 0.5).ap == 0.0);
  }

  TEST_CASE("empty ground truth with predictions is flagged AP 0") {
    PredictionsByVideo preds{{"v", {seg(0, 1, 0.5)}}};
    const ApResult r = average_precision(preds, {}, 0.5);
    CHECK(r.ap == 0.0);
    CHECK(r.no_ground_truth);
    CHECK(!r.undefined);
  }

  TEST_CASE("empty both is flagged undefined") {
    const ApResult r = average_precision({}, {}, 0.5);
    CHECK(r.undefined);
  }

  TEST_CASE("each ground truth is matched at most once") {
    SegmentsByVideo gt{{"v", {{0, 10}}}};
    PredictionsByVideo preds{{"v", {seg(0, 10, 0.9), seg(0, 10, 0.8)}}};
    // Second duplicate is a false positive: AP stays 1 * recall 1 at rank 1.
    CHECK(average_precision(preds, gt, 0.5).ap == doctest::Approx(1.0));
  }

  TEST_CASE("matches the exhaustive PR-curve oracle on random instances") {
    Rng rng(17);
    for (int trial = 0; trial < 1000; ++trial) {
      SegmentsByVideo gt;
      PredictionsByVideo preds;
      const int videos = static_cast<int>(rng.uniform_int(1, 3));
      const int n_gt = static_cast<int>(rng.uniform_int(0, 5));
      const int n_pred = static_cast<int>(rng.uniform_int(0, 10));
      for (int g = 0; g < n_gt; ++g) {
        const double s = rng.uniform(0, 20);
        gt["v" + std::to_string(rng.uniform_int(0, videos - 1))].push_back(
            {s, s + rng.uniform(0.5, 6)});
      }
      for (int p = 0; p < n_pred; ++p) {
        const double s = rng.uniform(0, 20);
        preds["v" + std::to_string(rng.uniform_int(0, videos - 1))].push_back(
            seg(s, s + rng.uniform(0.5, 6), rng.uniform_int(1, 8) / 8.0));
      }
      if (gt.empty()) continue;
      for (double thr : {0.1, 0.3, 0.5, 0.7}) {
        const double mine = average_precision(preds, gt, thr).ap;
        const double ref = ap_oracle(preds, gt, thr);
        CHECK(std::abs(mine - ref) < 1e-12);
      }
    }
  }

  TEST_CASE("AP never increases as the threshold rises") {
    Rng rng(19);
    for (int trial = 0; trial < 300; ++trial) {
      SegmentsByVideo gt;
      PredictionsByVideo preds;
      const int n_gt = static_cast<int>(rng.uniform_int(1, 5));
      const int n_pred = static_cast<int>(rng.uniform_int(1, 10));
      for (int g = 0; g < n_gt; ++g) {
        const double s = rng.uniform(0, 20);
        gt["v"].push_back({s, s + rng.uniform(0.5, 6)});
      }
      for (int p = 0; p < n_pred; ++p) {
        const double s = rng.uniform(0, 20);
        preds["v"].push_back(seg(s, s + rng.uniform(0.5, 6), rng.uniform(0, 1)));
      }
      double prev = 2.0;
      for (double thr = 0.05; thr <= 0.95; thr += 0.05) {
        const double ap = average_precision(preds, gt, thr).ap;
        CHECK(ap <= prev + 1e-12);
        prev = ap;
      }
    }
  }
}

TEST_SUITE("ap table and report") {
  TEST_CASE("perfect predictions give a row of ones") {
    SegmentsByVideo gt{{"v", {{1, 5}}}};
    PredictionsByVideo preds{{"v", {seg(1, 5, 0.9)}}};
    const ApRow row = ap_table(preds, gt);
    REQUIRE(row.ap.size() == 4);
    for (double ap : row.ap) CHECK(ap == doctest::Approx(1.0));
    CHECK(row.average == doctest::Approx(1.0));
  }

  TEST_CASE("empty predictions give a row of zeros") {
    SegmentsByVideo gt{{"v", {{1, 5}}}};
    const ApRow row = ap_table({}, gt);
    for (double ap : row.ap) CHECK(ap == 0.0);
    CHECK(row.average == 0.0);
  }

  TEST_CASE("default thresholds match the reporting protocol") {
    const ApRow row = ap_table({}, SegmentsByVideo{{"v", {{0, 1}}}});
    CHECK(row.thresholds == std::vector<double>{0.1, 0.3, 0.5, 0.7});
  }

  TEST_CASE("rendered report carries the expected columns and metrics") {
    EvaluationReport report;
    report.tiou_thresholds = {0.1, 0.3, 0.5, 0.7};
    ClassReport c;
    c.label = "look_face";
    c.frames = metrics_from_counts({30, 10, 50, 10});
    c.ap.thresholds = report.tiou_thresholds;
    c.ap.ap = {0.95, 0.74, 0.45, 0.13};
    c.ap.average = 0.5675;
    report.classes.push_back(c);

    const std::string text = render_report(report);
    for (const char* needle : {"Sensitivity", "Specificity", "F1-score", "Accuracy", "0.1",
                               "0.3", "0.5", "0.7", "Avg.", "look_face"}) {
      INFO("missing: ", needle);
      CHECK(text.find(needle) != std::string::npos);
    }
    const std::string json = report_to_json(report);
    CHECK(json.find("\"sensitivity\"") != std::string::npos);
    CHECK(json.find("\"ap_average\"") != std::string::npos);
  }
}
