#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "atal/dataset.hpp"
#include "atal/postprocess.hpp"

namespace atal {

struct ConfusionCounts {
  int64_t tp = 0;
  int64_t fp = 0;
  int64_t tn = 0;
  int64_t fn = 0;
  int64_t total() const { return tp + fp + tn + fn; }
};

/// Timestep-level metrics. Any ratio with a zero denominator is reported as 0
/// with its degenerate flag set.
struct FrameMetrics {
  ConfusionCounts counts;
  double accuracy = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
  bool sensitivity_degenerate = false;
  bool specificity_degenerate = false;
  bool precision_degenerate = false;
  bool f1_degenerate = false;
};

/// 1 where the timestep center lies inside any segment.
std::vector<uint8_t> rasterize(const std::vector<Segment>& segments,
                               const std::vector<double>& time_grid);
std::vector<uint8_t> rasterize(const std::vector<ScoredSegment>& segments,
                               const std::vector<double>& time_grid);

FrameMetrics frame_metrics(const std::vector<uint8_t>& predicted,
                           const std::vector<uint8_t>& ground_truth);
FrameMetrics metrics_from_counts(const ConfusionCounts& counts);

/// Predictions and ground truth for one class, keyed by video.
using PredictionsByVideo = std::map<std::string, std::vector<ScoredSegment>>;
using SegmentsByVideo = std::map<std::string, std::vector<Segment>>;

struct ApResult {
  double ap = 0.0;
  bool no_ground_truth = false;  // predictions exist but nothing to match
  bool undefined = false;        // neither predictions nor ground truth
};

/// Non-interpolated area under the precision-recall curve. Predictions are
/// ranked globally by descending score (ties: earlier start, shorter
/// duration) and each is greedily matched to the unmatched ground-truth
/// segment of highest t-IoU within its own video; it is a true positive iff
/// that overlap reaches the threshold.
ApResult average_precision(const PredictionsByVideo& predictions,
                           const SegmentsByVideo& ground_truth, double tiou_threshold);

struct ApRow {
  std::vector<double> thresholds;
  std::vector<double> ap;       // one per threshold
  double average = 0.0;
  bool no_ground_truth = false;
  bool undefined = false;
};

ApRow ap_table(const PredictionsByVideo& predictions, const SegmentsByVideo& ground_truth,
               const std::vector<double>& thresholds = {0.1, 0.3, 0.5, 0.7});

// -- report -----------------------------------------------------------------------

struct ClassReport {
  std::string label;
  FrameMetrics frames;
  ApRow ap;
};

struct EvaluationReport {
  std::vector<double> tiou_thresholds;
  std::vector<ClassReport> classes;
};

/// Aligned plain-text tables: detection metrics with columns {Sensitivity,
/// Specificity, F1-score, Accuracy} and the AP table with one column per
/// t-IoU threshold plus "Avg.".
std::string render_report(const EvaluationReport& report);

/// Structured (JSON) form with full-precision values.
std::string report_to_json(const EvaluationReport& report);

}  // namespace atal
