#pragma once

#include <string>
#include <vector>

#include "atal/dataset.hpp"
#include "atal/model.hpp"

namespace atal {

/// A decoded action candidate: well-formed (start < end, start >= 0) with a
/// probability score.
struct ScoredSegment {
  double start_s = 0.0;
  double end_s = 0.0;
  double score = 0.0;
  std::string label;
};

/// Temporal intersection over union of two intervals on the real line.
double t_iou(double a_start, double a_end, double b_start, double b_end);
double t_iou(const Segment& a, const Segment& b);
double t_iou(const ScoredSegment& a, const ScoredSegment& b);

/// Thresholded offset decode: every timestep with p >= threshold emits
/// (t - D_s, t + D_e, p), offsets clamped to >= 0 first, start clamped to 0,
/// end clamped to the video duration. Degenerate spans are dropped.
std::vector<ScoredSegment> decode(const std::vector<TimestepPrediction>& predictions,
                                  const std::vector<double>& time_grid,
                                  double threshold, double duration_s,
                                  const std::string& label);

enum class NmsMode { kHard, kSoftLinear, kSoftGaussian };

NmsMode nms_mode_from_string(const std::string& name);
std::string to_string(NmsMode mode);

/// Greedy suppression by descending score (ties: earlier start, then shorter
/// duration). Hard mode discards overlaps above the threshold outright; the
/// soft modes decay scores (linear: s*(1-iou) when iou > threshold; gaussian:
/// s*exp(-iou^2/sigma)) and drop candidates that fall below `score_floor`.
/// Output is sorted by descending score.
std::vector<ScoredSegment> nms(std::vector<ScoredSegment> candidates,
                               double overlap_threshold = 0.5,
                               NmsMode mode = NmsMode::kHard,
                               double score_floor = 0.001, double sigma = 0.5);

}  // namespace atal
