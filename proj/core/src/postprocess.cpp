#include "atal/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace atal {

double t_iou(double a_start, double a_end, double b_start, double b_end) {
  const double inter = std::max(0.0, std::min(a_end, b_end) - std::max(a_start, b_start));
  const double uni = (a_end - a_start) + (b_end - b_start) - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

double t_iou(const Segment& a, const Segment& b) {
  return t_iou(a.start_s, a.end_s, b.start_s, b.end_s);
}

double t_iou(const ScoredSegment& a, const ScoredSegment& b) {
  return t_iou(a.start_s, a.end_s, b.start_s, b.end_s);
}

std::vector<ScoredSegment> decode(const std::vector<TimestepPrediction>& predictions,
                                  const std::vector<double>& time_grid,
                                  double threshold, double duration_s,
                                  const std::string& label) {
  if (predictions.size() != time_grid.size()) {
    throw std::invalid_argument("decode: prediction count " +
                                std::to_string(predictions.size()) +
                                " does not match grid size " +
                                std::to_string(time_grid.size()));
  }
  std::vector<ScoredSegment> out;
  for (size_t i = 0; i < predictions.size(); ++i) {
    const TimestepPrediction& p = predictions[i];
    if (p.p_event < threshold) continue;
    const double t = time_grid[i];
    const double ds = std::max(0.0, p.d_start_s);
    const double de = std::max(0.0, p.d_end_s);
    const double start = std::max(0.0, t - ds);
    const double end = std::min(duration_s, t + de);
    if (end <= start) continue;
    out.push_back(ScoredSegment{start, end, p.p_event, label});
  }
  return out;
}

NmsMode nms_mode_from_string(const std::string& name) {
  if (name == "hard") return NmsMode::kHard;
  if (name == "soft-linear") return NmsMode::kSoftLinear;
  if (name == "soft-gaussian") return NmsMode::kSoftGaussian;
  throw std::invalid_argument("nms: unknown mode '" + name +
                              "' (expected hard, soft-linear, soft-gaussian)");
}

std::string to_string(NmsMode mode) {
  switch (mode) {
    case NmsMode::kHard:
      return "hard";
    case NmsMode::kSoftLinear:
      return "soft-linear";
    case NmsMode::kSoftGaussian:
      return "soft-gaussian";
  }
  return "hard";
}

namespace {
// Deterministic candidate ordering: score desc, then earlier start, then
// shorter duration, then end as a final disambiguator.
bool better(const ScoredSegment& a, const ScoredSegment& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.start_s != b.start_s) return a.start_s < b.start_s;
  const double da = a.end_s - a.start_s, db = b.end_s - b.start_s;
  if (da != db) return da < db;
  return a.end_s < b.end_s;
}
}  // namespace

std::vector<ScoredSegment> nms(std::vector<ScoredSegment> candidates,
                               double overlap_threshold, NmsMode mode,
                               double score_floor, double sigma) {
  std::vector<ScoredSegment> kept;
  if (mode == NmsMode::kHard) {
    std::sort(candidates.begin(), candidates.end(), better);
    std::vector<uint8_t> alive(candidates.size(), 1);
    for (size_t i = 0; i < candidates.size(); ++i) {
      if (!alive[i]) continue;
      kept.push_back(candidates[i]);
      for (size_t j = i + 1; j < candidates.size(); ++j) {
        if (alive[j] && t_iou(candidates[i], candidates[j]) > overlap_threshold) {
          alive[j] = 0;
        }
      }
    }
    return kept;
  }

  // Soft modes: repeatedly take the current best, decay the rest.
  std::vector<ScoredSegment> pool = std::move(candidates);
  while (!pool.empty()) {
    size_t best = 0;
    for (size_t i = 1; i < pool.size(); ++i) {
      if (better(pool[i], pool[best])) best = i;
    }
    const ScoredSegment sel = pool[best];
    pool.erase(pool.begin() + static_cast<long>(best));
    kept.push_back(sel);
    std::vector<ScoredSegment> next;
    for (ScoredSegment& c : pool) {
      const double iou = t_iou(sel, c);
      if (mode == NmsMode::kSoftLinear) {
        if (iou > overlap_threshold) c.score *= 1.0 - iou;
      } else {
        if (iou > 0.0) c.score *= std::exp(-(iou * iou) / sigma);
      }
      if (c.score >= score_floor) next.push_back(c);
    }
    pool = std::move(next);
  }
  std::sort(kept.begin(), kept.end(), better);
  return kept;
}

}  // namespace atal
