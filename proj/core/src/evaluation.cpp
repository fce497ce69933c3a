#include "atal/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include <json.hpp>

namespace atal {

namespace {

template <typename Seg>
std::vector<uint8_t> rasterize_impl(const std::vector<Seg>& segments,
                                    const std::vector<double>& time_grid) {
  std::vector<uint8_t> labels(time_grid.size(), 0);
  for (size_t i = 0; i < time_grid.size(); ++i) {
    const double t = time_grid[i];
    for (const Seg& s : segments) {
      if (t >= s.start_s && t <= s.end_s) {
        labels[i] = 1;
        break;
      }
    }
  }
  return labels;
}

}  // namespace

std::vector<uint8_t> rasterize(const std::vector<Segment>& segments,
                               const std::vector<double>& time_grid) {
  return rasterize_impl(segments, time_grid);
}

std::vector<uint8_t> rasterize(const std::vector<ScoredSegment>& segments,
                               const std::vector<double>& time_grid) {
  return rasterize_impl(segments, time_grid);
}

FrameMetrics metrics_from_counts(const ConfusionCounts& c) {
  FrameMetrics m;
  m.counts = c;
  const int64_t total = c.total();
  m.accuracy = total > 0 ? static_cast<double>(c.tp + c.tn) / static_cast<double>(total) : 0.0;
  auto ratio = [](int64_t num, int64_t den, double& out, bool& degenerate) {
    if (den == 0) {
      out = 0.0;
      degenerate = true;
    } else {
      out = static_cast<double>(num) / static_cast<double>(den);
    }
  };
  ratio(c.tp, c.tp + c.fn, m.sensitivity, m.sensitivity_degenerate);
  ratio(c.tn, c.tn + c.fp, m.specificity, m.specificity_degenerate);
  ratio(c.tp, c.tp + c.fp, m.precision, m.precision_degenerate);
  const double pr = m.precision + m.sensitivity;
  if (pr == 0.0) {
    m.f1 = 0.0;
    m.f1_degenerate = true;
  } else {
    m.f1 = 2.0 * m.precision * m.sensitivity / pr;
  }
  return m;
}

FrameMetrics frame_metrics(const std::vector<uint8_t>& predicted,
                           const std::vector<uint8_t>& ground_truth) {
  if (predicted.size() != ground_truth.size()) {
    throw std::invalid_argument("frame_metrics: length mismatch " +
                                std::to_string(predicted.size()) + " vs " +
                                std::to_string(ground_truth.size()));
  }
  ConfusionCounts c;
  for (size_t i = 0; i < predicted.size(); ++i) {
    const bool p = predicted[i] != 0, g = ground_truth[i] != 0;
    if (p && g) ++c.tp;
    else if (p && !g) ++c.fp;
    else if (!p && g) ++c.fn;
    else ++c.tn;
  }
  return metrics_from_counts(c);
}

namespace {

struct RankedPrediction {
  const std::string* video;
  ScoredSegment seg;
};

bool rank_order(const RankedPrediction& a, const RankedPrediction& b) {
  if (a.seg.score != b.seg.score) return a.seg.score > b.seg.score;
  if (a.seg.start_s != b.seg.start_s) return a.seg.start_s < b.seg.start_s;
  const double da = a.seg.end_s - a.seg.start_s, db = b.seg.end_s - b.seg.start_s;
  if (da != db) return da < db;
  return *a.video < *b.video;
}

}  // namespace

ApResult average_precision(const PredictionsByVideo& predictions,
                           const SegmentsByVideo& ground_truth, double tiou_threshold) {
  size_t n_gt = 0;
  for (const auto& [video, segs] : ground_truth) n_gt += segs.size();
  size_t n_pred = 0;
  for (const auto& [video, segs] : predictions) n_pred += segs.size();

  ApResult out;
  if (n_gt == 0) {
    if (n_pred == 0) {
      out.undefined = true;
    } else {
      out.no_ground_truth = true;
    }
    return out;
  }
  if (n_pred == 0) return out;

  std::vector<RankedPrediction> ranked;
  ranked.reserve(n_pred);
  for (const auto& [video, segs] : predictions) {
    for (const ScoredSegment& s : segs) ranked.push_back({&video, s});
  }
  std::sort(ranked.begin(), ranked.end(), rank_order);

  std::map<std::string, std::vector<uint8_t>> matched;
  for (const auto& [video, segs] : ground_truth) {
    matched[video].assign(segs.size(), 0);
  }

  double ap = 0.0;
  int tp = 0;
  for (size_t rank = 0; rank < ranked.size(); ++rank) {
    const RankedPrediction& p = ranked[rank];
    auto gt_it = ground_truth.find(*p.video);
    if (gt_it == ground_truth.end()) continue;  // prediction for a video with no gt
    const std::vector<Segment>& gts = gt_it->second;
    std::vector<uint8_t>& used = matched[*p.video];
    int best = -1;
    double best_iou = 0.0;
    for (size_t g = 0; g < gts.size(); ++g) {
      if (used[g]) continue;
      const double iou = t_iou(p.seg.start_s, p.seg.end_s, gts[g].start_s, gts[g].end_s);
      if (iou > best_iou) {
        best_iou = iou;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0 && best_iou >= tiou_threshold) {
      used[static_cast<size_t>(best)] = 1;
      ++tp;
      const double precision_at_rank = static_cast<double>(tp) / static_cast<double>(rank + 1);
      ap += precision_at_rank / static_cast<double>(n_gt);
    }
  }
  out.ap = ap;
  return out;
}

ApRow ap_table(const PredictionsByVideo& predictions, const SegmentsByVideo& ground_truth,
               const std::vector<double>& thresholds) {
  ApRow row;
  row.thresholds = thresholds;
  double sum = 0.0;
  for (double thr : thresholds) {
    const ApResult r = average_precision(predictions, ground_truth, thr);
    row.ap.push_back(r.ap);
    row.no_ground_truth = row.no_ground_truth || r.no_ground_truth;
    row.undefined = row.undefined || r.undefined;
    sum += r.ap;
  }
  row.average = thresholds.empty() ? 0.0 : sum / static_cast<double>(thresholds.size());
  return row;
}

// -- report -------------------------------------------------------------------------

namespace {

std::string fixed(double v, int digits = 4) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

void append_table(std::string& out, const std::vector<std::vector<std::string>>& rows) {
  std::vector<size_t> widths;
  for (const auto& row : rows) {
    if (widths.size() < row.size()) widths.resize(row.size(), 0);
    for (size_t i = 0; i < row.size(); ++i) widths[i] = std::max(widths[i], row[i].size());
  }
  for (const auto& row : rows) {
    for (size_t i = 0; i < row.size(); ++i) {
      out += row[i];
      if (i + 1 < row.size()) out.append(widths[i] - row[i].size() + 2, ' ');
    }
    out += '\n';
  }
}

std::string threshold_label(double thr) {
  std::string s = fixed(thr, 2);
  while (s.size() > 3 && s.back() == '0') s.pop_back();
  return s;
}

}  // namespace

std::string render_report(const EvaluationReport& report) {
  std::string out;
  out += "BEHAVIOR DETECTION METRICS\n";
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"", "Sensitivity", "Specificity", "F1-score", "Accuracy"});
  for (const ClassReport& c : report.classes) {
    rows.push_back({c.label, fixed(c.frames.sensitivity, 2), fixed(c.frames.specificity, 2),
                    fixed(c.frames.f1, 2), fixed(c.frames.accuracy, 2)});
  }
  append_table(out, rows);

  out += "\nAVERAGE PRECISION BY T-IOU THRESHOLD\n";
  rows.clear();
  std::vector<std::string> header{""};
  for (double thr : report.tiou_thresholds) header.push_back(threshold_label(thr));
  header.push_back("Avg.");
  rows.push_back(header);
  for (const ClassReport& c : report.classes) {
    std::vector<std::string> row{c.label};
    for (double ap : c.ap.ap) row.push_back(fixed(ap, 2));
    row.push_back(fixed(c.ap.average, 2));
    if (c.ap.undefined) row.push_back("(no instances)");
    rows.push_back(row);
  }
  append_table(out, rows);
  return out;
}

std::string report_to_json(const EvaluationReport& report) {
  nlohmann::json j;
  j["tiou_thresholds"] = report.tiou_thresholds;
  j["classes"] = nlohmann::json::array();
  for (const ClassReport& c : report.classes) {
    nlohmann::json jc;
    jc["label"] = c.label;
    jc["counts"] = {{"tp", c.frames.counts.tp},
                    {"fp", c.frames.counts.fp},
                    {"tn", c.frames.counts.tn},
                    {"fn", c.frames.counts.fn}};
    jc["accuracy"] = c.frames.accuracy;
    jc["sensitivity"] = c.frames.sensitivity;
    jc["specificity"] = c.frames.specificity;
    jc["precision"] = c.frames.precision;
    jc["f1"] = c.frames.f1;
    jc["degenerate"] = {{"sensitivity", c.frames.sensitivity_degenerate},
                        {"specificity", c.frames.specificity_degenerate},
                        {"precision", c.frames.precision_degenerate},
                        {"f1", c.frames.f1_degenerate}};
    jc["ap"] = c.ap.ap;
    jc["ap_average"] = c.ap.average;
    jc["ap_no_ground_truth"] = c.ap.no_ground_truth;
    jc["ap_undefined"] = c.ap.undefined;
    j["classes"].push_back(std::move(jc));
  }
  return j.dump(2) + "\n";
}

}  // namespace atal
