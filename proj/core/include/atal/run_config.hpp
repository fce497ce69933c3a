#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "atal/model.hpp"
#include "atal/postprocess.hpp"
#include "atal/training.hpp"

namespace atal {

struct PostprocessConfig {
  double threshold = 0.4;
  NmsMode nms_mode = NmsMode::kHard;
  double nms_overlap = 0.5;
  double score_floor = 0.001;
  double nms_sigma = 0.5;
};

struct EvaluationConfig {
  std::vector<double> tiou_thresholds = {0.1, 0.3, 0.5, 0.7};
};

/// Merged pipeline settings. Precedence: built-in defaults, then the config
/// file, then command-line flags; the resolved form is echoed into every
/// output directory.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  PostprocessConfig post;
  EvaluationConfig eval;
};

/// Applies a JSON config file over the defaults; unknown keys are rejected.
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

std::string run_config_to_json(const RunConfig& config);

}  // namespace atal
