#include "atal/run_config.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

namespace atal {

namespace {

using nlohmann::json;

template <typename T>
void take(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void apply_section(const json& j, const char* section, const std::vector<std::string>& known) {
  if (!j.contains(section)) return;
  for (const auto& [key, _] : j.at(section).items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw std::runtime_error(std::string("config: unknown key '") + section + "." + key + "'");
    }
  }
}

}  // namespace

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error(path.string() + ": cannot open");
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  for (const auto& [key, _] : j.items()) {
    if (key != "model" && key != "train" && key != "postprocess" && key != "evaluation") {
      throw std::runtime_error(path.string() + ": unknown section '" + key + "'");
    }
  }

  apply_section(j, "model",
                {"feature_dim", "num_heads", "ff_dim", "num_encoder_blocks", "head_hidden_1",
                 "head_hidden_2", "num_classes", "dropout_rate", "epsilon", "seed"});
  if (j.contains("model")) {
    const json& m = j.at("model");
    take(m, "feature_dim", base.model.feature_dim);
    take(m, "num_heads", base.model.num_heads);
    take(m, "ff_dim", base.model.ff_dim);
    take(m, "num_encoder_blocks", base.model.num_encoder_blocks);
    take(m, "head_hidden_1", base.model.head_hidden_1);
    take(m, "head_hidden_2", base.model.head_hidden_2);
    take(m, "num_classes", base.model.num_classes);
    take(m, "dropout_rate", base.model.dropout_rate);
    take(m, "epsilon", base.model.epsilon);
    take(m, "seed", base.model.seed);
  }

  apply_section(j, "train",
                {"epochs", "batch_size", "learning_rate", "plateau_factor", "plateau_patience",
                 "focal_alpha", "focal_gamma", "regression_weight", "seed"});
  if (j.contains("train")) {
    const json& t = j.at("train");
    take(t, "epochs", base.train.epochs);
    take(t, "batch_size", base.train.batch_size);
    take(t, "learning_rate", base.train.learning_rate);
    take(t, "plateau_factor", base.train.plateau_factor);
    take(t, "plateau_patience", base.train.plateau_patience);
    take(t, "focal_alpha", base.train.focal_alpha);
    take(t, "focal_gamma", base.train.focal_gamma);
    take(t, "regression_weight", base.train.regression_weight);
    take(t, "seed", base.train.seed);
  }

  apply_section(j, "postprocess",
                {"threshold", "nms_mode", "nms_overlap", "score_floor", "nms_sigma"});
  if (j.contains("postprocess")) {
    const json& p = j.at("postprocess");
    take(p, "threshold", base.post.threshold);
    if (p.contains("nms_mode")) {
      base.post.nms_mode = nms_mode_from_string(p.at("nms_mode").get<std::string>());
    }
    take(p, "nms_overlap", base.post.nms_overlap);
    take(p, "score_floor", base.post.score_floor);
    take(p, "nms_sigma", base.post.nms_sigma);
  }

  apply_section(j, "evaluation", {"tiou_thresholds"});
  if (j.contains("evaluation")) {
    take(j.at("evaluation"), "tiou_thresholds", base.eval.tiou_thresholds);
  }
  return base;
}

std::string run_config_to_json(const RunConfig& c) {
  json j;
  j["model"] = {{"feature_dim", c.model.feature_dim},
                {"num_heads", c.model.num_heads},
                {"ff_dim", c.model.ff_dim},
                {"num_encoder_blocks", c.model.num_encoder_blocks},
                {"head_hidden_1", c.model.head_hidden_1},
                {"head_hidden_2", c.model.head_hidden_2},
                {"num_classes", c.model.num_classes},
                {"dropout_rate", c.model.dropout_rate},
                {"epsilon", c.model.epsilon},
                {"seed", c.model.seed}};
  j["train"] = {{"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"learning_rate", c.train.learning_rate},
                {"plateau_factor", c.train.plateau_factor},
                {"plateau_patience", c.train.plateau_patience},
                {"focal_alpha", c.train.focal_alpha},
                {"focal_gamma", c.train.focal_gamma},
                {"regression_weight", c.train.regression_weight},
                {"seed", c.train.seed}};
  j["postprocess"] = {{"threshold", c.post.threshold},
                      {"nms_mode", to_string(c.post.nms_mode)},
                      {"nms_overlap", c.post.nms_overlap},
                      {"score_floor", c.post.score_floor},
                      {"nms_sigma", c.post.nms_sigma}};
  j["evaluation"] = {{"tiou_thresholds", c.eval.tiou_thresholds}};
  return j.dump(2) + "\n";
}

}  // namespace atal
