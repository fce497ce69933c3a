// atal: synthesize corpora, train per-behavior localization models, run
// inference, and evaluate predictions. Subcommands: synth, train, infer, eval.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "atal/checkpoint.hpp"
#include "atal/dataset.hpp"
#include "atal/evaluation.hpp"
#include "atal/model.hpp"
#include "atal/postprocess.hpp"
#include "atal/run_config.hpp"
#include "atal/text.hpp"
#include "atal/training.hpp"

namespace fs = std::filesystem;
using namespace atal;

namespace {

constexpr const char* kKnownClasses[] = {"look_face", "look_object", "smile", "vocal"};

struct CorpusVideo {
  FeatureSequence features;
  std::string subject_id;
};

struct Corpus {
  Manifest manifest;
  AnnotationSet annotations;
  std::vector<CorpusVideo> videos;  // filtered by subset, manifest order
};

// subset: "train", "test", "all", or "auto" (prefer `preferred` when the
// manifest carries split labels, otherwise everything).
Corpus load_corpus(const fs::path& dir, const std::string& subset,
                   const std::string& preferred) {
  Corpus c;
  c.manifest = read_manifest(dir / "manifest.json");
  c.annotations = load_annotations(dir / c.manifest.annotations_path);

  std::string effective = subset;
  if (subset == "auto") {
    const bool has_split = std::any_of(c.manifest.videos.begin(), c.manifest.videos.end(),
                                       [](const ManifestEntry& e) { return !e.subset.empty(); });
    effective = has_split ? preferred : "all";
  }
  for (const ManifestEntry& e : c.manifest.videos) {
    if (effective != "all" && e.subset != effective) continue;
    CorpusVideo v;
    v.features = read_atfx(dir / e.features_path);
    if (v.features.video_id != e.video_id) {
      throw std::runtime_error("corpus: manifest entry " + e.video_id +
                               " points at features for " + v.features.video_id);
    }
    v.subject_id = e.subject_id;
    c.videos.push_back(std::move(v));
  }
  if (c.videos.empty()) {
    throw std::runtime_error("corpus: no videos in subset '" + effective + "' under " +
                             dir.string());
  }
  return c;
}

void check_class(const std::string& label) {
  for (const char* k : kKnownClasses) {
    if (label == k) return;
  }
  std::string valid;
  for (const char* k : kKnownClasses) valid += std::string(valid.empty() ? "" : ", ") + k;
  throw std::runtime_error("unknown class '" + label + "' (valid: " + valid + ")");
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  SynthConfig config;
  double split_ratio = 0.8;
  bool no_split = false;
};

int run_synth(const SynthArgs& args) {
  const fs::path out_dir(args.out);
  fs::create_directories(out_dir / "features");

  const SynthCorpus corpus = synth_generate(args.config);

  std::vector<AnnotationRecord> records;
  std::map<std::string, int> segments_per_class;
  std::vector<std::pair<std::string, std::string>> video_subject;
  for (const SynthVideo& v : corpus.videos) {
    video_subject.emplace_back(v.features.video_id, v.subject_id);
    for (const AnnotationTrack& track : v.tracks) {
      for (const Segment& s : track.segments) {
        records.push_back(AnnotationRecord{v.features.video_id, v.subject_id, track.label,
                                           s.start_s, s.end_s});
        ++segments_per_class[track.label];
      }
    }
  }

  std::map<std::string, std::string> subset_of;
  if (!args.no_split) {
    const SplitResult split =
        train_test_split(video_subject, args.split_ratio, args.config.seed);
    for (const std::string& v : split.train_videos) subset_of[v] = "train";
    for (const std::string& v : split.test_videos) subset_of[v] = "test";
  }

  Manifest manifest;
  manifest.frames_per_step = args.config.frames_per_step;
  manifest.fps = args.config.fps;
  manifest.classes = corpus.classes;
  for (const SynthVideo& v : corpus.videos) {
    write_atfx(out_dir / "features" / (v.features.video_id + ".atfx"), v.features);
    ManifestEntry e;
    e.video_id = v.features.video_id;
    e.subject_id = v.subject_id;
    e.features_path = "features/" + v.features.video_id + ".atfx";
    e.steps = v.features.steps;
    if (auto it = subset_of.find(e.video_id); it != subset_of.end()) e.subset = it->second;
    manifest.videos.push_back(std::move(e));
  }
  write_annotations(out_dir / "annotations.tsv", records);
  write_manifest(out_dir / "manifest.json", manifest);

  std::cout << "wrote " << corpus.videos.size() << " videos to " << out_dir.string() << "\n";
  for (const std::string& label : corpus.classes) {
    std::cout << "  " << label << ": " << segments_per_class[label] << " segments\n";
  }
  if (!args.no_split) {
    int train_n = 0, test_n = 0;
    for (const auto& [_, s] : subset_of) (s == "train" ? train_n : test_n) += 1;
    std::cout << "  split: " << train_n << " train / " << test_n << " test (by subject)\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string label;
  std::string config_file;
  std::string out;
  std::string subset = "auto";
  std::optional<uint64_t> seed;
  std::optional<int> epochs;
  std::optional<int> batch_size;
  std::optional<double> lr;
  std::optional<int> feature_dim, heads, ff_dim, blocks, hidden1, hidden2;
};

RunConfig resolve_config(const TrainArgs& args) {
  RunConfig config;
  if (!args.config_file.empty()) config = load_run_config(args.config_file, config);
  if (args.seed) {
    config.model.seed = derive_seed(*args.seed, "model");
    config.train.seed = derive_seed(*args.seed, "train");
  }
  if (args.epochs) config.train.epochs = *args.epochs;
  if (args.batch_size) config.train.batch_size = *args.batch_size;
  if (args.lr) config.train.learning_rate = *args.lr;
  if (args.feature_dim) config.model.feature_dim = *args.feature_dim;
  if (args.heads) config.model.num_heads = *args.heads;
  if (args.ff_dim) config.model.ff_dim = *args.ff_dim;
  if (args.blocks) config.model.num_encoder_blocks = *args.blocks;
  if (args.hidden1) config.model.head_hidden_1 = *args.hidden1;
  if (args.hidden2) config.model.head_hidden_2 = *args.hidden2;
  return config;
}

int run_train_one(const Corpus& corpus, const RunConfig& config, const std::string& label,
                  const fs::path& out_dir) {
  fs::create_directories(out_dir);

  std::vector<TrainVideo> videos;
  for (const CorpusVideo& v : corpus.videos) {
    if (v.features.feature_dim != config.model.feature_dim) {
      throw std::runtime_error("train: corpus feature dim " +
                               std::to_string(v.features.feature_dim) +
                               " does not match configured feature_dim " +
                               std::to_string(config.model.feature_dim));
    }
    TrainVideo tv;
    tv.video_id = v.features.video_id;
    tv.features = v.features.to_tensor();
    tv.targets = make_targets(corpus.annotations.track_for(v.features.video_id, label),
                              v.features.time_grid());
    videos.push_back(std::move(tv));
  }

  const TrainResult result = train(videos, config.model, config.train);

  save_checkpoint(out_dir / "checkpoint.atal", result.params, label);
  write_file_atomic(out_dir / "train_log.tsv", format_train_log(result.log));
  write_file_atomic(out_dir / "config.json", run_config_to_json(config));

  const EpochRecord& last = result.log.back();
  std::cout << "trained " << label << " for " << result.log.size() << " epochs; final total loss "
            << fmt_double(last.total_loss) << " (lr " << fmt_double(last.lr) << ")\n";
  std::cout << "checkpoint: " << (out_dir / "checkpoint.atal").string() << "\n";
  return 0;
}

int run_train(const TrainArgs& args) {
  if (args.label != "all") check_class(args.label);
  const RunConfig config = resolve_config(args);
  const Corpus corpus = load_corpus(args.data, args.subset, "train");

  if (args.label == "all") {
    for (const std::string& label : corpus.manifest.classes) {
      check_class(label);
      run_train_one(corpus, config, label, fs::path(args.out) / label);
    }
    return 0;
  }
  return run_train_one(corpus, config, args.label, args.out);
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

struct InferArgs {
  std::string ckpt;
  std::string data;
  std::string out;
  std::string subset = "auto";
  double threshold = 0.4;
  std::string nms_mode = "hard";
  double nms_overlap = 0.5;
  double score_floor = 0.001;
  double nms_sigma = 0.5;
};

int run_infer(const InferArgs& args) {
  LoadedCheckpoint ckpt = load_checkpoint(args.ckpt);
  const Corpus corpus = load_corpus(args.data, args.subset, "test");
  const NmsMode mode = nms_mode_from_string(args.nms_mode);

  std::string out = "# video_id\tclass\tstart_s\tend_s\tscore\n";
  for (const CorpusVideo& v : corpus.videos) {
    if (v.features.feature_dim != ckpt.params.config.feature_dim) {
      throw std::runtime_error("infer: corpus feature dim " +
                               std::to_string(v.features.feature_dim) +
                               " does not match checkpoint feature_dim " +
                               std::to_string(ckpt.params.config.feature_dim));
    }
    const std::vector<TimestepPrediction> preds =
        forward(v.features.to_tensor(), ckpt.params, NormMode::kInfer);
    std::vector<ScoredSegment> segments =
        decode(preds, v.features.time_grid(), args.threshold, v.features.duration_s(),
               ckpt.class_label);
    segments = nms(std::move(segments), args.nms_overlap, mode, args.score_floor,
                   args.nms_sigma);
    for (const ScoredSegment& s : segments) {
      out += v.features.video_id + '\t' + s.label + '\t' + fmt_double(s.start_s) + '\t' +
             fmt_double(s.end_s) + '\t' + fmt_double(s.score) + '\n';
    }
  }
  write_file_atomic(args.out, out);
  std::cout << "predictions: " << args.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string pred;
  std::string gt;
  std::string out;
  std::string subset = "auto";
  std::vector<double> tiou = {0.1, 0.3, 0.5, 0.7};
};

struct PredictionRecord {
  std::string video_id;
  ScoredSegment seg;
};

std::vector<PredictionRecord> load_predictions(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error(path.string() + ": cannot open");
  std::vector<PredictionRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    PredictionRecord r;
    std::string start, end, score;
    if (!(ss >> r.video_id >> r.seg.label >> start >> end >> score)) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": expected 5 fields");
    }
    r.seg.start_s = parse_double(start);
    r.seg.end_s = parse_double(end);
    r.seg.score = parse_double(score);
    out.push_back(std::move(r));
  }
  return out;
}

int run_eval(const EvalArgs& args) {
  const Corpus corpus = load_corpus(args.gt, args.subset, "test");
  const std::vector<PredictionRecord> preds = load_predictions(args.pred);

  std::set<std::string> known_videos;
  for (const CorpusVideo& v : corpus.videos) known_videos.insert(v.features.video_id);
  std::vector<std::string> offenders;
  for (const PredictionRecord& p : preds) {
    if (!known_videos.count(p.video_id)) offenders.push_back(p.video_id);
  }
  if (!offenders.empty()) {
    std::sort(offenders.begin(), offenders.end());
    offenders.erase(std::unique(offenders.begin(), offenders.end()), offenders.end());
    std::string msg = "eval: predictions reference unknown videos:";
    for (const std::string& v : offenders) msg += " " + v;
    throw std::runtime_error(msg);
  }

  // Classes: manifest order first, then any extra prediction-only labels.
  std::vector<std::string> labels = corpus.manifest.classes;
  for (const PredictionRecord& p : preds) {
    if (std::find(labels.begin(), labels.end(), p.seg.label) == labels.end()) {
      labels.push_back(p.seg.label);
    }
  }

  EvaluationReport report;
  report.tiou_thresholds = args.tiou;
  for (const std::string& label : labels) {
    PredictionsByVideo by_video;
    for (const PredictionRecord& p : preds) {
      if (p.seg.label == label) by_video[p.video_id].push_back(p.seg);
    }
    SegmentsByVideo gt;
    ConfusionCounts counts;
    for (const CorpusVideo& v : corpus.videos) {
      const AnnotationTrack track =
          corpus.annotations.track_for(v.features.video_id, label);
      gt[v.features.video_id] = track.segments;
      const std::vector<double> grid = v.features.time_grid();
      const std::vector<uint8_t> gt_labels = rasterize(track.segments, grid);
      std::vector<ScoredSegment> vp;
      if (auto it = by_video.find(v.features.video_id); it != by_video.end()) vp = it->second;
      const std::vector<uint8_t> pred_labels = rasterize(vp, grid);
      const FrameMetrics fm = frame_metrics(pred_labels, gt_labels);
      counts.tp += fm.counts.tp;
      counts.fp += fm.counts.fp;
      counts.tn += fm.counts.tn;
      counts.fn += fm.counts.fn;
    }
    ClassReport cr;
    cr.label = label;
    cr.frames = metrics_from_counts(counts);
    cr.ap = ap_table(by_video, gt, args.tiou);
    report.classes.push_back(std::move(cr));
  }

  const std::string rendered = render_report(report);
  write_file_atomic(args.out, report_to_json(report));
  fs::path txt_path(args.out);
  txt_path.replace_extension(".txt");
  write_file_atomic(txt_path, rendered);
  std::cout << rendered;
  std::cout << "report: " << args.out << " (rendered: " << txt_path.string() << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Anchor-free temporal action localization pipeline"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic feature corpus");
  synth->add_option("--out", synth_args.out, "Output corpus directory")->required();
  synth->add_option("--videos", synth_args.config.videos, "Number of videos")
      ->capture_default_str();
  synth->add_option("--steps", synth_args.config.steps, "Feature timesteps per video")
      ->capture_default_str();
  synth->add_option("--dim", synth_args.config.feature_dim, "Feature dimension")
      ->capture_default_str();
  synth->add_option("--snr", synth_args.config.snr, "Signature signal-to-noise ratio")
      ->capture_default_str();
  synth->add_option("--seed", synth_args.config.seed, "Root seed")->capture_default_str();
  synth->add_option("--min-segments", synth_args.config.min_segments,
                    "Minimum segments per class per video")
      ->capture_default_str();
  synth->add_option("--max-segments", synth_args.config.max_segments,
                    "Maximum segments per class per video")
      ->capture_default_str();
  synth->add_option("--min-duration", synth_args.config.min_duration_s,
                    "Minimum segment duration (seconds)")
      ->capture_default_str();
  synth->add_option("--max-duration", synth_args.config.max_duration_s,
                    "Maximum segment duration (seconds)")
      ->capture_default_str();
  synth->add_option("--videos-per-subject", synth_args.config.videos_per_subject,
                    "Videos recorded per synthetic subject")
      ->capture_default_str();
  synth->add_option("--split-ratio", synth_args.split_ratio,
                    "Train share of the subject-level split")
      ->capture_default_str();
  synth->add_flag("--no-split", synth_args.no_split, "Skip the train/test split");

  TrainArgs train_args;
  CLI::App* train_cmd = app.add_subcommand("train", "Train one behavior model");
  train_cmd->add_option("--data", train_args.data, "Corpus directory")->required();
  train_cmd->add_option("--class", train_args.label,
                        "Behavior class (look_face, look_object, smile, vocal, or all)")
      ->required();
  train_cmd->add_option("--config", train_args.config_file, "JSON config file");
  train_cmd->add_option("--out", train_args.out, "Output run directory")->required();
  train_cmd->add_option("--subset", train_args.subset, "train|test|all|auto")
      ->capture_default_str();
  train_cmd->add_option("--seed", train_args.seed, "Root seed (derives model+train seeds)");
  train_cmd->add_option("--epochs", train_args.epochs, "Training epochs (default 100)");
  train_cmd->add_option("--batch-size", train_args.batch_size, "Videos per batch (default 10)");
  train_cmd->add_option("--lr", train_args.lr, "Learning rate (default 1e-3)");
  train_cmd->add_option("--feature-dim", train_args.feature_dim,
                        "Model feature dimension (default 2048)");
  train_cmd->add_option("--heads", train_args.heads, "Attention heads (default 16)");
  train_cmd->add_option("--ff-dim", train_args.ff_dim, "Encoder MLP width (default 168)");
  train_cmd->add_option("--blocks", train_args.blocks, "Encoder blocks (default 1)");
  train_cmd->add_option("--head-hidden1", train_args.hidden1,
                        "First head trunk width (default 1024)");
  train_cmd->add_option("--head-hidden2", train_args.hidden2,
                        "Second head trunk width (default 512)");

  InferArgs infer_args;
  CLI::App* infer = app.add_subcommand("infer", "Decode predictions from a checkpoint");
  infer->add_option("--ckpt", infer_args.ckpt, "Checkpoint file")->required();
  infer->add_option("--data", infer_args.data, "Corpus directory")->required();
  infer->add_option("--out", infer_args.out, "Predictions file")->required();
  infer->add_option("--subset", infer_args.subset, "train|test|all|auto")
      ->capture_default_str();
  infer->add_option("--threshold", infer_args.threshold, "Decision threshold")
      ->capture_default_str();
  infer->add_option("--nms", infer_args.nms_mode, "hard|soft-linear|soft-gaussian")
      ->capture_default_str();
  infer->add_option("--nms-overlap", infer_args.nms_overlap, "Suppression overlap threshold")
      ->capture_default_str();
  infer->add_option("--score-floor", infer_args.score_floor, "Soft-NMS score floor")
      ->capture_default_str();
  infer->add_option("--nms-sigma", infer_args.nms_sigma, "Soft-NMS gaussian sigma")
      ->capture_default_str();

  EvalArgs eval_args;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a predictions file");
  eval_cmd->add_option("--pred", eval_args.pred, "Predictions file")->required();
  eval_cmd->add_option("--gt", eval_args.gt, "Ground-truth corpus directory")->required();
  eval_cmd->add_option("--out", eval_args.out, "Report file (JSON; .txt rendering beside it)")
      ->required();
  eval_cmd->add_option("--subset", eval_args.subset, "train|test|all|auto")
      ->capture_default_str();
  eval_cmd->add_option("--tiou", eval_args.tiou, "t-IoU thresholds")
      ->delimiter(',')
      ->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) return run_synth(synth_args);
    if (*train_cmd) return run_train(train_args);
    if (*infer) return run_infer(infer_args);
    if (*eval_cmd) return run_eval(eval_args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
