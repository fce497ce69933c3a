#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "atal/tensor.hpp"

namespace atal {

/// One ground-truth interval in seconds.
struct Segment {
  double start_s = 0.0;
  double end_s = 0.0;
};

/// All segments of one behavior class in one video, sorted and with
/// overlapping intervals merged.
struct AnnotationTrack {
  std::string video_id;
  std::string label;
  std::vector<Segment> segments;
};

/// Per-timestep features of one video plus the timestep-to-seconds mapping.
/// Values are kept as the on-disk 32-bit floats.
struct FeatureSequence {
  std::string video_id;
  int steps = 0;
  int feature_dim = 0;
  int frames_per_step = 64;
  double frames_per_second = 30.0;
  std::vector<float> data;  // row-major steps x feature_dim

  double window_s() const { return frames_per_step / frames_per_second; }
  double duration_s() const { return steps * window_s(); }
  std::vector<double> time_grid() const;
  Tensor to_tensor() const;
};

/// Window-center timestamps: t_i = (i*frames_per_step + frames_per_step/2)/fps.
std::vector<double> time_grid(int steps, int frames_per_step, double fps);
/// Nearest step index for a timestamp (inverse of time_grid, clamped).
int step_for_time(double t_s, int steps, int frames_per_step, double fps);

// -- ATFX feature files -------------------------------------------------------
// Layout, all little-endian: "ATFX" | u32 version | u32 id_len | id bytes |
// u32 steps | u32 feature_dim | u32 frames_per_step | f32 fps |
// steps*feature_dim f32 payload. Round trips bitwise.

void write_atfx(const std::filesystem::path& path, const FeatureSequence& seq);
FeatureSequence read_atfx(const std::filesystem::path& path);

// -- annotations ----------------------------------------------------------------
// Line-delimited text, tab-separated: video_id subject_id class start_s end_s.
// '#' lines are comments. Seconds are written in shortest round-trip form.

struct AnnotationRecord {
  std::string video_id;
  std::string subject_id;
  std::string label;
  double start_s = 0.0;
  double end_s = 0.0;
};

struct AnnotationSet {
  std::vector<AnnotationRecord> records;
  std::map<std::string, std::string> subject_of;                       // video -> subject
  std::map<std::string, std::map<std::string, AnnotationTrack>> tracks;  // video -> class -> track

  /// Track for (video, class); empty track when the behavior never occurs.
  AnnotationTrack track_for(const std::string& video_id, const std::string& label) const;
};

void write_annotations(const std::filesystem::path& path,
                       const std::vector<AnnotationRecord>& records);
AnnotationSet load_annotations(const std::filesystem::path& path);

/// Sorts and merges raw segments of one (video, class) pair; rejects
/// zero-or-negative-length input segments. Touching intervals merge.
AnnotationTrack merge_track(std::string video_id, std::string label,
                            std::vector<Segment> segments);

// -- manifest ------------------------------------------------------------------

struct ManifestEntry {
  std::string video_id;
  std::string subject_id;
  std::string features_path;  // relative to the manifest directory
  int steps = 0;
  std::string subset;  // "train", "test", or empty
};

struct Manifest {
  int frames_per_step = 64;
  double fps = 30.0;
  std::vector<std::string> classes;
  std::string annotations_path = "annotations.tsv";
  std::vector<ManifestEntry> videos;
};

void write_manifest(const std::filesystem::path& path, const Manifest& m);
Manifest read_manifest(const std::filesystem::path& path);

// -- synthetic corpus ------------------------------------------------------------

/// Generator settings. Segment placement is window-aligned so that boundary
/// distances are recoverable from the feature grid; durations are sampled in
/// whole windows within [min_duration_s, max_duration_s].
struct SynthConfig {
  int videos = 50;
  int steps = 84;
  int feature_dim = 32;
  int frames_per_step = 64;
  double fps = 30.0;
  std::vector<std::string> classes = {"look_face", "look_object", "smile", "vocal"};
  double snr = 4.0;
  int min_segments = 1;
  int max_segments = 3;
  double min_duration_s = 4.0;
  double max_duration_s = 10.0;
  int videos_per_subject = 2;
  uint64_t seed = 0;

  void validate() const;
  double window_s() const { return frames_per_step / fps; }
};

struct SynthVideo {
  FeatureSequence features;
  std::string subject_id;
  std::vector<AnnotationTrack> tracks;  // one per class, possibly empty
};

struct SynthCorpus {
  std::vector<SynthVideo> videos;
  std::vector<std::string> classes;
};

/// Unit-norm, pairwise-orthogonal class signature directions, deterministic
/// in the seed. Exposed so tests can probe separability independently.
std::vector<Tensor> synth_signatures(int feature_dim, int num_classes, uint64_t seed);

/// Unit-variance noise plus snr-scaled class signatures inside the sampled
/// ground-truth segments. Deterministic in the seed; segments that cannot be
/// placed after a bounded number of retries cause rejection.
SynthCorpus synth_generate(const SynthConfig& config);

// -- subject-level split --------------------------------------------------------

struct SplitResult {
  std::vector<std::string> train_videos;
  std::vector<std::string> test_videos;
};

/// Splits videos by subject id: no subject ever appears on both sides. The
/// train side is filled subject by subject until it reaches ratio*total
/// videos. Requires at least two subjects.
SplitResult train_test_split(
    const std::vector<std::pair<std::string, std::string>>& video_subject,
    double ratio, uint64_t seed);

}  // namespace atal
