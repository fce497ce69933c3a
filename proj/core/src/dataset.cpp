#include "atal/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "atal/rng.hpp"
#include "atal/text.hpp"

namespace atal {

namespace {

using nlohmann::json;

void io_fail(const std::string& msg) { throw std::runtime_error(msg); }

void write_u32_le(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_f32_le(std::ostream& os, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32_le(os, bits);
}

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) : path_(path.string()) {
    std::ifstream f(path, std::ios::binary);
    if (!f) io_fail(path_ + ": cannot open");
    std::ostringstream ss;
    ss << f.rdbuf();
    bytes_ = ss.str();
  }

  uint32_t u32(const char* what) {
    if (pos_ + 4 > bytes_.size()) {
      io_fail(path_ + ": truncated reading " + what + " at offset " + std::to_string(pos_));
    }
    const unsigned char* b = reinterpret_cast<const unsigned char*>(bytes_.data() + pos_);
    pos_ += 4;
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
  }

  float f32(const char* what) {
    const uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  std::string raw(size_t n, const char* what) {
    if (pos_ + n > bytes_.size()) {
      io_fail(path_ + ": truncated reading " + what + " at offset " + std::to_string(pos_));
    }
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  size_t pos() const { return pos_; }
  size_t size() const { return bytes_.size(); }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::string bytes_;
  size_t pos_ = 0;
};

constexpr uint32_t kAtfxVersion = 1;
constexpr const char kAtfxMagic[4] = {'A', 'T', 'F', 'X'};

}  // namespace

std::vector<double> time_grid(int steps, int frames_per_step, double fps) {
  if (steps < 1) throw std::invalid_argument("time_grid: need at least one step");
  std::vector<double> grid(static_cast<size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    grid[static_cast<size_t>(i)] =
        (static_cast<double>(i) * frames_per_step + frames_per_step * 0.5) / fps;
  }
  return grid;
}

int step_for_time(double t_s, int steps, int frames_per_step, double fps) {
  const double idx = t_s * fps / frames_per_step - 0.5;
  const int i = static_cast<int>(std::lround(idx));
  return std::min(steps - 1, std::max(0, i));
}

std::vector<double> FeatureSequence::time_grid() const {
  return atal::time_grid(steps, frames_per_step, frames_per_second);
}

Tensor FeatureSequence::to_tensor() const {
  Tensor t({steps, feature_dim});
  for (size_t i = 0; i < data.size(); ++i) t.data()[i] = static_cast<double>(data[i]);
  return t;
}

// -- ATFX -----------------------------------------------------------------------

void write_atfx(const std::filesystem::path& path, const FeatureSequence& seq) {
  if (seq.steps < 1 || seq.feature_dim < 1) {
    throw std::invalid_argument("atfx: sequence must have positive steps and dim");
  }
  if (seq.data.size() != static_cast<size_t>(seq.steps) * static_cast<size_t>(seq.feature_dim)) {
    throw std::invalid_argument("atfx: payload size does not match steps*dim");
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) io_fail(path.string() + ": cannot open for writing");
  f.write(kAtfxMagic, 4);
  write_u32_le(f, kAtfxVersion);
  write_u32_le(f, static_cast<uint32_t>(seq.video_id.size()));
  f.write(seq.video_id.data(), static_cast<std::streamsize>(seq.video_id.size()));
  write_u32_le(f, static_cast<uint32_t>(seq.steps));
  write_u32_le(f, static_cast<uint32_t>(seq.feature_dim));
  write_u32_le(f, static_cast<uint32_t>(seq.frames_per_step));
  write_f32_le(f, static_cast<float>(seq.frames_per_second));
  for (float v : seq.data) write_f32_le(f, v);
  if (!f) io_fail(path.string() + ": write failed");
}

FeatureSequence read_atfx(const std::filesystem::path& path) {
  Reader r(path);
  const std::string magic = r.raw(4, "magic");
  if (std::memcmp(magic.data(), kAtfxMagic, 4) != 0) {
    io_fail(r.path() + ": bad magic at offset 0 (expected 'ATFX')");
  }
  const uint32_t version = r.u32("version");
  if (version != kAtfxVersion) {
    io_fail(r.path() + ": unsupported version " + std::to_string(version) +
            " at offset 4 (expected " + std::to_string(kAtfxVersion) + ")");
  }
  const uint32_t id_len = r.u32("video_id length");
  if (id_len > 4096) {
    io_fail(r.path() + ": implausible video_id length " + std::to_string(id_len) +
            " at offset 8");
  }
  FeatureSequence seq;
  seq.video_id = r.raw(id_len, "video_id");
  const size_t dims_offset = r.pos();
  const uint32_t steps = r.u32("steps");
  const uint32_t dim = r.u32("feature_dim");
  if (steps < 1 || dim < 1 || steps > 10'000'000 || dim > 1'000'000) {
    io_fail(r.path() + ": implausible dimensions steps=" + std::to_string(steps) +
            " dim=" + std::to_string(dim) + " at offset " + std::to_string(dims_offset));
  }
  seq.steps = static_cast<int>(steps);
  seq.feature_dim = static_cast<int>(dim);
  seq.frames_per_step = static_cast<int>(r.u32("frames_per_step"));
  if (seq.frames_per_step < 1) io_fail(r.path() + ": frames_per_step must be positive");
  seq.frames_per_second = static_cast<double>(r.f32("fps"));
  if (!(seq.frames_per_second > 0.0)) io_fail(r.path() + ": fps must be positive");

  const size_t payload_offset = r.pos();
  const size_t expected = static_cast<size_t>(steps) * static_cast<size_t>(dim);
  const size_t available = (r.size() - payload_offset) / 4;
  if (r.size() - payload_offset != expected * 4) {
    io_fail(r.path() + ": payload at offset " + std::to_string(payload_offset) +
            " holds " + std::to_string(available) + " floats but header declares " +
            std::to_string(steps) + "x" + std::to_string(dim) + " = " +
            std::to_string(expected));
  }
  seq.data.resize(expected);
  for (size_t i = 0; i < expected; ++i) seq.data[i] = r.f32("payload");
  return seq;
}

// -- annotations ------------------------------------------------------------------

AnnotationTrack merge_track(std::string video_id, std::string label,
                            std::vector<Segment> segments) {
  for (const Segment& s : segments) {
    if (!(s.start_s < s.end_s)) {
      throw std::invalid_argument("annotation: start " + fmt_double(s.start_s) +
                                  " must be below end " + fmt_double(s.end_s) + " for " +
                                  video_id + "/" + label);
    }
  }
  std::sort(segments.begin(), segments.end(),
            [](const Segment& a, const Segment& b) { return a.start_s < b.start_s; });
  std::vector<Segment> merged;
  for (const Segment& s : segments) {
    if (!merged.empty() && s.start_s <= merged.back().end_s) {
      merged.back().end_s = std::max(merged.back().end_s, s.end_s);
    } else {
      merged.push_back(s);
    }
  }
  return AnnotationTrack{std::move(video_id), std::move(label), std::move(merged)};
}

AnnotationTrack AnnotationSet::track_for(const std::string& video_id,
                                         const std::string& label) const {
  auto vi = tracks.find(video_id);
  if (vi != tracks.end()) {
    auto ci = vi->second.find(label);
    if (ci != vi->second.end()) return ci->second;
  }
  return AnnotationTrack{video_id, label, {}};
}

void write_annotations(const std::filesystem::path& path,
                       const std::vector<AnnotationRecord>& records) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) io_fail(path.string() + ": cannot open for writing");
  f << "# video_id\tsubject_id\tclass\tstart_s\tend_s\n";
  for (const AnnotationRecord& r : records) {
    f << r.video_id << '\t' << r.subject_id << '\t' << r.label << '\t'
      << fmt_double(r.start_s) << '\t' << fmt_double(r.end_s) << '\n';
  }
  if (!f) io_fail(path.string() + ": write failed");
}

AnnotationSet load_annotations(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) io_fail(path.string() + ": cannot open");
  AnnotationSet set;
  std::string line;
  int line_no = 0;
  std::map<std::string, std::map<std::string, std::vector<Segment>>> raw;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    size_t start = 0;
    while (true) {
      const size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 5) {
      io_fail(path.string() + ":" + std::to_string(line_no) + ": expected 5 fields, got " +
              std::to_string(fields.size()));
    }
    AnnotationRecord rec;
    rec.video_id = fields[0];
    rec.subject_id = fields[1];
    rec.label = fields[2];
    try {
      rec.start_s = parse_double(fields[3]);
      rec.end_s = parse_double(fields[4]);
    } catch (const std::exception& e) {
      io_fail(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!(rec.start_s < rec.end_s)) {
      io_fail(path.string() + ":" + std::to_string(line_no) + ": start " + fields[3] +
              " must be below end " + fields[4]);
    }
    auto it = set.subject_of.find(rec.video_id);
    if (it != set.subject_of.end() && it->second != rec.subject_id) {
      io_fail(path.string() + ":" + std::to_string(line_no) + ": video " + rec.video_id +
              " listed with two subjects (" + it->second + ", " + rec.subject_id + ")");
    }
    set.subject_of[rec.video_id] = rec.subject_id;
    raw[rec.video_id][rec.label].push_back(Segment{rec.start_s, rec.end_s});
    set.records.push_back(std::move(rec));
  }
  for (auto& [video, by_class] : raw) {
    for (auto& [label, segs] : by_class) {
      set.tracks[video][label] = merge_track(video, label, std::move(segs));
    }
  }
  return set;
}

// -- manifest ----------------------------------------------------------------------

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  json j;
  j["frames_per_step"] = m.frames_per_step;
  j["fps"] = m.fps;
  j["classes"] = m.classes;
  j["annotations"] = m.annotations_path;
  j["videos"] = json::array();
  for (const ManifestEntry& e : m.videos) {
    json v;
    v["video_id"] = e.video_id;
    v["subject_id"] = e.subject_id;
    v["features"] = e.features_path;
    v["steps"] = e.steps;
    if (!e.subset.empty()) v["subset"] = e.subset;
    j["videos"].push_back(std::move(v));
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) io_fail(path.string() + ": cannot open for writing");
  f << j.dump(2) << '\n';
  if (!f) io_fail(path.string() + ": write failed");
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) io_fail(path.string() + ": cannot open");
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    io_fail(path.string() + ": " + e.what());
  }
  Manifest m;
  m.frames_per_step = j.at("frames_per_step").get<int>();
  m.fps = j.at("fps").get<double>();
  m.classes = j.at("classes").get<std::vector<std::string>>();
  m.annotations_path = j.at("annotations").get<std::string>();
  for (const json& v : j.at("videos")) {
    ManifestEntry e;
    e.video_id = v.at("video_id").get<std::string>();
    e.subject_id = v.at("subject_id").get<std::string>();
    e.features_path = v.at("features").get<std::string>();
    e.steps = v.at("steps").get<int>();
    if (v.contains("subset")) e.subset = v.at("subset").get<std::string>();
    m.videos.push_back(std::move(e));
  }
  return m;
}

// -- synthetic corpus ---------------------------------------------------------------

void SynthConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("synth config: " + msg); };
  if (videos < 1) fail("need at least one video");
  if (steps < 1) fail("need at least one step per video");
  if (feature_dim < static_cast<int>(classes.size())) {
    fail("feature_dim must be at least the class count for independent signatures");
  }
  if (classes.empty()) fail("need at least one class");
  if (frames_per_step < 1 || !(fps > 0.0)) fail("bad time mapping");
  if (snr < 0.0) fail("snr must be non-negative");
  if (min_segments < 0 || max_segments < min_segments) fail("bad segment count range");
  if (!(min_duration_s > 0.0) || max_duration_s < min_duration_s) fail("bad duration range");
  if (min_duration_s < window_s()) {
    fail("min duration " + fmt_double(min_duration_s) + "s is below one feature window (" +
         fmt_double(window_s()) + "s)");
  }
  if (max_duration_s >= steps * window_s()) fail("max duration must be shorter than a video");
  if (videos_per_subject < 1) fail("videos_per_subject must be positive");
}

std::vector<Tensor> synth_signatures(int feature_dim, int num_classes, uint64_t seed) {
  Rng rng(derive_seed(seed, "signatures"));
  std::vector<Tensor> sigs;
  for (int c = 0; c < num_classes; ++c) {
    Tensor v({feature_dim});
    for (int i = 0; i < feature_dim; ++i) v.at(i) = rng.next_gaussian();
    // Gram-Schmidt against earlier signatures, then scale to unit-RMS
    // entries (norm sqrt(dim)): with unit-variance noise, snr is then the
    // per-feature signal-to-noise ratio inside a segment.
    for (const Tensor& u : sigs) {
      double dot = 0.0, uu = 0.0;
      for (int i = 0; i < feature_dim; ++i) {
        dot += v.at(i) * u.at(i);
        uu += u.at(i) * u.at(i);
      }
      for (int i = 0; i < feature_dim; ++i) v.at(i) -= (dot / uu) * u.at(i);
    }
    double norm = 0.0;
    for (int i = 0; i < feature_dim; ++i) norm += v.at(i) * v.at(i);
    norm = std::sqrt(norm);
    if (norm < 1e-8) throw std::runtime_error("synth: degenerate signature draw");
    const double scale = std::sqrt(static_cast<double>(feature_dim)) / norm;
    for (int i = 0; i < feature_dim; ++i) v.at(i) *= scale;
    sigs.push_back(std::move(v));
  }
  return sigs;
}

SynthCorpus synth_generate(const SynthConfig& config) {
  config.validate();
  const double w_s = config.window_s();
  const int num_classes = static_cast<int>(config.classes.size());
  const std::vector<Tensor> sigs =
      synth_signatures(config.feature_dim, num_classes, config.seed);

  // Duration range in whole windows.
  const int min_w = std::max<int>(1, static_cast<int>(std::ceil(config.min_duration_s / w_s - 1e-9)));
  const int max_w = std::max(min_w, static_cast<int>(std::floor(config.max_duration_s / w_s + 1e-9)));

  SynthCorpus corpus;
  corpus.classes = config.classes;
  for (int v = 0; v < config.videos; ++v) {
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "synth_%04d", v);
    char subjbuf[32];
    std::snprintf(subjbuf, sizeof(subjbuf), "subj_%03d", v / config.videos_per_subject);

    SynthVideo video;
    video.subject_id = subjbuf;
    video.features.video_id = idbuf;
    video.features.steps = config.steps;
    video.features.feature_dim = config.feature_dim;
    video.features.frames_per_step = config.frames_per_step;
    video.features.frames_per_second = config.fps;

    Rng rng(derive_seed(config.seed, std::string("video:") + idbuf));
    std::vector<double> values(static_cast<size_t>(config.steps) *
                               static_cast<size_t>(config.feature_dim));
    for (double& x : values) x = rng.next_gaussian();

    for (int c = 0; c < num_classes; ++c) {
      const int count = static_cast<int>(rng.uniform_int(config.min_segments, config.max_segments));
      std::vector<std::pair<int, int>> placed;  // [start_w, end_w) in windows
      for (int s = 0; s < count; ++s) {
        bool ok = false;
        for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
          const int dur = static_cast<int>(rng.uniform_int(min_w, std::min(max_w, config.steps - 1)));
          const int start = static_cast<int>(rng.uniform_int(0, config.steps - dur));
          bool overlaps = false;
          for (const auto& [ps, pe] : placed) {
            // Keep a one-window gap so merged tracks equal the sampled ones.
            if (start < pe + 1 && ps < start + dur + 1) {
              overlaps = true;
              break;
            }
          }
          if (!overlaps) {
            placed.emplace_back(start, start + dur);
            ok = true;
          }
        }
        if (!ok) {
          throw std::runtime_error("synth: could not place segment " + std::to_string(s) +
                                   " of class " + config.classes[static_cast<size_t>(c)] +
                                   " in " + video.features.video_id +
                                   " after 100 attempts; loosen the segment distribution");
        }
      }
      std::sort(placed.begin(), placed.end());
      AnnotationTrack track;
      track.video_id = video.features.video_id;
      track.label = config.classes[static_cast<size_t>(c)];
      for (const auto& [sw, ew] : placed) {
        track.segments.push_back(Segment{sw * w_s, ew * w_s});
        for (int t = sw; t < ew; ++t) {
          for (int f = 0; f < config.feature_dim; ++f) {
            values[static_cast<size_t>(t) * config.feature_dim + f] +=
                config.snr * sigs[static_cast<size_t>(c)].at(f);
          }
        }
      }
      video.tracks.push_back(std::move(track));
    }

    video.features.data.resize(values.size());
    for (size_t i = 0; i < values.size(); ++i) {
      video.features.data[i] = static_cast<float>(values[i]);
    }
    corpus.videos.push_back(std::move(video));
  }
  return corpus;
}

// -- split -------------------------------------------------------------------------

SplitResult train_test_split(
    const std::vector<std::pair<std::string, std::string>>& video_subject,
    double ratio, uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw std::invalid_argument("split: ratio must be in (0, 1)");
  }
  std::map<std::string, std::vector<std::string>> by_subject;
  for (const auto& [video, subject] : video_subject) by_subject[subject].push_back(video);
  if (by_subject.size() < 2) {
    throw std::invalid_argument("split: need at least 2 subjects, got " +
                                std::to_string(by_subject.size()));
  }
  std::vector<std::string> subjects;
  for (const auto& [subject, _] : by_subject) subjects.push_back(subject);
  Rng rng(derive_seed(seed, "split"));
  rng.shuffle(subjects);

  const double target = ratio * static_cast<double>(video_subject.size());
  SplitResult out;
  size_t assigned_train = 0;
  for (const std::string& subject : subjects) {
    const auto& vids = by_subject[subject];
    if (static_cast<double>(assigned_train) < target) {
      out.train_videos.insert(out.train_videos.end(), vids.begin(), vids.end());
      assigned_train += vids.size();
    } else {
      out.test_videos.insert(out.test_videos.end(), vids.begin(), vids.end());
    }
  }
  // Both sides must be populated; move the last subject over if one is empty.
  if (out.test_videos.empty()) {
    const std::string& last = subjects.back();
    const auto& vids = by_subject[last];
    out.train_videos.erase(out.train_videos.end() - static_cast<long>(vids.size()),
                           out.train_videos.end());
    out.test_videos = vids;
  } else if (out.train_videos.empty()) {
    const std::string& first = subjects.front();
    const auto& vids = by_subject[first];
    out.test_videos.erase(out.test_videos.begin(),
                          out.test_videos.begin() + static_cast<long>(vids.size()));
    out.train_videos = vids;
  }
  std::sort(out.train_videos.begin(), out.train_videos.end());
  std::sort(out.test_videos.begin(), out.test_videos.end());
  return out;
}

}  // namespace atal
