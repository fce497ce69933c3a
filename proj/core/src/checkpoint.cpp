#include "atal/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include <json.hpp>

namespace atal {

namespace {

using nlohmann::json;

constexpr uint32_t kCheckpointVersion = 1;
constexpr const char kMagic[4] = {'A', 'T', 'A', 'L'};

std::string hex_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

double parse_hex_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) {
    throw std::runtime_error("checkpoint: bad hex float '" + s + "'");
  }
  return v;
}

json norm_state_to_json(const BatchNormState& s) {
  json j;
  j["initialized"] = s.initialized;
  json mean = json::array(), var = json::array();
  for (int i = 0; i < s.running_mean.dim(0); ++i) {
    mean.push_back(hex_double(s.running_mean.at(i)));
    var.push_back(hex_double(s.running_var.at(i)));
  }
  j["mean"] = std::move(mean);
  j["var"] = std::move(var);
  return j;
}

void norm_state_from_json(const json& j, BatchNormState& s) {
  s.initialized = j.at("initialized").get<bool>();
  const auto& mean = j.at("mean");
  const auto& var = j.at("var");
  if (static_cast<int>(mean.size()) != s.running_mean.dim(0)) {
    throw std::runtime_error("checkpoint: running-statistics width mismatch");
  }
  for (int i = 0; i < s.running_mean.dim(0); ++i) {
    s.running_mean.at(i) = parse_hex_double(mean[static_cast<size_t>(i)].get<std::string>());
    s.running_var.at(i) = parse_hex_double(var[static_cast<size_t>(i)].get<std::string>());
  }
}

json config_to_json(const ModelConfig& c) {
  json j;
  j["feature_dim"] = c.feature_dim;
  j["num_heads"] = c.num_heads;
  j["ff_dim"] = c.ff_dim;
  j["num_encoder_blocks"] = c.num_encoder_blocks;
  j["head_hidden_1"] = c.head_hidden_1;
  j["head_hidden_2"] = c.head_hidden_2;
  j["num_classes"] = c.num_classes;
  j["dropout_rate"] = hex_double(c.dropout_rate);
  j["epsilon"] = hex_double(c.epsilon);
  j["seed"] = c.seed;
  return j;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.feature_dim = j.at("feature_dim").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.ff_dim = j.at("ff_dim").get<int>();
  c.num_encoder_blocks = j.at("num_encoder_blocks").get<int>();
  c.head_hidden_1 = j.at("head_hidden_1").get<int>();
  c.head_hidden_2 = j.at("head_hidden_2").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.dropout_rate = parse_hex_double(j.at("dropout_rate").get<std::string>());
  c.epsilon = parse_hex_double(j.at("epsilon").get<std::string>());
  c.seed = j.at("seed").get<uint64_t>();
  return c;
}

void put_u32_le(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

uint32_t get_u32_le(const std::string& bytes, size_t pos) {
  const unsigned char* b = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error(tmp.string() + ": cannot open for writing");
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw std::runtime_error(tmp.string() + ": write failed");
  }
  std::filesystem::rename(tmp, path);
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const std::string& class_label) {
  json header;
  header["config"] = config_to_json(params.config);
  header["class"] = class_label;
  json manifest = json::array();
  int64_t offset = 0;
  params.visit([&](const std::string& name, const Tensor& t) {
    json p;
    p["name"] = name;
    p["shape"] = t.shape();
    p["offset"] = offset;
    manifest.push_back(std::move(p));
    offset += t.size();
  });
  header["params"] = std::move(manifest);
  json states;
  params.visit_norm_states([&](const std::string& name, const BatchNormState& s) {
    states[name] = norm_state_to_json(s);
  });
  header["norm_states"] = std::move(states);

  const std::string header_text = header.dump();
  std::string out;
  out.append(kMagic, 4);
  put_u32_le(out, kCheckpointVersion);
  put_u32_le(out, static_cast<uint32_t>(header_text.size()));
  out += header_text;
  params.visit([&](const std::string&, const Tensor& t) {
    for (int64_t i = 0; i < t.size(); ++i) {
      const float f = static_cast<float>(t.data()[i]);
      uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32_le(out, bits);
    }
  });
  write_file_atomic(path, out);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error(path.string() + ": cannot open");
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string bytes = ss.str();

  auto fail = [&](const std::string& msg) {
    throw std::runtime_error(path.string() + ": " + msg);
  };
  if (bytes.size() < 12) fail("truncated header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) fail("bad magic at offset 0 (expected 'ATAL')");
  const uint32_t version = get_u32_le(bytes, 4);
  if (version != kCheckpointVersion) {
    fail("unsupported version " + std::to_string(version));
  }
  const uint32_t header_len = get_u32_le(bytes, 8);
  if (12 + static_cast<size_t>(header_len) > bytes.size()) fail("truncated header text");

  json header;
  try {
    header = json::parse(bytes.substr(12, header_len));
  } catch (const json::exception& e) {
    fail(std::string("bad header: ") + e.what());
  }

  LoadedCheckpoint out;
  const ModelConfig config = config_from_json(header.at("config"));
  out.class_label = header.at("class").get<std::string>();
  out.params = init_params(config, config.seed);

  const size_t payload_start = 12 + header_len;
  const size_t payload_floats = (bytes.size() - payload_start) / 4;
  if ((bytes.size() - payload_start) % 4 != 0) fail("payload is not float-aligned");

  // Index the manifest, then fill each tensor from its block.
  std::map<std::string, std::pair<std::vector<int>, int64_t>> manifest;
  for (const json& p : header.at("params")) {
    manifest[p.at("name").get<std::string>()] = {
        p.at("shape").get<std::vector<int>>(), p.at("offset").get<int64_t>()};
  }
  int64_t expected_total = 0;
  out.params.visit([&](const std::string& name, Tensor& t) {
    auto it = manifest.find(name);
    if (it == manifest.end()) fail("missing parameter '" + name + "' in manifest");
    const auto& [shape, offset] = it->second;
    if (shape != t.shape()) {
      fail("parameter '" + name + "' has shape mismatch against the config");
    }
    if (offset + t.size() > static_cast<int64_t>(payload_floats)) {
      fail("parameter '" + name + "' extends past the payload");
    }
    for (int64_t i = 0; i < t.size(); ++i) {
      const uint32_t bits =
          get_u32_le(bytes, payload_start + static_cast<size_t>(offset + i) * 4);
      float v;
      std::memcpy(&v, &bits, 4);
      t.data()[i] = static_cast<double>(v);
    }
    expected_total += t.size();
  });
  if (expected_total != static_cast<int64_t>(payload_floats)) {
    fail("payload holds " + std::to_string(payload_floats) + " floats, manifest expects " +
         std::to_string(expected_total));
  }

  const json& states = header.at("norm_states");
  out.params.visit_norm_states([&](const std::string& name, BatchNormState& s) {
    if (!states.contains(name)) fail("missing running statistics for '" + name + "'");
    norm_state_from_json(states.at(name), s);
  });
  return out;
}

}  // namespace atal
