#pragma once

#include <filesystem>
#include <string>

#include "atal/model.hpp"

namespace atal {

/// Checkpoint layout, little-endian: "ATAL" | u32 format version | u32 header
/// length | JSON header (config, class label, parameter manifest with
/// names/shapes/offsets, running statistics as hex floats) | raw f32
/// parameter blocks in manifest order. Writing is atomic (write then rename)
/// and a write/read/write cycle is byte-identical.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const std::string& class_label);

struct LoadedCheckpoint {
  ModelParams params;
  std::string class_label;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Writes content to a temporary file in the target directory and renames it
/// into place, so interrupted runs never leave a partial file.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace atal
