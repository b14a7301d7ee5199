#pragma once

// Binary checkpoint: config text and hash, feature dims, step counter,
// parameters sorted by name, and the optimizer moments.
//
// Layout (little-endian): "MESMCKPT", u32 version, str config, str hash,
// i32 video_dim, i32 text_dim, i32 vocab, i64 step, u64 count, then per
// parameter: str name, i64 rows, i64 cols, f32 values, f32 m, f32 v.
// str is a u64 byte length followed by the bytes.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>

#include "mesm/model.hpp"
#include "mesm/optimizer.hpp"

namespace mesm {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string checkpoint_bytes(const MesmModel<float>& model, const AdamState<float>& state);
void save_checkpoint(const std::filesystem::path& path, const MesmModel<float>& model, const AdamState<float>& state);

struct LoadedCheckpoint {
  RunConfig config;
  ModelDims dims;
  std::unique_ptr<MesmModel<float>> model;
  AdamState<float> state;
};

LoadedCheckpoint load_checkpoint_bytes(const std::string& bytes);
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mesm
