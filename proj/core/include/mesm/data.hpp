#pragma once

// Feature/annotation ingestion, padded batching and the synthetic dataset
// generator.
//
// On-disk layout of a dataset directory:
//   <name>.jsonl   manifest, one video per line
//   vocab.txt      one token string per line; line number = token id
//   features/      raw little-endian float32 matrices, row-major

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "mesm/span.hpp"

namespace mesm::data {

using FloatMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct VideoFeatures {
  std::string id;
  FloatMatrix frames;  // L_v x D_v
  double duration = 0.0;

  int length() const { return static_cast<int>(frames.rows()); }
};

struct QueryRecord {
  std::string qid;
  std::vector<int> tokens;
  std::vector<std::string> token_strings;
  FloatMatrix words;  // L_w x D_q
  std::vector<TemporalSpan> spans;
  int sentence_index = 0;

  int length() const { return static_cast<int>(words.rows()); }
};

/// A video with every query annotated on it.
struct VideoRecord {
  VideoFeatures video;
  std::vector<QueryRecord> queries;
};

/// One grounding problem: a video, all of its sentences, and the index of
/// the sentence to ground.
struct Sample {
  std::shared_ptr<const VideoRecord> record;
  int current = 0;
  FrameIndexSpan gt_frames;

  const VideoFeatures& video() const { return record->video; }
  const QueryRecord& query() const { return record->queries[static_cast<std::size_t>(current)]; }
  int sentence_count() const { return static_cast<int>(record->queries.size()); }
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<std::string> warnings;
  int video_dim = 0;
  int text_dim = 0;
  int vocab_size = 0;
};

/// Parses a manifest and every feature file it names. Samples are emitted
/// grouped per video in manifest order. Paths are resolved relative to the
/// manifest's directory. A vocab.txt next to the manifest, if present, fixes
/// the vocabulary size.
Dataset load_dataset(const std::filesystem::path& manifest);

std::vector<std::string> load_vocabulary(const std::filesystem::path& path);

/// Reads `rows * cols` little-endian float32 values.
FloatMatrix read_feature_file(const std::filesystem::path& path, int rows, int cols);
void write_feature_file(const std::filesystem::path& path, const FloatMatrix& m);

struct BatchOptions {
  double mask_ratio = 1.0 / 3.0;
  std::uint64_t mask_seed = 0;
};

/// Padded mini-batch. Every per-element vector has `size()` entries; every
/// padded position is false in its mask and zero in its data.
struct Batch {
  std::vector<FloatMatrix> frames;  // L_v^max x D_v
  std::vector<std::vector<bool>> frame_mask;
  std::vector<FloatMatrix> words;  // L_w^max x D_q, current query
  std::vector<std::vector<bool>> word_mask;
  std::vector<std::vector<int>> tokens;  // L_w^max, 0 at padding
  std::vector<std::vector<int>> mlm_positions;
  std::vector<std::vector<FloatMatrix>> sentences;  // K^max entries of L_s^max x D_q
  std::vector<std::vector<bool>> sentence_mask;
  std::vector<std::vector<std::vector<bool>>> sentence_word_mask;
  std::vector<int> current;
  std::vector<std::vector<TemporalSpan>> gt_seconds;
  std::vector<std::vector<CenterWidthSpan>> gt_normalized;
  std::vector<FrameIndexSpan> gt_frames;
  std::vector<double> duration;
  std::vector<std::string> video_ids;
  std::vector<std::string> qids;
  int max_frames = 0;
  int max_words = 0;
  int max_sentences = 0;
  int max_sentence_words = 0;

  int size() const { return static_cast<int>(frames.size()); }
  int valid_frames(int b) const;
  int valid_words(int b) const;
};

Batch make_batch(const std::vector<Sample>& samples, const BatchOptions& options = {});

/// Picks ceil(ratio * length) distinct positions uniformly, sorted ascending.
std::vector<int> mask_positions(int length, double ratio, std::uint64_t seed);

struct SynthConfig {
  int num_videos = 10;
  int num_val_videos = 0;
  int frames_per_video = 24;
  int segments_per_video = 3;
  int queries_per_video = 3;
  int concept_vocab = 50;
  int concepts_per_segment = 4;
  int video_dim = 64;
  int text_dim = 64;
  double noise = 0.1;
  double withheld_fraction = 0.25;
  double min_duration = 20.0;
  double max_duration = 40.0;
  int min_segment_frames = 3;

  /// Throws std::invalid_argument on an inconsistent configuration.
  void validate() const;
};

struct SynthSummary {
  int train_queries = 0;
  int val_queries = 0;
  std::filesystem::path train_manifest;
  std::filesystem::path val_manifest;  // empty when no validation split
};

/// Writes a dataset whose videos are sequences of concept-labeled segments.
/// Frames are sums of fixed concept vectors plus Gaussian noise; each query
/// names a subset of its segment's concepts. Deterministic in `seed`.
SynthSummary synth_generate(const SynthConfig& config, std::uint64_t seed, const std::filesystem::path& out_dir);

}  // namespace mesm::data
