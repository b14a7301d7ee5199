#pragma once

// Every hyperparameter of a run. Serialized as flat `key = value` text,
// one field per line, in declaration order.

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace mesm {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class MlmScope { kAllWords, kMaskedOnly };

struct RunConfig {
  // Architecture. Hidden width 256 and the layer counts below are the
  // published settings; heads, FFN width, span count and dropout are ours.
  int hidden_dim = 256;
  int heads = 8;
  int ffn_dim = 1024;
  double dropout = 0.1;
  int fw_layers = 2;
  int ss_layers = 4;
  int ma_layers = 2;
  int enc_layers = 2;
  int dec_layers = 2;
  int num_spans = 10;
  bool use_fw = true;
  bool use_ss = true;
  bool use_mlm = true;
  bool positional_encoding = true;

  // Frame-word enhancement.
  double mask_ratio = 1.0 / 3.0;
  MlmScope mlm_scope = MlmScope::kAllWords;

  // Segment-sentence enhancement.
  double gamma = 0.9;
  double tau = 0.07;
  bool normalize_similarity = true;
  bool mean_over_tokens = true;
  bool cross_video_positives = false;
  bool ss_context_grad = true;

  // Loss weights.
  double lambda_l1 = 10.0;
  double lambda_iou = 1.0;
  double lambda_ce = 4.0;
  double w_bg = 0.1;
  double lambda_fw = 1.0;
  double lambda_ss = 1.0;
  double lambda_enc = 1.0;
  bool deep_supervision = true;

  // Optimization.
  double lr = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 0.1;
  int batch_size = 8;
  int epochs = 30;
  int max_steps = 0;  // 0: run all epochs
  int eval_every = 1;  // epochs between validation passes
  std::uint64_t seed = 2024;

  /// Throws ConfigError when a field is out of range.
  void validate() const;

  /// Applies one `key=value` override.
  void set(const std::string& key, const std::string& value);

  std::string serialize() const;
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// FNV-1a 64 of serialize(), as 16 hex digits.
  std::string hash() const;

  std::vector<std::string> keys() const;
};

/// Returns a copy of `base` with the named modules or losses switched off or
/// resized. Accepted switches: fw_off, ss_off, enc_loss_off, mlm_off,
/// ss_layers=N, fw_layers=N, ma_layers=N.
RunConfig ablate(const RunConfig& base, const std::vector<std::string>& switches);

std::string fnv1a_hex(const std::string& bytes);

}  // namespace mesm
