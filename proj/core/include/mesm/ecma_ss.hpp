#pragma once

// Segment-sentence level enhancement: the current sentence is replaced by a
// learnable [MASK] token inside its video's sentence set, regenerated from
// the frames and the context sentences, and prepended to the word features
// as a complement token. A segment-pooled, IoU-gated contrastive loss
// supervises the enhanced query.

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mesm/layers.hpp"
#include "mesm/span.hpp"

namespace mesm {

/// Row i = mean of the valid rows of sentence i. Each sentence needs at
/// least one valid row.
template <typename T>
ad::Var<T> pool_sentences(const std::vector<ad::Var<T>>& sentences,
                          const std::vector<std::vector<bool>>* word_masks = nullptr);

template <typename T>
class SegmentSentenceMesm {
 public:
  SegmentSentenceMesm() = default;
  SegmentSentenceMesm(nn::ParamStore<T>& store, const std::string& name, ad::Index dim, ad::Index heads,
                      ad::Index hidden, int layers);

  /// Substitutes row `current` of `pooled` (K x D) with the mask token, runs
  /// the block stack against `frames`, and returns the regenerated row (1 x D).
  /// With `context_grad` false the other sentence rows are detached.
  ad::Var<T> generate_complement(const ad::Var<T>& pooled, int current, const ad::Var<T>& frames,
                                 const std::vector<bool>* frame_mask, const nn::Context<T>& ctx,
                                 bool context_grad = true) const;

  const ad::Var<T>& mask_token() const { return mask_token_; }
  const std::vector<nn::ContextBlock<T>>& blocks() const { return blocks_; }

 private:
  ad::Var<T> mask_token_;
  std::vector<nn::ContextBlock<T>> blocks_;
};

/// [complement; words]: (L_w + 1) x D.
template <typename T>
ad::Var<T> concat_complement(const ad::Var<T>& complement, const ad::Var<T>& words);

/// Word mask of the concatenated query: one always-valid slot in front.
std::vector<bool> extend_mask(const std::vector<bool>& word_mask);

/// Mean of frames first..last inclusive.
template <typename T>
ad::Var<T> pool_segment(const ad::Var<T>& frames, const FrameIndexSpan& span);

struct PositiveSet {
  /// members[i] lists every j with j positive for anchor i, ascending.
  std::vector<std::vector<int>> members;

  int size() const { return static_cast<int>(members.size()); }
  bool contains(int i, int j) const;
  Eigen::Matrix<char, Eigen::Dynamic, Eigen::Dynamic> mask() const;
};

/// j is positive for i iff i == j, or the pair qualifies (same video unless
/// `cross_video`) and iou_1d(gt_i, gt_j) > gamma.
PositiveSet build_positive_set(const std::vector<TemporalSpan>& gt, const std::vector<std::string>& video_ids,
                               double gamma, bool cross_video = false);

struct ContrastiveOptions {
  double tau = 0.07;
  bool normalize = true;
  bool mean_over_tokens = true;
};

/// sim(i, j) = <aggregate_k q_i[k], s_j> / tau, where the aggregate is the
/// mean (or sum) over token rows, after optional per-vector L2 normalization.
template <typename T>
ad::Var<T> contrastive_similarities(const std::vector<ad::Var<T>>& enhanced_queries,
                                    const std::vector<ad::Var<T>>& segments, const ContrastiveOptions& options);

/// Multi-positive InfoNCE over a similarity matrix, stabilized by log-sum-exp.
template <typename T>
ad::Var<T> loss_ss_from_similarities(const ad::Var<T>& sims, const PositiveSet& positives);

template <typename T>
ad::Var<T> loss_ss(const std::vector<ad::Var<T>>& enhanced_queries, const std::vector<ad::Var<T>>& segments,
                   const PositiveSet& positives, const ContrastiveOptions& options);

}  // namespace mesm
