#pragma once

// Frame-word level enhancement.
//
// One stack of residual cross-attention blocks is used twice per step:
// frames attend to words to produce the enhanced video, and masked words
// attend to frames to reconstruct the vocabulary ids. Both passes read the
// same parameter storage, so the reconstruction objective shapes the
// video-enhancement pass.

#include <string>
#include <vector>

#include "mesm/config.hpp"
#include "mesm/layers.hpp"

namespace mesm {

template <typename T>
class FrameWordMesm {
 public:
  FrameWordMesm() = default;
  /// `with_mlm` creates the mask embedding and the vocabulary head.
  FrameWordMesm(nn::ParamStore<T>& store, const std::string& name, ad::Index dim, ad::Index heads,
                ad::Index hidden, int layers, int vocab_size, bool with_mlm);

  /// Frames as query, words as key/value. Shape of `frames` is preserved.
  ad::Var<T> enhance_video(const ad::Var<T>& frames, const ad::Var<T>& words, const std::vector<bool>* word_mask,
                           const nn::Context<T>& ctx) const;

  /// Masked words as query, frames as key/value, through the same blocks.
  /// Returns vocabulary logits, L_w x N_vocab.
  ad::Var<T> reconstruct_logits(const ad::Var<T>& masked_words, const ad::Var<T>& frames,
                                const std::vector<bool>* frame_mask, const nn::Context<T>& ctx) const;

  /// Row-stochastic P = softmax(reconstruct_logits(...)).
  ad::Var<T> reconstruct_words(const ad::Var<T>& masked_words, const ad::Var<T>& frames,
                               const std::vector<bool>* frame_mask, const nn::Context<T>& ctx) const;

  /// Replaces the listed rows by the learnable mask embedding.
  ad::Var<T> mask_words(const ad::Var<T>& words, const std::vector<int>& positions) const;

  const std::vector<nn::CrossBlock<T>>& blocks() const { return blocks_; }
  const ad::Var<T>& mask_embedding() const { return mask_embedding_; }
  bool has_mlm() const { return mask_embedding_.defined(); }
  int layers() const { return static_cast<int>(blocks_.size()); }

 private:
  std::vector<nn::CrossBlock<T>> blocks_;
  nn::Linear<T> mlm_head_;
  ad::Var<T> mask_embedding_;
};

/// Mean negative log-likelihood of `tokens` under `log_probs` (L_w x N_vocab)
/// over the supervised rows: every row for kAllWords, `masked` for
/// kMaskedOnly. Throws when the supervised set is empty.
template <typename T>
ad::Var<T> loss_fw(const ad::Var<T>& log_probs, const std::vector<int>& tokens, const std::vector<int>& masked,
                   MlmScope scope);

}  // namespace mesm
