#pragma once

// Feature projections into the common space, the modality aligner, the
// self-attention encoder and the per-frame saliency supervision.

#include <string>
#include <vector>

#include "mesm/layers.hpp"
#include "mesm/span.hpp"

namespace mesm {

/// LayerNorm -> Linear -> ReLU -> Dropout -> Linear.
template <typename T>
struct ProjectionMlp {
  nn::LayerNorm<T> norm;
  nn::FeedForward<T> mlp;

  ProjectionMlp() = default;
  ProjectionMlp(nn::ParamStore<T>& store, const std::string& name, ad::Index in, ad::Index out);
  ad::Var<T> operator()(const ad::Var<T>& x, const nn::Context<T>& ctx) const;
  ad::Index in_features() const { return mlp.fc1.in_features(); }
};

template <typename T>
struct FeatureProjection {
  ProjectionMlp<T> video;
  ProjectionMlp<T> text;

  FeatureProjection() = default;
  FeatureProjection(nn::ParamStore<T>& store, const std::string& name, ad::Index video_dim, ad::Index text_dim,
                    ad::Index dim);

  /// Throws std::invalid_argument when input widths differ from the
  /// configured D_v / D_q.
  std::pair<ad::Var<T>, ad::Var<T>> operator()(const ad::Var<T>& raw_video, const ad::Var<T>& raw_words,
                                               const nn::Context<T>& ctx) const;
};

/// Stack of residual cross-attention blocks, video as query and the
/// enhanced query tokens as key/value.
template <typename T>
class ModalityAligner {
 public:
  ModalityAligner() = default;
  ModalityAligner(nn::ParamStore<T>& store, const std::string& name, ad::Index dim, ad::Index heads,
                  ad::Index hidden, int layers);
  ad::Var<T> operator()(const ad::Var<T>& video, const ad::Var<T>& words, const std::vector<bool>* word_mask,
                        const nn::Context<T>& ctx) const;
  const std::vector<nn::CrossBlock<T>>& blocks() const { return blocks_; }

 private:
  std::vector<nn::CrossBlock<T>> blocks_;
};

template <typename T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(nn::ParamStore<T>& store, const std::string& name, ad::Index dim, ad::Index heads, ad::Index hidden,
          int layers);
  ad::Var<T> operator()(const ad::Var<T>& x, const std::vector<bool>* mask, const nn::Context<T>& ctx) const;
  const std::vector<nn::SelfBlock<T>>& layers() const { return layers_; }

 private:
  std::vector<nn::SelfBlock<T>> layers_;
  nn::LayerNorm<T> final_norm_;
};

/// Two-layer MLP + sigmoid per frame: (L_v x D) -> (L_v x 1) in (0, 1).
template <typename T>
struct SaliencyHead {
  nn::FeedForward<T> mlp;

  SaliencyHead() = default;
  SaliencyHead(nn::ParamStore<T>& store, const std::string& name, ad::Index dim);
  ad::Var<T> logits(const ad::Var<T>& encoded, const nn::Context<T>& ctx) const;
  ad::Var<T> operator()(const ad::Var<T>& encoded, const nn::Context<T>& ctx) const {
    return ad::sigmoid(logits(encoded, ctx));
  }
};

/// y_j = 1 for frames inside any of `spans`, else 0; length `num_frames`.
std::vector<double> saliency_labels(const std::vector<FrameIndexSpan>& spans, int num_frames);

/// Mean binary cross-entropy over valid frames with probabilities clamped
/// to [1e-7, 1 - 1e-7]. Throws when no frame is valid.
template <typename T>
ad::Var<T> loss_enc(const ad::Var<T>& scores, const std::vector<double>& labels,
                    const std::vector<bool>* frame_mask = nullptr);

}  // namespace mesm
