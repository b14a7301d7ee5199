#pragma once

// Span decoder over learnable (center, width) anchors and the moment
// retrieval loss.
//
// Anchors live in inverse-sigmoid space. Each layer attends from the span
// queries to the encoder memory, predicts an additive anchor update and a
// foreground logit. Every layer's output is kept for deep supervision.

#include <string>
#include <vector>

#include "mesm/layers.hpp"
#include "mesm/matching.hpp"
#include "mesm/span.hpp"

namespace mesm {

template <typename T>
struct DecoderLayerOutput {
  ad::Var<T> spans;   // N_span x 2, (center, width) in (0, 1)
  ad::Var<T> logits;  // N_span x 1 foreground logits
};

template <typename T>
struct DecoderOutput {
  std::vector<DecoderLayerOutput<T>> layers;
  const DecoderLayerOutput<T>& final_layer() const { return layers.back(); }
};

template <typename T>
struct DecoderLayer {
  nn::MultiHeadAttention<T> self_attn;
  nn::MultiHeadAttention<T> cross_attn;
  nn::LayerNorm<T> norm1;
  nn::LayerNorm<T> norm2;
  nn::LayerNorm<T> norm3;
  nn::LayerNorm<T> out_norm;
  nn::FeedForward<T> ffn;
  nn::FeedForward<T> span_head;  // D -> D -> 2, output layer zero-initialized
  nn::Linear<T> class_head;      // D -> 1

  DecoderLayer() = default;
  DecoderLayer(nn::ParamStore<T>& store, const std::string& name, ad::Index dim, ad::Index heads, ad::Index hidden);
};

template <typename T>
class SpanDecoder {
 public:
  SpanDecoder() = default;
  SpanDecoder(nn::ParamStore<T>& store, const std::string& name, ad::Index dim, ad::Index heads, ad::Index hidden,
              int layers, int num_spans);

  DecoderOutput<T> operator()(const ad::Var<T>& memory, const std::vector<bool>* memory_mask,
                              const nn::Context<T>& ctx) const;

  const ad::Var<T>& anchors() const { return anchors_; }
  const std::vector<DecoderLayer<T>>& layers() const { return layers_; }
  int num_spans() const { return static_cast<int>(anchors_.rows()); }

 private:
  ad::Var<T> anchors_;        // N_span x 2, logit space
  ad::Var<T> query_content_;  // N_span x D
  nn::FeedForward<T> anchor_pos_;
  std::vector<DecoderLayer<T>> layers_;
  ad::Index dim_ = 0;
};

/// Start/end in [0, 1] with width at least kMinNormalizedWidth.
TemporalSpan span_from_center_width(double center, double width);

struct RankedSpan {
  TemporalSpan span;  // normalized
  double score = 0.0;
  int index = 0;
};

/// Final-layer spans ranked by foreground probability, ties by span index.
template <typename T>
std::vector<RankedSpan> rank_predictions(const DecoderLayerOutput<T>& out);

struct VmrWeights {
  double l1 = 10.0;
  double iou = 1.0;
  double ce = 4.0;
  double w_bg = 0.1;
};

template <typename T>
struct VmrTerms {
  ad::Var<T> l1;    // unweighted
  ad::Var<T> giou;  // unweighted, mean of 1 - gIoU
  ad::Var<T> ce;    // unweighted, background terms carry w_bg
  ad::Var<T> total;
};

/// Loss of one decoder layer under a fixed assignment (prediction index per
/// ground truth). Each term is normalized by the number of ground truths.
template <typename T>
VmrTerms<T> loss_vmr(const DecoderLayerOutput<T>& out, const std::vector<CenterWidthSpan>& truths,
                     const std::vector<int>& assignment, const VmrWeights& weights);

/// Matches every supervised layer independently and sums their losses.
/// Only the final layer is used without deep supervision.
template <typename T>
VmrTerms<T> loss_vmr_layers(const DecoderOutput<T>& out, const std::vector<CenterWidthSpan>& truths,
                            const VmrWeights& weights, bool deep_supervision);

/// Matching cost matrix for a decoder layer's current values.
template <typename T>
Eigen::MatrixXd layer_matching_cost(const DecoderLayerOutput<T>& out, const std::vector<CenterWidthSpan>& truths,
                                    const VmrWeights& weights);

}  // namespace mesm
