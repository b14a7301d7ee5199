#pragma once

// The full network: projections, frame-word and segment-sentence
// enhancement, modality aligner, encoder with saliency head, span decoder,
// and the weighted objective.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mesm/backbone.hpp"
#include "mesm/config.hpp"
#include "mesm/data.hpp"
#include "mesm/decoder.hpp"
#include "mesm/ecma_fw.hpp"
#include "mesm/ecma_ss.hpp"

namespace mesm {

/// Raised when a loss component is NaN or infinite.
class NonFiniteLoss : public std::runtime_error {
 public:
  explicit NonFiniteLoss(std::string component)
      : std::runtime_error("non-finite loss component: " + component), component_(std::move(component)) {}
  const std::string& component() const { return component_; }

 private:
  std::string component_;
};

template <typename T>
struct LossComponents {
  ad::Var<T> l_fw;
  ad::Var<T> l_ss;
  ad::Var<T> l_enc;
  ad::Var<T> l_vmr;
};

struct AuxWeights {
  double fw = 1.0;
  double ss = 1.0;
  double enc = 1.0;
};

/// lambda_fw * l_fw + lambda_ss * l_ss + lambda_enc * l_enc + l_vmr.
/// Throws NonFiniteLoss naming the first non-finite component.
template <typename T>
ad::Var<T> total_loss(const LossComponents<T>& c, const AuxWeights& w);

struct ModelDims {
  int video_dim = 0;
  int text_dim = 0;
  int vocab_size = 0;
};

/// Per-element tensors kept for the subspace probe.
template <typename T>
struct SampleTrace {
  ad::Matrix<T> words;           // projected query words
  ad::Matrix<T> enhanced_query;  // with the complement token when enabled
  ad::Matrix<T> frames;          // projected frames
  ad::Matrix<T> enhanced_frames;
  FrameIndexSpan gt;
};

struct ForwardOptions {
  bool compute_losses = true;
  bool keep_traces = false;
};

template <typename T>
struct ForwardResult {
  LossComponents<T> losses;  // batch means; zero scalars for disabled parts
  ad::Var<T> total;
  std::vector<DecoderOutput<T>> decoded;
  std::vector<SampleTrace<T>> traces;
};

template <typename T>
class MesmModel {
 public:
  MesmModel(const RunConfig& config, const ModelDims& dims, std::uint64_t init_seed);

  /// Only the valid prefix of every padded row block is read.
  ForwardResult<T> forward(const data::Batch& batch, const nn::Context<T>& ctx,
                           const ForwardOptions& options = {}) const;

  /// Ranked normalized spans for element b of a forward result.
  std::vector<RankedSpan> predictions(const ForwardResult<T>& result, int b) const;

  nn::ParamStore<T>& params() { return store_; }
  const nn::ParamStore<T>& params() const { return store_; }
  const RunConfig& config() const { return config_; }
  const ModelDims& dims() const { return dims_; }

  const FeatureProjection<T>& projection() const { return projection_; }
  const FrameWordMesm<T>& frame_word() const { return fw_; }
  const SegmentSentenceMesm<T>& segment_sentence() const { return ss_; }
  const ModalityAligner<T>& aligner() const { return aligner_; }
  const Encoder<T>& encoder() const { return encoder_; }
  const SaliencyHead<T>& saliency() const { return saliency_; }
  const SpanDecoder<T>& decoder() const { return decoder_; }

 private:
  RunConfig config_;
  ModelDims dims_;
  nn::ParamStore<T> store_;
  FeatureProjection<T> projection_;
  FrameWordMesm<T> fw_;
  SegmentSentenceMesm<T> ss_;
  ModalityAligner<T> aligner_;
  Encoder<T> encoder_;
  SaliencyHead<T> saliency_;
  SpanDecoder<T> decoder_;
};

}  // namespace mesm
