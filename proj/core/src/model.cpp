#include "mesm/model.hpp"

#include <cmath>

namespace mesm {

namespace {

int count_valid(const std::vector<bool>& mask) {
  int n = 0;
  for (bool m : mask) n += m ? 1 : 0;
  return n;
}

template <typename T>
ad::Var<T> prefix_rows(const data::FloatMatrix& m, int rows) {
  return ad::Var<T>(ad::Matrix<T>(m.topRows(rows).template cast<T>()));
}

template <typename T>
ad::Var<T> zero_scalar() {
  return ad::Var<T>::scalar(T(0));
}

template <typename T>
ad::Var<T> mean_of(const std::vector<ad::Var<T>>& terms) {
  ad::Var<T> sum = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) sum = ad::add(sum, terms[i]);
  return ad::scale(sum, T(1) / static_cast<T>(terms.size()));
}

}  // namespace

template <typename T>
ad::Var<T> total_loss(const LossComponents<T>& c, const AuxWeights& w) {
  const std::pair<const char*, const ad::Var<T>*> parts[] = {
      {"l_fw", &c.l_fw}, {"l_ss", &c.l_ss}, {"l_enc", &c.l_enc}, {"l_vmr", &c.l_vmr}};
  for (const auto& [name, v] : parts)
    if (!std::isfinite(static_cast<double>(v->item()))) throw NonFiniteLoss(name);
  return ad::add(ad::add(ad::add(ad::scale(c.l_fw, static_cast<T>(w.fw)), ad::scale(c.l_ss, static_cast<T>(w.ss))),
                         ad::scale(c.l_enc, static_cast<T>(w.enc))),
                 c.l_vmr);
}

template <typename T>
MesmModel<T>::MesmModel(const RunConfig& config, const ModelDims& dims, std::uint64_t init_seed)
    : config_(config), dims_(dims), store_(init_seed) {
  config_.validate();
  if (dims.video_dim < 1 || dims.text_dim < 1) throw std::invalid_argument("feature dims must be positive");
  if (config.use_fw && config.use_mlm && dims.vocab_size < 1)
    throw std::invalid_argument("masked reconstruction needs a vocabulary");
  const ad::Index d = config.hidden_dim;
  const ad::Index h = config.heads;
  const ad::Index f = config.ffn_dim;
  projection_ = FeatureProjection<T>(store_, "proj", dims.video_dim, dims.text_dim, d);
  if (config.use_fw)
    fw_ = FrameWordMesm<T>(store_, "fw", d, h, f, config.fw_layers, dims.vocab_size, config.use_mlm);
  if (config.use_ss) ss_ = SegmentSentenceMesm<T>(store_, "ss", d, h, f, config.ss_layers);
  aligner_ = ModalityAligner<T>(store_, "ma", d, h, f, config.ma_layers);
  encoder_ = Encoder<T>(store_, "enc", d, h, f, config.enc_layers);
  saliency_ = SaliencyHead<T>(store_, "saliency", d);
  decoder_ = SpanDecoder<T>(store_, "dec", d, h, f, config.dec_layers, config.num_spans);
}

template <typename T>
ForwardResult<T> MesmModel<T>::forward(const data::Batch& batch, const nn::Context<T>& ctx,
                                       const ForwardOptions& options) const {
  const int bsz = batch.size();
  if (bsz == 0) throw std::invalid_argument("forward: empty batch");
  const ad::Index d = config_.hidden_dim;
  const bool mlm = config_.use_fw && config_.use_mlm;

  ForwardResult<T> result;
  std::vector<ad::Var<T>> fw_terms, enc_terms, vmr_terms, ss_queries, ss_segments;
  std::vector<TemporalSpan> ss_gt;

  for (int b = 0; b < bsz; ++b) {
    const auto bi = static_cast<std::size_t>(b);
    const int lv = count_valid(batch.frame_mask[bi]);
    const int lw = count_valid(batch.word_mask[bi]);
    if (lv < 1 || lw < 1) throw std::invalid_argument("forward: element " + std::to_string(b) + " is empty");

    auto [fv, fq] = projection_(prefix_rows<T>(batch.frames[bi], lv), prefix_rows<T>(batch.words[bi], lw), ctx);
    ad::Var<T> fv_in = fv;
    ad::Var<T> fq_in = fq;
    if (config_.positional_encoding) {
      fv_in = ad::add(fv, ad::Var<T>(nn::sinusoid_table<T>(lv, d)));
      fq_in = ad::add(fq, ad::Var<T>(nn::sinusoid_table<T>(lw, d)));
    }

    ad::Var<T> fv_enh = fv_in;
    if (config_.use_fw) {
      fv_enh = fw_.enhance_video(fv_in, fq_in, nullptr, ctx);
      if (mlm && options.compute_losses) {
        const auto& positions = batch.mlm_positions[bi];
        const ad::Var<T> logits = fw_.reconstruct_logits(fw_.mask_words(fq_in, positions), fv_in, nullptr, ctx);
        const std::vector<int> tokens(batch.tokens[bi].begin(), batch.tokens[bi].begin() + lw);
        fw_terms.push_back(loss_fw(ad::log_softmax_rows(logits), tokens, positions, config_.mlm_scope));
      }
    }

    ad::Var<T> fq_enh = fq_in;
    if (config_.use_ss) {
      std::vector<ad::Var<T>> sentences;
      for (std::size_t k = 0; k < batch.sentence_mask[bi].size(); ++k) {
        if (!batch.sentence_mask[bi][k]) continue;
        const int ls = count_valid(batch.sentence_word_mask[bi][k]);
        if (ls < 1) throw std::invalid_argument("forward: sentence " + std::to_string(k) + " is empty");
        sentences.push_back(projection_.text(prefix_rows<T>(batch.sentences[bi][k], ls), ctx));
      }
      const ad::Var<T> pooled = pool_sentences(sentences);
      const ad::Var<T> complement =
          ss_.generate_complement(pooled, batch.current[bi], fv_in, nullptr, ctx, config_.ss_context_grad);
      fq_enh = concat_complement(complement, fq_in);
      if (options.compute_losses) {
        ss_queries.push_back(fq_enh);
        ss_segments.push_back(pool_segment(fv, batch.gt_frames[bi]));
        ss_gt.push_back(batch.gt_seconds[bi].front());
      }
    }

    const ad::Var<T> aligned = aligner_(fv_enh, fq_enh, nullptr, ctx);
    const ad::Var<T> encoded = encoder_(aligned, nullptr, ctx);
    DecoderOutput<T> decoded = decoder_(encoded, nullptr, ctx);

    if (options.compute_losses) {
      std::vector<FrameIndexSpan> frame_spans;
      for (const auto& s : batch.gt_seconds[bi]) frame_spans.push_back(to_frame_span(s, batch.duration[bi], lv));
      enc_terms.push_back(loss_enc(saliency_(encoded, ctx), saliency_labels(frame_spans, lv)));
      const VmrWeights vw{config_.lambda_l1, config_.lambda_iou, config_.lambda_ce, config_.w_bg};
      vmr_terms.push_back(loss_vmr_layers(decoded, batch.gt_normalized[bi], vw, config_.deep_supervision).total);
    }
    if (options.keep_traces) {
      result.traces.push_back({fq.value(), fq_enh.value(), fv.value(), fv_enh.value(), batch.gt_frames[bi]});
    }
    result.decoded.push_back(std::move(decoded));
  }

  if (options.compute_losses) {
    result.losses.l_fw = fw_terms.empty() ? zero_scalar<T>() : mean_of(fw_terms);
    if (ss_queries.empty()) {
      result.losses.l_ss = zero_scalar<T>();
    } else {
      const PositiveSet positives =
          build_positive_set(ss_gt, batch.video_ids, config_.gamma, config_.cross_video_positives);
      result.losses.l_ss = loss_ss(ss_queries, ss_segments, positives,
                                   ContrastiveOptions{config_.tau, config_.normalize_similarity,
                                                      config_.mean_over_tokens});
    }
    result.losses.l_enc = mean_of(enc_terms);
    result.losses.l_vmr = mean_of(vmr_terms);
    result.total =
        total_loss(result.losses, AuxWeights{config_.lambda_fw, config_.lambda_ss, config_.lambda_enc});
  }
  return result;
}

template <typename T>
std::vector<RankedSpan> MesmModel<T>::predictions(const ForwardResult<T>& result, int b) const {
  return rank_predictions(result.decoded.at(static_cast<std::size_t>(b)).final_layer());
}

template ad::Var<float> total_loss<float>(const LossComponents<float>&, const AuxWeights&);
template ad::Var<double> total_loss<double>(const LossComponents<double>&, const AuxWeights&);
template class MesmModel<float>;
template class MesmModel<double>;

}  // namespace mesm
