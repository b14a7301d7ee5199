#include "mesm/ecma_ss.hpp"

#include <algorithm>
#include <stdexcept>

namespace mesm {

template <typename T>
ad::Var<T> pool_sentences(const std::vector<ad::Var<T>>& sentences, const std::vector<std::vector<bool>>* word_masks) {
  if (sentences.empty()) throw std::invalid_argument("pool_sentences: empty sentence set");
  std::vector<ad::Var<T>> rows;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    std::vector<ad::Index> valid;
    for (ad::Index r = 0; r < sentences[i].rows(); ++r) {
      if (word_masks == nullptr || (*word_masks)[i][static_cast<std::size_t>(r)]) valid.push_back(r);
    }
    if (valid.empty()) throw std::invalid_argument("pool_sentences: sentence " + std::to_string(i) + " has no words");
    const bool all = static_cast<ad::Index>(valid.size()) == sentences[i].rows();
    rows.push_back(ad::mean_rows(all ? sentences[i] : ad::gather_rows(sentences[i], valid)));
  }
  return ad::concat_rows(rows);
}

template <typename T>
SegmentSentenceMesm<T>::SegmentSentenceMesm(nn::ParamStore<T>& store, const std::string& name, ad::Index dim,
                                            ad::Index heads, ad::Index hidden, int layers)
    : mask_token_(store.normal(name + ".mask_token", 1, dim, 0.02)) {
  for (int l = 0; l < layers; ++l) blocks_.emplace_back(store, name + ".block" + std::to_string(l), dim, heads, hidden);
}

template <typename T>
ad::Var<T> SegmentSentenceMesm<T>::generate_complement(const ad::Var<T>& pooled, int current,
                                                       const ad::Var<T>& frames, const std::vector<bool>* frame_mask,
                                                       const nn::Context<T>& ctx, bool context_grad) const {
  if (pooled.rows() < 1) throw std::invalid_argument("generate_complement: empty sentence set");
  if (current < 0 || current >= pooled.rows()) {
    throw std::out_of_range("generate_complement: current sentence " + std::to_string(current) + " outside [0, " +
                            std::to_string(pooled.rows()) + ")");
  }
  ad::Var<T> set = context_grad ? pooled : pooled.detach();
  ad::Var<T> x = ad::replace_rows(set, {static_cast<ad::Index>(current)}, mask_token_);
  for (const auto& block : blocks_) x = block(x, frames, frame_mask, ctx);
  return ad::slice_rows(x, current, 1);
}

template <typename T>
ad::Var<T> concat_complement(const ad::Var<T>& complement, const ad::Var<T>& words) {
  if (complement.rows() != 1 || complement.cols() != words.cols())
    throw std::invalid_argument("concat_complement: complement must be 1 x D");
  return ad::concat_rows<T>({complement, words});
}

std::vector<bool> extend_mask(const std::vector<bool>& word_mask) {
  std::vector<bool> out;
  out.reserve(word_mask.size() + 1);
  out.push_back(true);
  out.insert(out.end(), word_mask.begin(), word_mask.end());
  return out;
}

template <typename T>
ad::Var<T> pool_segment(const ad::Var<T>& frames, const FrameIndexSpan& span) {
  if (span.first < 0 || span.last < span.first || span.last >= frames.rows())
    throw std::out_of_range("pool_segment: frame span outside the video");
  return ad::mean_rows(ad::slice_rows(frames, span.first, span.frame_count()));
}

bool PositiveSet::contains(int i, int j) const {
  const auto& m = members[static_cast<std::size_t>(i)];
  return std::binary_search(m.begin(), m.end(), j);
}

Eigen::Matrix<char, Eigen::Dynamic, Eigen::Dynamic> PositiveSet::mask() const {
  const int n = size();
  Eigen::Matrix<char, Eigen::Dynamic, Eigen::Dynamic> m = Eigen::Matrix<char, Eigen::Dynamic, Eigen::Dynamic>::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j : members[static_cast<std::size_t>(i)]) m(i, j) = 1;
  return m;
}

PositiveSet build_positive_set(const std::vector<TemporalSpan>& gt, const std::vector<std::string>& video_ids,
                               double gamma, bool cross_video) {
  if (gt.size() != video_ids.size()) throw std::invalid_argument("build_positive_set: one video id per span");
  PositiveSet ps;
  const int n = static_cast<int>(gt.size());
  ps.members.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const auto ui = static_cast<std::size_t>(i);
      const auto uj = static_cast<std::size_t>(j);
      const bool comparable = cross_video || video_ids[ui] == video_ids[uj];
      if (i == j || (comparable && iou_1d(gt[ui], gt[uj]) > gamma)) ps.members[ui].push_back(j);
    }
  }
  return ps;
}

template <typename T>
ad::Var<T> contrastive_similarities(const std::vector<ad::Var<T>>& enhanced_queries,
                                    const std::vector<ad::Var<T>>& segments, const ContrastiveOptions& options) {
  if (enhanced_queries.empty()) throw std::invalid_argument("loss_ss: empty batch");
  if (enhanced_queries.size() != segments.size()) throw std::invalid_argument("loss_ss: one segment per query");
  if (!(options.tau > 0.0)) throw std::invalid_argument("loss_ss: tau must be > 0");
  std::vector<ad::Var<T>> q_rows;
  for (const auto& q : enhanced_queries) {
    ad::Var<T> tokens = options.normalize ? ad::normalize_rows(q) : q;
    ad::Var<T> agg = ad::mean_rows(tokens);
    if (!options.mean_over_tokens) agg = ad::scale(agg, static_cast<T>(q.rows()));
    q_rows.push_back(agg);
  }
  ad::Var<T> qs = ad::concat_rows(q_rows);
  ad::Var<T> ss = ad::concat_rows(segments);
  if (options.normalize) ss = ad::normalize_rows(ss);
  return ad::scale(ad::matmul_nt(qs, ss), static_cast<T>(1.0 / options.tau));
}

template <typename T>
ad::Var<T> loss_ss_from_similarities(const ad::Var<T>& sims, const PositiveSet& positives) {
  const ad::Index n = sims.rows();
  if (n < 1 || sims.cols() != n || positives.size() != n) throw std::invalid_argument("loss_ss: shape mismatch");
  using Mask = Eigen::Matrix<char, Eigen::Dynamic, Eigen::Dynamic>;
  const Mask pos = positives.mask();
  const Mask all = Mask::Ones(n, n);
  ad::Var<T> diff = ad::sub(ad::logsumexp_rows(sims, all), ad::logsumexp_rows(sims, pos));
  return ad::mean_all(diff);
}

template <typename T>
ad::Var<T> loss_ss(const std::vector<ad::Var<T>>& enhanced_queries, const std::vector<ad::Var<T>>& segments,
                   const PositiveSet& positives, const ContrastiveOptions& options) {
  return loss_ss_from_similarities(contrastive_similarities(enhanced_queries, segments, options), positives);
}

#define MESM_INSTANTIATE(T)                                                                                          \
  template ad::Var<T> pool_sentences<T>(const std::vector<ad::Var<T>>&, const std::vector<std::vector<bool>>*);      \
  template class SegmentSentenceMesm<T>;                                                                             \
  template ad::Var<T> concat_complement<T>(const ad::Var<T>&, const ad::Var<T>&);                                    \
  template ad::Var<T> pool_segment<T>(const ad::Var<T>&, const FrameIndexSpan&);                                     \
  template ad::Var<T> contrastive_similarities<T>(const std::vector<ad::Var<T>>&, const std::vector<ad::Var<T>>&,    \
                                                  const ContrastiveOptions&);                                        \
  template ad::Var<T> loss_ss_from_similarities<T>(const ad::Var<T>&, const PositiveSet&);                           \
  template ad::Var<T> loss_ss<T>(const std::vector<ad::Var<T>>&, const std::vector<ad::Var<T>>&, const PositiveSet&, \
                                 const ContrastiveOptions&);

MESM_INSTANTIATE(float)
MESM_INSTANTIATE(double)

#undef MESM_INSTANTIATE

}  // namespace mesm
