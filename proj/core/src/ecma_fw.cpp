#include "mesm/ecma_fw.hpp"

#include <stdexcept>

namespace mesm {

template <typename T>
FrameWordMesm<T>::FrameWordMesm(nn::ParamStore<T>& store, const std::string& name, ad::Index dim, ad::Index heads,
                                ad::Index hidden, int layers, int vocab_size, bool with_mlm) {
  for (int l = 0; l < layers; ++l) blocks_.emplace_back(store, name + ".block" + std::to_string(l), dim, heads, hidden);
  if (with_mlm) {
    if (vocab_size < 1) throw std::invalid_argument("frame-word MLM needs a vocabulary");
    mlm_head_ = nn::Linear<T>(store, name + ".mlm_head", dim, vocab_size);
    mask_embedding_ = store.normal(name + ".mask_embedding", 1, dim, 0.02);
  }
}

template <typename T>
ad::Var<T> FrameWordMesm<T>::enhance_video(const ad::Var<T>& frames, const ad::Var<T>& words,
                                           const std::vector<bool>* word_mask, const nn::Context<T>& ctx) const {
  ad::Var<T> x = frames;
  for (const auto& block : blocks_) x = block(x, words, word_mask, ctx);
  return x;
}

template <typename T>
ad::Var<T> FrameWordMesm<T>::reconstruct_logits(const ad::Var<T>& masked_words, const ad::Var<T>& frames,
                                                const std::vector<bool>* frame_mask, const nn::Context<T>& ctx) const {
  if (!has_mlm()) throw std::logic_error("reconstruction requested but the MLM branch is disabled");
  ad::Var<T> x = masked_words;
  for (const auto& block : blocks_) x = block(x, frames, frame_mask, ctx);
  return mlm_head_(x);
}

template <typename T>
ad::Var<T> FrameWordMesm<T>::reconstruct_words(const ad::Var<T>& masked_words, const ad::Var<T>& frames,
                                               const std::vector<bool>* frame_mask, const nn::Context<T>& ctx) const {
  return ad::softmax_rows(reconstruct_logits(masked_words, frames, frame_mask, ctx));
}

template <typename T>
ad::Var<T> FrameWordMesm<T>::mask_words(const ad::Var<T>& words, const std::vector<int>& positions) const {
  if (!has_mlm()) throw std::logic_error("mask embedding requested but the MLM branch is disabled");
  std::vector<ad::Index> rows(positions.begin(), positions.end());
  return ad::replace_rows(words, rows, mask_embedding_);
}

template <typename T>
ad::Var<T> loss_fw(const ad::Var<T>& log_probs, const std::vector<int>& tokens, const std::vector<int>& masked,
                   MlmScope scope) {
  std::vector<ad::Index> rows;
  if (scope == MlmScope::kAllWords) {
    for (ad::Index r = 0; r < log_probs.rows(); ++r) rows.push_back(r);
  } else {
    rows.assign(masked.begin(), masked.end());
  }
  if (rows.empty()) throw std::invalid_argument("loss_fw: empty supervision set");
  std::vector<ad::Index> targets;
  for (ad::Index r : rows) {
    if (r < 0 || r >= static_cast<ad::Index>(tokens.size())) throw std::out_of_range("loss_fw: row without a label");
    const int t = tokens[static_cast<std::size_t>(r)];
    if (t < 0 || t >= log_probs.cols()) throw std::out_of_range("loss_fw: token id outside the vocabulary");
    targets.push_back(t);
  }
  ad::Var<T> picked = ad::pick(ad::gather_rows(log_probs, rows), targets);
  return ad::scale(ad::mean_all(picked), T(-1));
}

template class FrameWordMesm<float>;
template class FrameWordMesm<double>;
template ad::Var<float> loss_fw<float>(const ad::Var<float>&, const std::vector<int>&, const std::vector<int>&, MlmScope);
template ad::Var<double> loss_fw<double>(const ad::Var<double>&, const std::vector<int>&, const std::vector<int>&,
                                         MlmScope);

}  // namespace mesm
