#include "mesm/backbone.hpp"

#include <stdexcept>

namespace mesm {

template <typename T>
ProjectionMlp<T>::ProjectionMlp(nn::ParamStore<T>& store, const std::string& name, ad::Index in, ad::Index out)
    : norm(store, name + ".norm", in), mlp(store, name + ".mlp", in, out, out) {}

template <typename T>
ad::Var<T> ProjectionMlp<T>::operator()(const ad::Var<T>& x, const nn::Context<T>& ctx) const {
  return mlp(ctx.drop(norm(x)), ctx);
}

template <typename T>
FeatureProjection<T>::FeatureProjection(nn::ParamStore<T>& store, const std::string& name, ad::Index video_dim,
                                        ad::Index text_dim, ad::Index dim)
    : video(store, name + ".video", video_dim, dim), text(store, name + ".text", text_dim, dim) {}

template <typename T>
std::pair<ad::Var<T>, ad::Var<T>> FeatureProjection<T>::operator()(const ad::Var<T>& raw_video,
                                                                   const ad::Var<T>& raw_words,
                                                                   const nn::Context<T>& ctx) const {
  if (raw_video.cols() != video.in_features())
    throw std::invalid_argument("video features have width " + std::to_string(raw_video.cols()) + ", expected " +
                                std::to_string(video.in_features()));
  if (raw_words.cols() != text.in_features())
    throw std::invalid_argument("word features have width " + std::to_string(raw_words.cols()) + ", expected " +
                                std::to_string(text.in_features()));
  return {video(raw_video, ctx), text(raw_words, ctx)};
}

template <typename T>
ModalityAligner<T>::ModalityAligner(nn::ParamStore<T>& store, const std::string& name, ad::Index dim,
                                    ad::Index heads, ad::Index hidden, int layers) {
  for (int l = 0; l < layers; ++l) blocks_.emplace_back(store, name + ".block" + std::to_string(l), dim, heads, hidden);
}

template <typename T>
ad::Var<T> ModalityAligner<T>::operator()(const ad::Var<T>& video, const ad::Var<T>& words,
                                          const std::vector<bool>* word_mask, const nn::Context<T>& ctx) const {
  ad::Var<T> x = video;
  for (const auto& block : blocks_) x = block(x, words, word_mask, ctx);
  return x;
}

template <typename T>
Encoder<T>::Encoder(nn::ParamStore<T>& store, const std::string& name, ad::Index dim, ad::Index heads,
                    ad::Index hidden, int layers) {
  for (int l = 0; l < layers; ++l) layers_.emplace_back(store, name + ".layer" + std::to_string(l), dim, heads, hidden);
  final_norm_ = nn::LayerNorm<T>(store, name + ".final_norm", dim);
}

template <typename T>
ad::Var<T> Encoder<T>::operator()(const ad::Var<T>& x, const std::vector<bool>* mask, const nn::Context<T>& ctx) const {
  ad::Var<T> h = x;
  for (const auto& layer : layers_) h = layer(h, mask, ctx);
  return final_norm_(h);
}

template <typename T>
SaliencyHead<T>::SaliencyHead(nn::ParamStore<T>& store, const std::string& name, ad::Index dim)
    : mlp(store, name, dim, dim, 1) {}

template <typename T>
ad::Var<T> SaliencyHead<T>::logits(const ad::Var<T>& encoded, const nn::Context<T>& ctx) const {
  return mlp(encoded, ctx);
}

std::vector<double> saliency_labels(const std::vector<FrameIndexSpan>& spans, int num_frames) {
  std::vector<double> y(static_cast<std::size_t>(num_frames), 0.0);
  for (const auto& s : spans)
    for (int j = std::max(0, s.first); j <= std::min(num_frames - 1, s.last); ++j) y[static_cast<std::size_t>(j)] = 1.0;
  return y;
}

template <typename T>
ad::Var<T> loss_enc(const ad::Var<T>& scores, const std::vector<double>& labels, const std::vector<bool>* frame_mask) {
  if (scores.cols() != 1 || static_cast<std::size_t>(scores.rows()) != labels.size())
    throw std::invalid_argument("loss_enc: scores and labels differ in length");
  std::vector<ad::Index> valid;
  for (ad::Index j = 0; j < scores.rows(); ++j)
    if (frame_mask == nullptr || (*frame_mask)[static_cast<std::size_t>(j)]) valid.push_back(j);
  if (valid.empty()) throw std::invalid_argument("loss_enc: no valid frames");

  ad::Var<T> s = static_cast<ad::Index>(valid.size()) == scores.rows() ? scores : ad::gather_rows(scores, valid);
  s = ad::clamp(s, T(1e-7), T(1) - T(1e-7));
  ad::Matrix<T> y(s.rows(), 1);
  for (ad::Index i = 0; i < s.rows(); ++i) y(i, 0) = static_cast<T>(labels[static_cast<std::size_t>(valid[i])]);
  ad::Var<T> yv(y);
  ad::Var<T> one_minus_y(ad::Matrix<T>((1 - y.array()).matrix()));
  ad::Var<T> one_minus_s = ad::add_scalar(ad::scale(s, T(-1)), T(1));
  ad::Var<T> ll = ad::add(ad::mul(yv, ad::log(s)), ad::mul(one_minus_y, ad::log(one_minus_s)));
  return ad::scale(ad::mean_all(ll), T(-1));
}

#define MESM_INSTANTIATE(T)                                                                                 \
  template struct ProjectionMlp<T>;                                                                         \
  template struct FeatureProjection<T>;                                                                     \
  template class ModalityAligner<T>;                                                                        \
  template class Encoder<T>;                                                                                \
  template struct SaliencyHead<T>;                                                                          \
  template ad::Var<T> loss_enc<T>(const ad::Var<T>&, const std::vector<double>&, const std::vector<bool>*);

MESM_INSTANTIATE(float)
MESM_INSTANTIATE(double)

#undef MESM_INSTANTIATE

}  // namespace mesm
