#include "mesm/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mesm {

namespace {

double logit(double p) { return std::log(p / (1.0 - p)); }

template <typename T>
ad::Var<T> column(const ad::Var<T>& x, ad::Index c) {
  return ad::slice_cols(x, c, 1);
}

template <typename T>
ad::Var<T> column_constant(const std::vector<double>& values) {
  ad::Matrix<T> m(static_cast<ad::Index>(values.size()), 1);
  for (std::size_t i = 0; i < values.size(); ++i) m(static_cast<ad::Index>(i), 0) = static_cast<T>(values[i]);
  return ad::Var<T>(std::move(m));
}

}  // namespace

template <typename T>
DecoderLayer<T>::DecoderLayer(nn::ParamStore<T>& store, const std::string& name, ad::Index dim, ad::Index heads,
                              ad::Index hidden)
    : self_attn(store, name + ".self_attn", dim, heads),
      cross_attn(store, name + ".cross_attn", dim, heads),
      norm1(store, name + ".norm1", dim),
      norm2(store, name + ".norm2", dim),
      norm3(store, name + ".norm3", dim),
      out_norm(store, name + ".out_norm", dim),
      ffn(store, name + ".ffn", dim, hidden, dim),
      span_head(store, name + ".span_head", dim, dim, 2),
      class_head(store, name + ".class_head", dim, 1) {
  span_head.fc2.weight.mutable_value().setZero();
  span_head.fc2.bias.mutable_value().setZero();
}

template <typename T>
SpanDecoder<T>::SpanDecoder(nn::ParamStore<T>& store, const std::string& name, ad::Index dim, ad::Index heads,
                            ad::Index hidden, int layers, int num_spans)
    : dim_(dim) {
  if (num_spans < 1) throw std::invalid_argument("decoder needs at least one span");
  if (layers < 1) throw std::invalid_argument("decoder needs at least one layer");
  if (dim % 4 != 0) throw std::invalid_argument("decoder width must be a multiple of 4");
  // Centers spread evenly over the video, widths start at a fifth of it.
  ad::Matrix<T> init(num_spans, 2);
  for (int i = 0; i < num_spans; ++i) {
    init(i, 0) = static_cast<T>(logit((i + 0.5) / num_spans));
    init(i, 1) = static_cast<T>(logit(0.2));
  }
  anchors_ = store.create(name + ".anchors", init);
  query_content_ = store.normal(name + ".query_content", num_spans, dim, 0.02);
  anchor_pos_ = nn::FeedForward<T>(store, name + ".anchor_pos", dim, dim, dim);
  for (int l = 0; l < layers; ++l) layers_.emplace_back(store, name + ".layer" + std::to_string(l), dim, heads, hidden);
}

template <typename T>
DecoderOutput<T> SpanDecoder<T>::operator()(const ad::Var<T>& memory, const std::vector<bool>* memory_mask,
                                            const nn::Context<T>& ctx) const {
  const ad::Var<T> keys = ad::add(memory, ad::Var<T>(nn::sinusoid_table<T>(memory.rows(), dim_)));
  DecoderOutput<T> out;
  ad::Var<T> anchor = anchors_;
  ad::Var<T> t = query_content_;
  for (const auto& layer : layers_) {
    const ad::Var<T> pos = anchor_pos_(ad::sine_embed(ad::sigmoid(anchor), dim_ / 2), ctx);
    ad::Var<T> h = layer.norm1(t);
    ad::Var<T> q = ad::add(h, pos);
    t = ad::add(t, ctx.drop(layer.self_attn(q, q, h, nullptr)));
    h = layer.norm2(t);
    t = ad::add(t, ctx.drop(layer.cross_attn(ad::add(h, pos), keys, memory, memory_mask)));
    t = ad::add(t, ctx.drop(layer.ffn(layer.norm3(t), ctx)));
    const ad::Var<T> o = layer.out_norm(t);
    anchor = ad::add(anchor, layer.span_head(o, ctx));
    out.layers.push_back({ad::sigmoid(anchor), layer.class_head(o)});
  }
  return out;
}

TemporalSpan span_from_center_width(double center, double width) {
  double s = std::clamp(center - width / 2.0, 0.0, 1.0);
  double e = std::clamp(center + width / 2.0, 0.0, 1.0);
  if (e - s < kMinNormalizedWidth) {
    const double mid = std::clamp(center, kMinNormalizedWidth / 2.0, 1.0 - kMinNormalizedWidth / 2.0);
    s = mid - kMinNormalizedWidth / 2.0;
    e = mid + kMinNormalizedWidth / 2.0;
  }
  return TemporalSpan{s, e, SpanUnit::kNormalized};
}

template <typename T>
std::vector<RankedSpan> rank_predictions(const DecoderLayerOutput<T>& out) {
  const ad::Index n = out.spans.rows();
  std::vector<RankedSpan> ranked;
  ranked.reserve(static_cast<std::size_t>(n));
  for (ad::Index i = 0; i < n; ++i) {
    const double x = static_cast<double>(out.logits.value()(i, 0));
    const double p = 1.0 / (1.0 + std::exp(-x));
    if (!std::isfinite(p)) throw std::runtime_error("non-finite foreground probability for span " + std::to_string(i));
    ranked.push_back({span_from_center_width(static_cast<double>(out.spans.value()(i, 0)),
                                             static_cast<double>(out.spans.value()(i, 1))),
                      p, static_cast<int>(i)});
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const RankedSpan& a, const RankedSpan& b) { return a.score > b.score; });
  return ranked;
}

template <typename T>
Eigen::MatrixXd layer_matching_cost(const DecoderLayerOutput<T>& out, const std::vector<CenterWidthSpan>& truths,
                                    const VmrWeights& weights) {
  std::vector<CenterWidthSpan> preds;
  std::vector<double> prob;
  for (ad::Index i = 0; i < out.spans.rows(); ++i) {
    preds.push_back({static_cast<double>(out.spans.value()(i, 0)), static_cast<double>(out.spans.value()(i, 1))});
    prob.push_back(1.0 / (1.0 + std::exp(-static_cast<double>(out.logits.value()(i, 0)))));
  }
  return matching_cost(preds, prob, truths, MatchWeights{weights.l1, weights.iou, weights.ce});
}

template <typename T>
VmrTerms<T> loss_vmr(const DecoderLayerOutput<T>& out, const std::vector<CenterWidthSpan>& truths,
                     const std::vector<int>& assignment, const VmrWeights& weights) {
  const std::size_t g = truths.size();
  if (g == 0) throw std::invalid_argument("loss_vmr: no ground-truth spans");
  if (assignment.size() != g) throw std::invalid_argument("loss_vmr: assignment size differs from ground truths");
  const ad::Index n = out.spans.rows();
  std::vector<ad::Index> idx;
  std::vector<char> matched(static_cast<std::size_t>(n), 0);
  for (int a : assignment) {
    if (a < 0 || a >= n || matched[static_cast<std::size_t>(a)])
      throw std::invalid_argument("loss_vmr: assignment is not an injection");
    matched[static_cast<std::size_t>(a)] = 1;
    idx.push_back(a);
  }
  const T inv_g = T(1) / static_cast<T>(g);

  std::vector<double> gc, gw, gs, ge;
  for (const auto& t : truths) {
    gc.push_back(t.center);
    gw.push_back(t.width);
    gs.push_back(t.center - t.width / 2.0);
    ge.push_back(t.center + t.width / 2.0);
  }
  const ad::Var<T> pred = ad::gather_rows(out.spans, idx);
  const ad::Var<T> pc = column(pred, 0);
  const ad::Var<T> pw = column(pred, 1);

  VmrTerms<T> terms;
  terms.l1 = ad::scale(ad::add(ad::sum_all(ad::abs(ad::sub(pc, column_constant<T>(gc)))),
                               ad::sum_all(ad::abs(ad::sub(pw, column_constant<T>(gw))))),
                       inv_g);

  const ad::Var<T> ps = ad::sub(pc, ad::scale(pw, T(0.5)));
  const ad::Var<T> pe = ad::add(pc, ad::scale(pw, T(0.5)));
  const ad::Var<T> ts = column_constant<T>(gs);
  const ad::Var<T> te = column_constant<T>(ge);
  const ad::Var<T> inter = ad::relu(ad::sub(ad::minimum(pe, te), ad::maximum(ps, ts)));
  const ad::Var<T> uni = ad::sub(ad::add(pw, column_constant<T>(gw)), inter);
  const ad::Var<T> hull = ad::sub(ad::maximum(pe, te), ad::minimum(ps, ts));
  const ad::Var<T> giou = ad::sub(ad::div(inter, uni), ad::div(ad::sub(hull, uni), hull));
  terms.giou = ad::scale(ad::sum_all(ad::add_scalar(ad::scale(giou, T(-1)), T(1))), inv_g);

  ad::Matrix<T> w_pos = ad::Matrix<T>::Zero(n, 1);
  ad::Matrix<T> w_neg = ad::Matrix<T>::Zero(n, 1);
  for (ad::Index i = 0; i < n; ++i) {
    if (matched[static_cast<std::size_t>(i)])
      w_pos(i, 0) = T(1);
    else
      w_neg(i, 0) = static_cast<T>(weights.w_bg);
  }
  // -log sigmoid(x) = softplus(-x), -log(1 - sigmoid(x)) = softplus(x)
  const ad::Var<T> bce = ad::add(ad::mul(ad::Var<T>(w_pos), ad::softplus(ad::scale(out.logits, T(-1)))),
                                 ad::mul(ad::Var<T>(w_neg), ad::softplus(out.logits)));
  terms.ce = ad::scale(ad::sum_all(bce), inv_g);

  terms.total = ad::add(ad::add(ad::scale(terms.l1, static_cast<T>(weights.l1)),
                                ad::scale(terms.giou, static_cast<T>(weights.iou))),
                        ad::scale(terms.ce, static_cast<T>(weights.ce)));
  return terms;
}

template <typename T>
VmrTerms<T> loss_vmr_layers(const DecoderOutput<T>& out, const std::vector<CenterWidthSpan>& truths,
                            const VmrWeights& weights, bool deep_supervision) {
  if (out.layers.empty()) throw std::invalid_argument("loss_vmr_layers: decoder produced no layers");
  const std::size_t first = deep_supervision ? 0 : out.layers.size() - 1;
  VmrTerms<T> sum;
  for (std::size_t l = first; l < out.layers.size(); ++l) {
    const auto assignment = match(layer_matching_cost(out.layers[l], truths, weights));
    VmrTerms<T> t = loss_vmr(out.layers[l], truths, assignment, weights);
    if (l == first) {
      sum = t;
    } else {
      sum.l1 = ad::add(sum.l1, t.l1);
      sum.giou = ad::add(sum.giou, t.giou);
      sum.ce = ad::add(sum.ce, t.ce);
      sum.total = ad::add(sum.total, t.total);
    }
  }
  return sum;
}

#define MESM_INSTANTIATE(T)                                                                                   \
  template struct DecoderLayer<T>;                                                                            \
  template class SpanDecoder<T>;                                                                              \
  template std::vector<RankedSpan> rank_predictions<T>(const DecoderLayerOutput<T>&);                         \
  template Eigen::MatrixXd layer_matching_cost<T>(const DecoderLayerOutput<T>&,                               \
                                                  const std::vector<CenterWidthSpan>&, const VmrWeights&);    \
  template VmrTerms<T> loss_vmr<T>(const DecoderLayerOutput<T>&, const std::vector<CenterWidthSpan>&,         \
                                   const std::vector<int>&, const VmrWeights&);                               \
  template VmrTerms<T> loss_vmr_layers<T>(const DecoderOutput<T>&, const std::vector<CenterWidthSpan>&,       \
                                          const VmrWeights&, bool);

MESM_INSTANTIATE(float)
MESM_INSTANTIATE(double)

#undef MESM_INSTANTIATE

}  // namespace mesm
