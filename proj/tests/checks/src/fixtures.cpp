#include "mesm_checks/fixtures.hpp"

#include <algorithm>
#include <memory>

namespace mesm::checks {

data::Dataset random_dataset(std::mt19937_64& rng, int videos, const RandomShape& shape, int video_dim, int text_dim,
                             int vocab) {
  std::normal_distribution<float> n01(0.0f, 1.0f);
  auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto fill = [&](data::FloatMatrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n01(rng);
  };

  data::Dataset ds;
  ds.video_dim = video_dim;
  ds.text_dim = text_dim;
  ds.vocab_size = vocab;
  for (int v = 0; v < videos; ++v) {
    auto rec = std::make_shared<data::VideoRecord>();
    rec->video.id = "v" + std::to_string(v);
    rec->video.duration = uniform(10.0, 60.0);
    rec->video.frames.resize(uniform_int(shape.min_frames, shape.max_frames), video_dim);
    fill(rec->video.frames);
    const int k = uniform_int(shape.min_sentences, shape.max_sentences);
    for (int q = 0; q < k; ++q) {
      data::QueryRecord qr;
      qr.qid = rec->video.id + "_q" + std::to_string(q);
      qr.sentence_index = q;
      const int lw = uniform_int(shape.min_words, shape.max_words);
      qr.words.resize(lw, text_dim);
      fill(qr.words);
      for (int w = 0; w < lw; ++w) qr.tokens.push_back(uniform_int(0, vocab - 1));
      double a = uniform(0.0, rec->video.duration);
      double b = uniform(0.0, rec->video.duration);
      if (a > b) std::swap(a, b);
      if (b - a < 0.5) b = std::min(rec->video.duration, a + 0.5);
      qr.spans.push_back(TemporalSpan::seconds(a, b));
      rec->queries.push_back(std::move(qr));
    }
    std::shared_ptr<const data::VideoRecord> shared = rec;
    for (int q = 0; q < k; ++q) {
      data::Sample s;
      s.record = shared;
      s.current = q;
      s.gt_frames = to_frame_span(shared->queries[static_cast<std::size_t>(q)].spans.front(), shared->video.duration,
                                  shared->video.length());
      ds.samples.push_back(s);
    }
  }
  return ds;
}

RunConfig micro_config(int hidden, int heads, int spans) {
  RunConfig c;
  c.hidden_dim = hidden;
  c.heads = heads;
  c.ffn_dim = 2 * hidden;
  c.dropout = 0.0;
  c.fw_layers = 1;
  c.ss_layers = 1;
  c.ma_layers = 1;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.num_spans = spans;
  return c;
}

}  // namespace mesm::checks
