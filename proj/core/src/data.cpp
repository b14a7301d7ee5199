#include "mesm/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

namespace mesm::data {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "feature files are little-endian float32");

FloatMatrix read_feature_file(const fs::path& path, int rows, int cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("missing feature file: " + path.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::int64_t>(in.tellg());
  const std::int64_t expected = static_cast<std::int64_t>(rows) * cols * 4;
  if (bytes != expected) {
    throw LoadError("feature file " + path.string() + " holds " + std::to_string(bytes) + " bytes, manifest declares " +
                    std::to_string(rows) + "x" + std::to_string(cols) + " float32 (" + std::to_string(expected) +
                    " bytes)");
  }
  in.seekg(0);
  FloatMatrix m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data()), expected);
  if (!in) throw LoadError("short read on feature file: " + path.string());
  return m;
}

void write_feature_file(const fs::path& path, const FloatMatrix& m) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write feature file: " + path.string());
  out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * 4));
}

std::vector<std::string> load_vocabulary(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("missing vocabulary file: " + path.string());
  std::vector<std::string> vocab;
  std::string line;
  while (std::getline(in, line)) vocab.push_back(line);
  return vocab;
}

namespace {

void require_finite(const FloatMatrix& m, const std::string& what) {
  if (!m.allFinite()) throw LoadError(what + ": non-finite value in features");
}

template <typename V>
V field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw LoadError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw LoadError(where + ": bad field '" + key + "': " + e.what());
  }
}

}  // namespace

Dataset load_dataset(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw LoadError("missing manifest: " + manifest.string());
  const fs::path root = manifest.parent_path();
  Dataset ds;
  std::vector<std::shared_ptr<VideoRecord>> videos;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw LoadError(manifest.string() + ":" + std::to_string(line_no) + ": invalid JSON: " + e.what());
    }
    auto rec = std::make_shared<VideoRecord>();
    const std::string where = "video at line " + std::to_string(line_no);
    rec->video.id = field<std::string>(j, "video_id", where);
    const std::string vwhere = "video '" + rec->video.id + "'";
    rec->video.duration = field<double>(j, "duration_s", vwhere);
    if (!(rec->video.duration > 0.0)) throw LoadError(vwhere + ": duration_s must be positive");
    const int lv = field<int>(j, "L_v", vwhere);
    const int dv = field<int>(j, "D_v", vwhere);
    if (lv < 1 || dv < 1) throw LoadError(vwhere + ": L_v and D_v must be >= 1");
    if (ds.video_dim != 0 && ds.video_dim != dv) throw LoadError(vwhere + ": D_v differs from earlier videos");
    ds.video_dim = dv;
    rec->video.frames = read_feature_file(root / field<std::string>(j, "feature_file", vwhere), lv, dv);
    require_finite(rec->video.frames, vwhere);

    const auto& queries = j.contains("queries") ? j.at("queries") : json::array();
    if (queries.empty()) throw LoadError(vwhere + ": no queries");
    int idx = 0;
    for (const auto& q : queries) {
      QueryRecord qr;
      qr.qid = field<std::string>(q, "qid", vwhere + " query #" + std::to_string(idx));
      const std::string qwhere = "query '" + qr.qid + "'";
      qr.tokens = field<std::vector<int>>(q, "tokens", qwhere);
      if (q.contains("token_strings")) qr.token_strings = q.at("token_strings").get<std::vector<std::string>>();
      const int lw = field<int>(q, "L_w", qwhere);
      const int dq = field<int>(q, "D_q", qwhere);
      if (lw < 1) throw LoadError(qwhere + ": L_w must be >= 1");
      if (static_cast<int>(qr.tokens.size()) != lw) {
        throw LoadError(qwhere + ": " + std::to_string(qr.tokens.size()) + " tokens but L_w = " + std::to_string(lw));
      }
      if (ds.text_dim != 0 && ds.text_dim != dq) throw LoadError(qwhere + ": D_q differs from earlier queries");
      ds.text_dim = dq;
      for (int t : qr.tokens) {
        if (t < 0) throw LoadError(qwhere + ": negative token id");
        ds.vocab_size = std::max(ds.vocab_size, t + 1);
      }
      qr.words = read_feature_file(root / field<std::string>(q, "feature_file", qwhere), lw, dq);
      require_finite(qr.words, qwhere);
      const auto spans = field<std::vector<std::vector<double>>>(q, "spans", qwhere);
      if (spans.empty()) throw LoadError(qwhere + ": no ground-truth spans");
      for (const auto& sp : spans) {
        if (sp.size() != 2) throw LoadError(qwhere + ": span must be [start_s, end_s]");
        double s = sp[0];
        double e = sp[1];
        if (!std::isfinite(s) || !std::isfinite(e) || s > e) throw LoadError(qwhere + ": invalid span");
        if (s < 0.0) {
          ds.warnings.push_back(qwhere + ": span start " + std::to_string(s) + " clamped to 0");
          s = 0.0;
        }
        if (e > rec->video.duration) {
          ds.warnings.push_back(qwhere + ": span end " + std::to_string(e) + " clamped to duration " +
                                std::to_string(rec->video.duration));
          e = rec->video.duration;
        }
        if (s > e) throw LoadError(qwhere + ": span lies outside the video");
        qr.spans.push_back(TemporalSpan::seconds(s, e));
      }
      qr.sentence_index = idx++;
      rec->queries.push_back(std::move(qr));
    }
    videos.push_back(std::move(rec));
  }

  const fs::path vocab_path = root / "vocab.txt";
  if (fs::exists(vocab_path)) {
    const int n = static_cast<int>(load_vocabulary(vocab_path).size());
    if (n < ds.vocab_size) throw LoadError("vocab.txt has " + std::to_string(n) + " entries but token ids reach " +
                                           std::to_string(ds.vocab_size - 1));
    ds.vocab_size = n;
  }

  for (const auto& v : videos) {
    for (int i = 0; i < static_cast<int>(v->queries.size()); ++i) {
      Sample s;
      s.record = v;
      s.current = i;
      s.gt_frames = to_frame_span(v->queries[static_cast<std::size_t>(i)].spans.front(), v->video.duration,
                                  v->video.length());
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

std::vector<int> mask_positions(int length, double ratio, std::uint64_t seed) {
  if (length < 1) throw std::invalid_argument("mask_positions: length must be >= 1");
  const int count = std::clamp(static_cast<int>(std::ceil(ratio * length - 1e-12)), 1, length);
  std::vector<int> pos(static_cast<std::size_t>(length));
  std::iota(pos.begin(), pos.end(), 0);
  std::mt19937_64 rng(seed);
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<int> pick(i, length - 1);
    std::swap(pos[static_cast<std::size_t>(i)], pos[static_cast<std::size_t>(pick(rng))]);
  }
  pos.resize(static_cast<std::size_t>(count));
  std::sort(pos.begin(), pos.end());
  return pos;
}

int Batch::valid_frames(int b) const {
  return static_cast<int>(std::count(frame_mask[static_cast<std::size_t>(b)].begin(),
                                     frame_mask[static_cast<std::size_t>(b)].end(), true));
}

int Batch::valid_words(int b) const {
  return static_cast<int>(std::count(word_mask[static_cast<std::size_t>(b)].begin(),
                                     word_mask[static_cast<std::size_t>(b)].end(), true));
}

namespace {

FloatMatrix pad_rows(const FloatMatrix& m, int rows) {
  FloatMatrix out = FloatMatrix::Zero(rows, m.cols());
  out.topRows(m.rows()) = m;
  return out;
}

std::vector<bool> prefix_mask(int valid, int total) {
  std::vector<bool> m(static_cast<std::size_t>(total), false);
  std::fill(m.begin(), m.begin() + valid, true);
  return m;
}

}  // namespace

Batch make_batch(const std::vector<Sample>& samples, const BatchOptions& options) {
  if (samples.empty()) throw std::invalid_argument("make_batch: empty sample list");
  Batch b;
  for (const auto& s : samples) {
    b.max_frames = std::max(b.max_frames, s.video().length());
    b.max_words = std::max(b.max_words, s.query().length());
    b.max_sentences = std::max(b.max_sentences, s.sentence_count());
    for (const auto& q : s.record->queries) b.max_sentence_words = std::max(b.max_sentence_words, q.length());
  }
  const int dq = static_cast<int>(samples.front().query().words.cols());
  std::uint64_t element = 0;
  for (const auto& s : samples) {
    const auto& v = s.video();
    const auto& q = s.query();
    b.frames.push_back(pad_rows(v.frames, b.max_frames));
    b.frame_mask.push_back(prefix_mask(v.length(), b.max_frames));
    b.words.push_back(pad_rows(q.words, b.max_words));
    b.word_mask.push_back(prefix_mask(q.length(), b.max_words));
    std::vector<int> tok(static_cast<std::size_t>(b.max_words), 0);
    std::copy(q.tokens.begin(), q.tokens.end(), tok.begin());
    b.tokens.push_back(std::move(tok));
    b.mlm_positions.push_back(
        mask_positions(q.length(), options.mask_ratio, options.mask_seed * 0x9E3779B97F4A7C15ULL + element++));

    std::vector<FloatMatrix> sents;
    std::vector<std::vector<bool>> sent_word_mask;
    for (int k = 0; k < b.max_sentences; ++k) {
      if (k < s.sentence_count()) {
        const auto& sq = s.record->queries[static_cast<std::size_t>(k)];
        sents.push_back(pad_rows(sq.words, b.max_sentence_words));
        sent_word_mask.push_back(prefix_mask(sq.length(), b.max_sentence_words));
      } else {
        sents.push_back(FloatMatrix::Zero(b.max_sentence_words, dq));
        sent_word_mask.push_back(prefix_mask(0, b.max_sentence_words));
      }
    }
    b.sentences.push_back(std::move(sents));
    b.sentence_word_mask.push_back(std::move(sent_word_mask));
    b.sentence_mask.push_back(prefix_mask(s.sentence_count(), b.max_sentences));
    b.current.push_back(s.current);

    b.gt_seconds.push_back(q.spans);
    std::vector<CenterWidthSpan> norm;
    for (const auto& sp : q.spans) norm.push_back(to_center_width(sp, v.duration));
    b.gt_normalized.push_back(std::move(norm));
    b.gt_frames.push_back(s.gt_frames);
    b.duration.push_back(v.duration);
    b.video_ids.push_back(v.id);
    b.qids.push_back(q.qid);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Synthetic generator

void SynthConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("synth config: " + msg); };
  if (num_videos < 0 || num_val_videos < 0) fail("video counts must be >= 0");
  if (segments_per_video < 1) fail("segments_per_video must be >= 1");
  if (queries_per_video < 1 || queries_per_video > segments_per_video)
    fail("queries_per_video must lie in [1, segments_per_video]");
  if (concept_vocab < 1) fail("concept_vocab must be >= 1");
  if (concepts_per_segment < 1 || concepts_per_segment > concept_vocab)
    fail("concepts_per_segment must lie in [1, concept_vocab]");
  if (min_segment_frames < 1) fail("min_segment_frames must be >= 1");
  if (frames_per_video < segments_per_video * min_segment_frames)
    fail("frames_per_video too small for segments_per_video * min_segment_frames");
  if (video_dim < 1 || text_dim < 1) fail("feature dims must be >= 1");
  if (noise < 0.0) fail("noise must be >= 0");
  if (withheld_fraction < 0.0 || withheld_fraction >= 1.0) fail("withheld_fraction must lie in [0, 1)");
  if (!(min_duration > 0.0) || max_duration < min_duration) fail("bad duration range");
}

namespace {

FloatMatrix random_directions(int count, int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  FloatMatrix m(count, dim);
  for (int i = 0; i < count; ++i) {
    Eigen::VectorXd v(dim);
    for (int d = 0; d < dim; ++d) v(d) = n01(rng);
    v /= v.norm();
    m.row(i) = v.cast<float>().transpose();
  }
  return m;
}

std::vector<int> sample_without_replacement(int n, int k, std::mt19937_64& rng) {
  std::vector<int> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), 0);
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<int> pick(i, n - 1);
    std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(pick(rng))]);
  }
  all.resize(static_cast<std::size_t>(k));
  return all;
}

/// Splits `frames` into `parts` contiguous runs of at least `min_len`.
std::vector<int> segment_lengths(int frames, int parts, int min_len, std::mt19937_64& rng) {
  std::vector<int> len(static_cast<std::size_t>(parts), min_len);
  int spare = frames - parts * min_len;
  std::uniform_int_distribution<int> which(0, parts - 1);
  while (spare-- > 0) ++len[static_cast<std::size_t>(which(rng))];
  return len;
}

}  // namespace

SynthSummary synth_generate(const SynthConfig& config, std::uint64_t seed, const fs::path& out_dir) {
  config.validate();
  fs::create_directories(out_dir / "features");
  std::mt19937_64 rng(seed);

  const FloatMatrix video_concepts = random_directions(config.concept_vocab, config.video_dim, rng);
  const FloatMatrix text_concepts = config.text_dim == config.video_dim
                                        ? video_concepts
                                        : random_directions(config.concept_vocab, config.text_dim, rng);

  {
    std::ofstream vocab(out_dir / "vocab.txt", std::ios::trunc);
    for (int c = 0; c < config.concept_vocab; ++c) vocab << "concept" << c << "\n";
  }

  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> duration_dist(config.min_duration, config.max_duration);
  const int keep_count_full = config.concepts_per_segment;
  const int withheld = static_cast<int>(std::floor(config.withheld_fraction * keep_count_full));
  const int named = std::max(1, keep_count_full - withheld);

  SynthSummary summary;
  auto write_split = [&](const std::string& name, int first_video, int count) -> int {
    const fs::path manifest = out_dir / (name + ".jsonl");
    std::ofstream out(manifest, std::ios::trunc);
    int queries_written = 0;
    for (int vi = first_video; vi < first_video + count; ++vi) {
      const std::string vid = "vid" + std::to_string(vi);
      const int lv = config.frames_per_video;
      double duration = std::round(duration_dist(rng) * 100.0) / 100.0;
      const auto lens = segment_lengths(lv, config.segments_per_video, config.min_segment_frames, rng);

      FloatMatrix frames(lv, config.video_dim);
      std::vector<std::vector<int>> seg_concepts;
      std::vector<std::pair<int, int>> seg_frames;
      int f0 = 0;
      for (int s = 0; s < config.segments_per_video; ++s) {
        auto concepts = sample_without_replacement(config.concept_vocab, config.concepts_per_segment, rng);
        Eigen::RowVectorXf base = Eigen::RowVectorXf::Zero(config.video_dim);
        for (int c : concepts) base += video_concepts.row(c);
        const int len = lens[static_cast<std::size_t>(s)];
        for (int f = f0; f < f0 + len; ++f) {
          frames.row(f) = base;
          for (int d = 0; d < config.video_dim; ++d)
            frames(f, d) += static_cast<float>(config.noise * noise(rng));
        }
        seg_concepts.push_back(std::move(concepts));
        seg_frames.emplace_back(f0, f0 + len - 1);
        f0 += len;
      }
      const std::string vfile = "features/" + vid + ".bin";
      write_feature_file(out_dir / vfile, frames);

      json jv;
      jv["video_id"] = vid;
      jv["duration_s"] = duration;
      jv["feature_file"] = vfile;
      jv["L_v"] = lv;
      jv["D_v"] = config.video_dim;
      json jq = json::array();
      const auto chosen = sample_without_replacement(config.segments_per_video, config.queries_per_video, rng);
      for (int qi = 0; qi < config.queries_per_video; ++qi) {
        const int seg = chosen[static_cast<std::size_t>(qi)];
        auto concepts = seg_concepts[static_cast<std::size_t>(seg)];
        std::shuffle(concepts.begin(), concepts.end(), rng);
        concepts.resize(static_cast<std::size_t>(named));
        FloatMatrix words(named, config.text_dim);
        std::vector<std::string> strings;
        for (int w = 0; w < named; ++w) {
          const int c = concepts[static_cast<std::size_t>(w)];
          words.row(w) = text_concepts.row(c);
          for (int d = 0; d < config.text_dim; ++d) words(w, d) += static_cast<float>(config.noise * noise(rng));
          strings.push_back("concept" + std::to_string(c));
        }
        const std::string qid = vid + "_q" + std::to_string(qi);
        const std::string qfile = "features/" + qid + ".bin";
        write_feature_file(out_dir / qfile, words);
        const auto [a, b] = seg_frames[static_cast<std::size_t>(seg)];
        const double start = duration * a / lv;
        const double end = duration * (b + 1) / lv;
        json q;
        q["qid"] = qid;
        q["tokens"] = concepts;
        q["token_strings"] = strings;
        q["feature_file"] = qfile;
        q["L_w"] = named;
        q["D_q"] = config.text_dim;
        q["spans"] = json::array({json::array({start, end})});
        jq.push_back(std::move(q));
        ++queries_written;
      }
      jv["queries"] = std::move(jq);
      out << jv.dump() << "\n";
    }
    return queries_written;
  };

  summary.train_manifest = out_dir / "train.jsonl";
  summary.train_queries = write_split("train", 0, config.num_videos);
  if (config.num_val_videos > 0) {
    summary.val_manifest = out_dir / "val.jsonl";
    summary.val_queries = write_split("val", config.num_videos, config.num_val_videos);
  }
  return summary;
}

}  // namespace mesm::data
