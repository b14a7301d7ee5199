#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mesm/data.hpp"
#include "mesm_checks/fixtures.hpp"

namespace mesm::data {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / ("mesm_data_test_" + name)) {
    fs::remove_all(path_);
    fs::create_directories(path_ / "features");
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

FloatMatrix filled(int rows, int cols, float v) { return FloatMatrix::Constant(rows, cols, v); }

/// Writes `videos` videos of `queries` queries each and returns the manifest path.
fs::path write_manifest(const TempDir& dir, int videos, int queries, double span_end = 4.0) {
  std::ofstream out(dir.path() / "m.jsonl");
  for (int v = 0; v < videos; ++v) {
    const std::string vid = "v" + std::to_string(v);
    write_feature_file(dir.path() / "features" / (vid + ".bin"), filled(6, 4, static_cast<float>(v)));
    json jv = {{"video_id", vid}, {"duration_s", 12.0}, {"feature_file", "features/" + vid + ".bin"},
               {"L_v", 6}, {"D_v", 4}};
    json jq = json::array();
    for (int q = 0; q < queries; ++q) {
      const std::string qid = vid + "_q" + std::to_string(q);
      write_feature_file(dir.path() / "features" / (qid + ".bin"), filled(2 + q, 3, 1.0f));
      std::vector<int> tokens(static_cast<std::size_t>(2 + q), q);
      jq.push_back({{"qid", qid}, {"tokens", tokens}, {"feature_file", "features/" + qid + ".bin"},
                    {"L_w", 2 + q}, {"D_q", 3}, {"spans", json::array({json::array({2.0, span_end})})}});
    }
    jv["queries"] = jq;
    out << jv.dump() << "\n";
  }
  return dir.path() / "m.jsonl";
}

TEST(LoadDataset, GroupsSamplesPerVideo) {
  TempDir dir("count");
  const Dataset ds = load_dataset(write_manifest(dir, 2, 3));
  ASSERT_EQ(ds.samples.size(), 6u);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    EXPECT_EQ(ds.samples[i].sentence_count(), 3);
    EXPECT_EQ(ds.samples[i].current, static_cast<int>(i % 3));
    EXPECT_EQ(ds.samples[i].video().id, "v" + std::to_string(i / 3));
  }
  EXPECT_EQ(ds.video_dim, 4);
  EXPECT_EQ(ds.text_dim, 3);
  EXPECT_TRUE(ds.warnings.empty());
  // (2, 4) s on 6 frames over 12 s covers frames 1..1.
  EXPECT_EQ(ds.samples[0].gt_frames.first, 1);
  EXPECT_EQ(ds.samples[0].gt_frames.last, 1);
}

TEST(LoadDataset, ClampsEndPastDurationWithWarning) {
  TempDir dir("clamp");
  const Dataset ds = load_dataset(write_manifest(dir, 1, 1, 15.0));
  ASSERT_EQ(ds.samples.size(), 1u);
  EXPECT_DOUBLE_EQ(ds.samples[0].query().spans[0].end, 12.0);
  ASSERT_EQ(ds.warnings.size(), 1u);
  EXPECT_NE(ds.warnings[0].find("v0_q0"), std::string::npos);
}

TEST(LoadDataset, EmptyManifestIsEmpty) {
  TempDir dir("empty");
  std::ofstream(dir.path() / "m.jsonl").close();
  const Dataset ds = load_dataset(dir.path() / "m.jsonl");
  EXPECT_TRUE(ds.samples.empty());
}

TEST(LoadDataset, ErrorsNameTheRecord) {
  TempDir dir("errors");
  const fs::path m = write_manifest(dir, 1, 2);
  fs::remove(dir.path() / "features" / "v0_q1.bin");
  try {
    load_dataset(m);
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("v0_q1"), std::string::npos);
  }

  write_feature_file(dir.path() / "features" / "v0_q1.bin", filled(2, 3, 1.0f));  // declared 3 x 3
  EXPECT_THROW(load_dataset(m), LoadError);

  FloatMatrix bad = filled(3, 3, 1.0f);
  bad(1, 2) = std::numeric_limits<float>::quiet_NaN();
  write_feature_file(dir.path() / "features" / "v0_q1.bin", bad);
  try {
    load_dataset(m);
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("v0_q1"), std::string::npos);
  }
  EXPECT_THROW(load_dataset(dir.path() / "missing.jsonl"), LoadError);
}

TEST(MakeBatch, PadsToBatchMaxima) {
  std::mt19937_64 rng(1);
  checks::RandomShape shape{5, 5, 2, 2, 1, 1};
  Dataset a = checks::random_dataset(rng, 1, shape, 4, 3, 10);
  shape.min_frames = shape.max_frames = 8;
  shape.min_sentences = shape.max_sentences = 4;
  Dataset b = checks::random_dataset(rng, 1, shape, 4, 3, 10);
  const Batch batch = make_batch({a.samples[0], b.samples[0]});
  EXPECT_EQ(batch.max_frames, 8);
  ASSERT_EQ(batch.size(), 2);
  EXPECT_EQ(std::count(batch.frame_mask[0].begin(), batch.frame_mask[0].end(), true), 5);
  EXPECT_EQ(std::count(batch.frame_mask[1].begin(), batch.frame_mask[1].end(), true), 8);
  EXPECT_EQ(std::count(batch.sentence_mask[0].begin(), batch.sentence_mask[0].end(), true), 1);
  EXPECT_EQ(std::count(batch.sentence_mask[1].begin(), batch.sentence_mask[1].end(), true), 4);
  EXPECT_EQ(batch.valid_frames(0), 5);
  EXPECT_TRUE(batch.frames[0].bottomRows(3).isZero());
}

TEST(MakeBatch, SingleSampleMasksAllTrue) {
  std::mt19937_64 rng(2);
  const Dataset ds = checks::random_dataset(rng, 1, checks::RandomShape{}, 4, 3, 10);
  const Batch batch = make_batch({ds.samples[0]});
  for (bool m : batch.frame_mask[0]) EXPECT_TRUE(m);
  for (bool m : batch.word_mask[0]) EXPECT_TRUE(m);
  EXPECT_EQ(batch.max_frames, ds.samples[0].video().length());
}

TEST(MakeBatch, GroundTruthInBothForms) {
  std::mt19937_64 rng(3);
  const Dataset ds = checks::random_dataset(rng, 3, checks::RandomShape{}, 4, 3, 10);
  const Batch batch = make_batch(ds.samples);
  for (int b = 0; b < batch.size(); ++b) {
    const auto i = static_cast<std::size_t>(b);
    const auto& s = ds.samples[i];
    EXPECT_EQ(batch.gt_seconds[i].front().start, s.query().spans.front().start);
    const auto cw = to_center_width(s.query().spans.front(), s.video().duration);
    EXPECT_DOUBLE_EQ(batch.gt_normalized[i].front().center, cw.center);
    EXPECT_EQ(batch.gt_frames[i].first, s.gt_frames.first);
    EXPECT_EQ(batch.gt_frames[i].last, s.gt_frames.last);
  }
}

TEST(MakeBatch, MlmPositionsAreCeilingOfOneThird) {
  std::mt19937_64 rng(4);
  const Dataset ds = checks::random_dataset(rng, 4, checks::RandomShape{}, 4, 3, 10);
  const Batch batch = make_batch(ds.samples, BatchOptions{1.0 / 3.0, 9});
  for (int b = 0; b < batch.size(); ++b) {
    const int lw = batch.valid_words(b);
    EXPECT_EQ(static_cast<int>(batch.mlm_positions[static_cast<std::size_t>(b)].size()), (lw + 2) / 3);
  }
}

TEST(MaskPositions, CountsAndDeterminism) {
  EXPECT_EQ(mask_positions(9, 1.0 / 3.0, 1).size(), 3u);
  EXPECT_EQ(mask_positions(1, 1.0 / 3.0, 1).size(), 1u);
  EXPECT_EQ(mask_positions(12, 1.0 / 3.0, 5), mask_positions(12, 1.0 / 3.0, 5));
  for (int len = 1; len <= 30; ++len) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto p = mask_positions(len, 1.0 / 3.0, seed);
      EXPECT_GE(p.size(), 1u);
      if (len >= 2) {
        EXPECT_LT(p.size(), static_cast<std::size_t>(len));
      }
      EXPECT_TRUE(std::is_sorted(p.begin(), p.end()));
      EXPECT_EQ(std::adjacent_find(p.begin(), p.end()), p.end());
      EXPECT_GE(p.front(), 0);
      EXPECT_LT(p.back(), len);
    }
  }
}

TEST(MaskPositions, RoughlyUniform) {
  std::vector<int> hits(9, 0);
  for (std::uint64_t seed = 0; seed < 3000; ++seed)
    for (int p : mask_positions(9, 1.0 / 3.0, seed)) ++hits[static_cast<std::size_t>(p)];
  for (int h : hits) EXPECT_NEAR(h, 1000, 150);
}

TEST(Synth, CountsQueries) {
  TempDir dir("synth_count");
  SynthConfig c;
  c.num_videos = 10;
  c.segments_per_video = 3;
  c.queries_per_video = 3;
  const auto s = synth_generate(c, 1, dir.path());
  EXPECT_EQ(s.train_queries, 30);
  EXPECT_EQ(load_dataset(s.train_manifest).samples.size(), 30u);
  EXPECT_TRUE(s.val_manifest.empty());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

TEST(Synth, ByteIdenticalForFixedSeed) {
  TempDir a("synth_a"), b("synth_b");
  SynthConfig c;
  c.num_videos = 3;
  c.num_val_videos = 1;
  synth_generate(c, 42, a.path());
  synth_generate(c, 42, b.path());
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a.path())) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a.path());
    EXPECT_EQ(slurp(e.path()), slurp(b.path() / rel)) << rel;
    ++files;
  }
  EXPECT_GT(files, 5);
}

TEST(Synth, NoiselessWordsPointAtTheirSegment) {
  TempDir dir("synth_clean");
  SynthConfig c;
  c.num_videos = 5;
  c.noise = 0.0;
  c.withheld_fraction = 0.0;
  const Dataset ds = load_dataset(synth_generate(c, 3, dir.path()).train_manifest);
  for (const auto& s : ds.samples) {
    const Eigen::RowVectorXf words = s.query().words.colwise().mean();
    const auto& f = s.gt_frames;
    const Eigen::RowVectorXf seg = s.video().frames.middleRows(f.first, f.frame_count()).colwise().mean();
    EXPECT_GT(words.dot(seg) / (words.norm() * seg.norm()), 0.99f);
  }
}

TEST(Synth, LoadRoundTripMatchesIntent) {
  TempDir dir("synth_roundtrip");
  SynthConfig c;
  c.num_videos = 4;
  c.frames_per_video = 20;
  c.segments_per_video = 4;
  c.queries_per_video = 2;
  const Dataset ds = load_dataset(synth_generate(c, 8, dir.path()).train_manifest);
  ASSERT_EQ(ds.samples.size(), 8u);
  for (const auto& s : ds.samples) {
    EXPECT_EQ(s.video().length(), 20);
    EXPECT_EQ(s.video().frames.cols(), c.video_dim);
    EXPECT_GE(s.video().duration, c.min_duration);
    EXPECT_LE(s.video().duration, c.max_duration);
    // Generated spans sit on frame boundaries, so the frame span maps back exactly.
    const auto& sp = s.query().spans.front();
    EXPECT_NEAR(sp.start, s.video().duration * s.gt_frames.first / 20.0, 1e-9);
    EXPECT_NEAR(sp.end, s.video().duration * (s.gt_frames.last + 1) / 20.0, 1e-9);
    EXPECT_EQ(s.query().length(), 3);  // 4 concepts, a quarter withheld
  }
}

TEST(Synth, RejectsInconsistentConfig) {
  TempDir dir("synth_bad");
  SynthConfig c;
  c.concepts_per_segment = c.concept_vocab + 1;
  EXPECT_THROW(synth_generate(c, 1, dir.path()), std::invalid_argument);
  EXPECT_FALSE(fs::exists(dir.path() / "train.jsonl"));
  SynthConfig d;
  d.queries_per_video = d.segments_per_video + 1;
  EXPECT_THROW(synth_generate(d, 1, dir.path()), std::invalid_argument);
}

}  // namespace
}  // namespace mesm::data
