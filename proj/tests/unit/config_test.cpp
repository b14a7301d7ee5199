#include <gtest/gtest.h>

#include <filesystem>

#include "mesm/config.hpp"

namespace mesm {
namespace {

TEST(RunConfig, PublishedDefaults) {
  const RunConfig c;
  EXPECT_EQ(c.hidden_dim, 256);
  EXPECT_EQ(c.fw_layers, 2);
  EXPECT_EQ(c.ma_layers, 2);
  EXPECT_EQ(c.enc_layers, 2);
  EXPECT_EQ(c.dec_layers, 2);
  EXPECT_EQ(c.ss_layers, 4);
  EXPECT_DOUBLE_EQ(c.gamma, 0.9);
  EXPECT_DOUBLE_EQ(c.mask_ratio, 1.0 / 3.0);
  EXPECT_NO_THROW(c.validate());
}

TEST(RunConfig, SerializeParseRoundTrip) {
  RunConfig c;
  c.set("lr", "3e-4");
  c.set("use_ss", "false");
  c.set("mlm_scope", "masked_only");
  c.set("seed", "77");
  const RunConfig back = RunConfig::parse(c.serialize());
  EXPECT_EQ(back.serialize(), c.serialize());
  EXPECT_EQ(back.hash(), c.hash());
  EXPECT_DOUBLE_EQ(back.lr, 3e-4);
  EXPECT_FALSE(back.use_ss);
  EXPECT_EQ(back.mlm_scope, MlmScope::kMaskedOnly);
  EXPECT_EQ(back.seed, 77u);
}

TEST(RunConfig, DoublesSurviveTextExactly) {
  RunConfig c;
  c.mask_ratio = 1.0 / 3.0;
  c.tau = 0.1 + 0.2;
  const RunConfig back = RunConfig::parse(c.serialize());
  EXPECT_EQ(back.mask_ratio, c.mask_ratio);
  EXPECT_EQ(back.tau, c.tau);
}

TEST(RunConfig, HashTracksEveryField) {
  const RunConfig base;
  for (const auto& key : base.keys()) {
    RunConfig c = base;
    const std::string before = c.serialize();
    // Any legal change of any field must move the hash.
    for (const char* v : {"3", "0.5", "true", "false", "masked_only", "all_words"}) {
      try {
        c.set(key, v);
      } catch (const ConfigError&) {
        continue;
      }
      if (c.serialize() != before) break;
    }
    if (c.serialize() != before) {
      EXPECT_NE(c.hash(), base.hash()) << key;
    }
  }
}

TEST(RunConfig, UnknownKeyAndBadValues) {
  RunConfig c;
  EXPECT_THROW(c.set("no_such_key", "1"), ConfigError);
  EXPECT_THROW(c.set("hidden_dim", "abc"), ConfigError);
  EXPECT_THROW(c.set("use_fw", "maybe"), ConfigError);
  EXPECT_THROW(RunConfig::parse("lr 0.1\n"), ConfigError);
}

TEST(RunConfig, ParseSkipsCommentsAndBlankLines) {
  const RunConfig c = RunConfig::parse("# desk run\n\nlr = 0.002\n  batch_size=4  \n");
  EXPECT_DOUBLE_EQ(c.lr, 0.002);
  EXPECT_EQ(c.batch_size, 4);
}

TEST(RunConfig, ValidateRejectsOutOfRange) {
  auto bad = [](const char* key, const char* value) {
    RunConfig c;
    c.set(key, value);
    EXPECT_THROW(c.validate(), ConfigError) << key << "=" << value;
  };
  bad("tau", "0");
  bad("heads", "3");
  bad("dropout", "1");
  bad("dec_layers", "0");
  bad("num_spans", "0");
  bad("lr", "-1");
  bad("batch_size", "0");
  bad("gamma", "1.5");
}

TEST(RunConfig, SaveLoad) {
  const auto path = std::filesystem::temp_directory_path() / "mesm_config_test.txt";
  RunConfig c;
  c.hidden_dim = 64;
  c.save(path);
  EXPECT_EQ(RunConfig::load(path).serialize(), c.serialize());
  std::filesystem::remove(path);
  EXPECT_THROW(RunConfig::load(path), ConfigError);
}

TEST(Ablate, BaselineSwitches) {
  const RunConfig c = ablate(RunConfig{}, {"fw_off", "ss_off", "enc_loss_off"});
  EXPECT_FALSE(c.use_fw);
  EXPECT_FALSE(c.use_ss);
  EXPECT_EQ(c.lambda_enc, 0.0);
  EXPECT_EQ(c.ma_layers, 2);
}

TEST(Ablate, MlmOffKeepsBlocks) {
  const RunConfig c = ablate(RunConfig{}, {"mlm_off"});
  EXPECT_TRUE(c.use_fw);
  EXPECT_FALSE(c.use_mlm);
}

TEST(Ablate, DefaultDepthIsIdentity) {
  EXPECT_EQ(ablate(RunConfig{}, {"ss_layers=4"}).serialize(), RunConfig{}.serialize());
  EXPECT_EQ(ablate(RunConfig{}, {"fw_layers=1"}).fw_layers, 1);
}

TEST(Ablate, UnknownSwitchThrows) {
  EXPECT_THROW(ablate(RunConfig{}, {"decoder_off"}), ConfigError);
  EXPECT_THROW(ablate(RunConfig{}, {"dec_layers=1"}), ConfigError);
  EXPECT_THROW(ablate(RunConfig{}, {"ss_layers=-1"}), ConfigError);
}

}  // namespace
}  // namespace mesm
