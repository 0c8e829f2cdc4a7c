// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "spectrafuse/config.hpp"
#include "spectrafuse/errors.hpp"

namespace sf = spectrafuse;

TEST(Config, DefaultsValidateAndMatchOptimizerDefaults) {
  const sf::TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_DOUBLE_EQ(c.lr_thermal, 1e-4);
  EXPECT_DOUBLE_EQ(c.lr_fusion, 5e-4);
  EXPECT_DOUBLE_EQ(c.beta1, 0.9);
  EXPECT_DOUBLE_EQ(c.beta2, 0.999);
  EXPECT_DOUBLE_EQ(c.eps, 1e-8);
  EXPECT_DOUBLE_EQ(c.weight_decay, 0.01);
  EXPECT_EQ(c.batch_size, 4u);
  EXPECT_EQ(c.trainable_blocks, 4u);
  EXPECT_FALSE(c.cosine_decay);
  EXPECT_DOUBLE_EQ(c.grad_clip, 0.0);
  EXPECT_EQ(c.warmup_steps, 0u);
}

TEST(Config, TextRoundTripPreservesEveryKey) {
  sf::TrainConfig c;
  c.seed = 123456789012345ull;
  c.lr_fusion = 0.1 + 0.2;
  c.text_attention = false;
  c.data_dir = "some/dir";
  const auto back = sf::parse_config(c.to_text());
  for (const auto& k : sf::TrainConfig::keys()) EXPECT_EQ(back.get(k), c.get(k)) << k;
}

TEST(Config, ParsesCommentsAndWhitespace) {
  const auto c = sf::parse_config("# header\n  epochs = 9   # trailing\n\nlambda_gate=0.5\n");
  EXPECT_EQ(c.epochs, 9u);
  EXPECT_DOUBLE_EQ(c.lambda_gate, 0.5);
}

TEST(Config, UnknownKeyNamesTheLine) {
  try {
    sf::parse_config("epochs = 2\nnot_a_key = 1\n");
    FAIL() << "expected an error";
  } catch (const sf::ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("not_a_key"), std::string::npos);
  }
}

TEST(Config, MalformedValuesRejected) {
  sf::TrainConfig c;
  EXPECT_THROW(c.set("epochs", "-1"), sf::ContractError);
  EXPECT_THROW(c.set("epochs", "3x"), sf::ContractError);
  EXPECT_THROW(c.set("lr_fusion", "fast"), sf::ContractError);
  EXPECT_THROW(c.set("text_attention", "maybe"), sf::ContractError);
  EXPECT_THROW(sf::parse_config("epochs 3\n"), sf::ContractError);
}

TEST(Config, OverrideSyntax) {
  sf::TrainConfig c;
  sf::apply_override(c, "epochs=5");
  EXPECT_EQ(c.epochs, 5u);
  sf::apply_override(c, "data_dir=a=b");
  EXPECT_EQ(c.data_dir, "a=b");
  EXPECT_THROW(sf::apply_override(c, "epochs"), sf::ContractError);
  EXPECT_THROW(sf::apply_override(c, "nope=1"), sf::ContractError);
}

TEST(Config, ValidationRules) {
  auto invalid = [](const std::string& key, const std::string& value) {
    sf::TrainConfig c;
    c.set(key, value);
    EXPECT_THROW(c.validate(), sf::Error) << key << "=" << value;
  };
  invalid("trainable_blocks", "7");
  invalid("mask_ratio", "1.0");
  invalid("mae_ratio", "0");
  invalid("batch_size", "0");
  invalid("beta1", "1.0");
  invalid("eps", "0");
  invalid("lr_fusion", "-1");
  invalid("grad_clip", "-0.5");
  invalid("tau", "0");
  invalid("vocab", "10");
  sf::TrainConfig c;
  c.heads = 5;
  EXPECT_THROW(c.validate(), sf::DimensionError);
}

TEST(Config, FingerprintTracksArchitectureOnly) {
  const sf::TrainConfig base;
  sf::TrainConfig c = base;
  c.seed = 99;
  c.epochs = 40;
  c.lr_fusion = 1.0;
  c.trainable_blocks = 2;
  EXPECT_EQ(c.fingerprint(), base.fingerprint());
  c.dim = 32;
  EXPECT_NE(c.fingerprint(), base.fingerprint());
  c = base;
  c.vocab = 80;
  EXPECT_NE(c.fingerprint(), base.fingerprint());
}

TEST(Config, LoadMissingFileIsIoError) {
  EXPECT_THROW(sf::load_config("/nonexistent/dir/run.cfg"), sf::IoError);
}

TEST(Config, LoadFromFile) {
  const auto path = std::filesystem::temp_directory_path() / "spectrafuse_config_test.cfg";
  std::ofstream(path) << "epochs = 11\n";
  EXPECT_EQ(sf::load_config(path.string()).epochs, 11u);
  std::filesystem::remove(path);
}

TEST(Config, DerivedComponentConfigs) {
  const sf::TrainConfig c;
  const auto e = c.encoder_config();
  EXPECT_EQ(e.tokens(), 16u);
  EXPECT_EQ(c.ablation().text_attention, true);
  sf::TrainConfig d = c;
  d.gated_residual = false;
  EXPECT_FALSE(d.ablation().gated_residual);
  EXPECT_DOUBLE_EQ(c.loss_weights().lambda_gate, c.lambda_gate);
}
