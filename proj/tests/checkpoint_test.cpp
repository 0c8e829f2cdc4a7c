// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "dataset_fixture.hpp"
#include "spectrafuse/checkpoint.hpp"
#include "spectrafuse/errors.hpp"

namespace sf = spectrafuse;
using sf::testing::small_dataset;

namespace {

const std::vector<sf::Sample>& samples() {
  static const auto s = sf::load_samples(small_dataset(), "train");
  return s;
}

std::map<std::string, std::uint64_t> digests(sf::Model& m) {
  std::map<std::string, std::uint64_t> out;
  m.visit([&](const std::string& n, sf::Tensor& t) { out[n] = sf::tensor_digest(t); });
  return out;
}

std::vector<double> logits(const sf::Model& m, const sf::Sample& s) {
  const auto r = sf::forward_sample(m, s, s.item.modality, {});
  return {r.logits.data().begin(), r.logits.data().end()};
}

sf::TrainingState trained_state(const sf::TrainConfig& cfg, std::size_t steps) {
  auto state = sf::TrainingState::create(cfg, sf::Model::init(cfg));
  for (std::size_t i = 0; i < steps; ++i) {
    const sf::Sample* batch[] = {&samples()[2 * i], &samples()[2 * i + 1]};
    sf::train_step(state, batch);
  }
  return state;
}

}  // namespace

TEST(Checkpoint, ModelRoundTripIsBitExact) {
  sf::TrainConfig cfg;
  auto state = trained_state(cfg, 3);
  const auto bytes = sf::encode_checkpoint(sf::capture_model(cfg, state.model));
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "TVLB");

  sf::TrainConfig other = cfg;
  other.seed = 1234;
  auto fresh = sf::Model::init(other);
  EXPECT_NE(digests(fresh), digests(state.model));
  sf::restore_model(sf::decode_checkpoint(bytes), other, fresh);
  EXPECT_EQ(digests(fresh), digests(state.model));
  for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(logits(fresh, samples()[i]), logits(state.model, samples()[i]));
}

TEST(Checkpoint, FileRoundTrip) {
  sf::testing::TempDir dir("spectrafuse_ckpt");
  sf::TrainConfig cfg;
  auto model = sf::Model::init(cfg);
  const auto path = (dir.path / "m.tvlb").string();
  sf::save_checkpoint(path, sf::capture_model(cfg, model));
  const auto bundle = sf::load_checkpoint(path);
  EXPECT_EQ(bundle.fingerprint, cfg.fingerprint());
  EXPECT_EQ(bundle.config_text, cfg.to_text());
  EXPECT_TRUE(bundle.groups.empty());
  EXPECT_THROW(sf::load_checkpoint((dir.path / "missing.tvlb").string()), sf::IoError);
  EXPECT_THROW(sf::save_checkpoint("/nonexistent/dir/m.tvlb", bundle), sf::IoError);
}

TEST(Checkpoint, ResumedTrainingMatchesUninterruptedRun) {
  sf::TrainConfig cfg;
  auto straight = trained_state(cfg, 4);
  auto first = trained_state(cfg, 2);
  const auto bytes = sf::encode_checkpoint(sf::capture_state(first));

  auto resumed = sf::TrainingState::create(cfg, sf::Model::init(cfg));
  sf::restore_state(sf::decode_checkpoint(bytes), resumed);
  EXPECT_EQ(resumed.step, 2u);
  for (std::size_t i = 2; i < 4; ++i) {
    const sf::Sample* batch[] = {&samples()[2 * i], &samples()[2 * i + 1]};
    sf::train_step(resumed, batch);
  }
  EXPECT_EQ(digests(resumed.model), digests(straight.model));
  EXPECT_EQ(resumed.rng, straight.rng);
}

TEST(Checkpoint, ModelOnlyBundleCannotRestoreOptimizerState) {
  sf::TrainConfig cfg;
  auto model = sf::Model::init(cfg);
  const auto bundle = sf::capture_model(cfg, model);
  auto state = sf::TrainingState::create(cfg, sf::Model::init(cfg));
  EXPECT_THROW(sf::restore_state(bundle, state), sf::ContractError);
}

TEST(Checkpoint, UnknownVersionIsRejected) {
  sf::TrainConfig cfg;
  auto model = sf::Model::init(cfg);
  auto bytes = sf::encode_checkpoint(sf::capture_model(cfg, model));
  bytes[4] = 9;
  try {
    sf::decode_checkpoint(bytes);
    FAIL();
  } catch (const sf::VersionError& e) {
    EXPECT_NE(std::string(e.what()).find("version 9"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, BadMagicAndTrailingBytes) {
  sf::TrainConfig cfg;
  auto model = sf::Model::init(cfg);
  auto bytes = sf::encode_checkpoint(sf::capture_model(cfg, model));
  auto bad = bytes;
  bad[0] = 'X';
  try {
    sf::decode_checkpoint(bad);
    FAIL();
  } catch (const sf::ParseError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  bytes.push_back(0);
  try {
    sf::decode_checkpoint(bytes);
    FAIL();
  } catch (const sf::ParseError& e) {
    EXPECT_EQ(e.offset(), bytes.size() - 1);
  }
}

TEST(Checkpoint, TruncationReportsOffsetAndLeavesModelUntouched) {
  sf::TrainConfig cfg;
  auto source = trained_state(cfg, 1);
  const auto bytes = sf::encode_checkpoint(sf::capture_state(source));
  sf::testing::TempDir dir("spectrafuse_trunc");
  const auto path = (dir.path / "t.tvlb").string();

  auto target = sf::TrainingState::create(cfg, sf::Model::init(cfg));
  const auto before = digests(target.model);
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{9}, bytes.size() / 3, bytes.size() / 2,
                          bytes.size() - 1}) {
    std::ofstream(path, std::ios::binary | std::ios::trunc)
        .write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(cut));
    try {
      sf::restore_state(sf::load_checkpoint(path), target);
      FAIL() << "cut " << cut;
    } catch (const sf::ParseError& e) {
      EXPECT_LE(e.offset(), cut);
      EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
    }
    EXPECT_EQ(digests(target.model), before);
    EXPECT_EQ(target.step, 0u);
  }
}

TEST(Checkpoint, InvalidBundleAppliesNothing) {
  sf::TrainConfig cfg;
  auto source = sf::Model::init(cfg);
  auto bundle = sf::capture_model(cfg, source);
  bundle.params.back().value = sf::Tensor({1}, {0.0});

  sf::TrainConfig other = cfg;
  other.seed = 99;
  auto target = sf::Model::init(other);
  const auto before = digests(target);
  EXPECT_THROW(sf::restore_model(bundle, other, target), sf::DimensionError);
  EXPECT_EQ(digests(target), before);

  bundle = sf::capture_model(cfg, source);
  bundle.params.pop_back();
  EXPECT_THROW(sf::restore_model(bundle, other, target), sf::ContractError);
  bundle = sf::capture_model(cfg, source);
  bundle.params.push_back({"extra.weight", sf::Tensor({1}, {0.0})});
  EXPECT_THROW(sf::restore_model(bundle, other, target), sf::ContractError);
  EXPECT_EQ(digests(target), before);
}

TEST(Checkpoint, FingerprintMismatchReportsBothValues) {
  sf::TrainConfig cfg;
  auto model = sf::Model::init(cfg);
  const auto bundle = sf::capture_model(cfg, model);
  sf::TrainConfig narrow = cfg;
  narrow.dim = 32;
  narrow.fusion_hidden = 32;
  auto target = sf::Model::init(narrow);
  try {
    sf::restore_model(bundle, narrow, target);
    FAIL();
  } catch (const sf::VersionError& e) {
    const std::string msg = e.what();
    auto hex = [](std::uint64_t v) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(v));
      return std::string(buf);
    };
    EXPECT_NE(msg.find(hex(cfg.fingerprint())), std::string::npos) << msg;
    EXPECT_NE(msg.find(hex(narrow.fingerprint())), std::string::npos) << msg;
  }
}
