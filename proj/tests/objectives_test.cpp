// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "spectrafuse/objectives.hpp"
#include "test_support.hpp"

namespace sf = spectrafuse;
using sf::Tensor;

namespace {

oracle::Mat mat_of(const Tensor& t) {
  return oracle::from_flat({t.data().begin(), t.data().end()}, t.rows(), t.cols());
}

Tensor fixed(sf::Shape shape, std::vector<double> v) { return Tensor(std::move(shape), std::move(v)); }

}  // namespace

TEST(LmLoss, ConfidentPredictionIsNearZero) {
  std::vector<double> v(3 * 4, 0.0);
  const std::vector<std::size_t> targets{2, 0, 3};
  for (std::size_t i = 0; i < 3; ++i) v[i * 4 + targets[i]] = 20.0;
  EXPECT_LT(sf::lm_loss(fixed({3, 4}, v), targets).item(), 1e-8);
}

TEST(LmLoss, UniformLogitsGiveLogV) {
  EXPECT_NEAR(sf::lm_loss(Tensor::full({2, 4}, 0.3), {1, 3}).item(), std::log(4.0), 1e-15);
  EXPECT_NEAR(sf::lm_loss(Tensor::zeros({1, 64}), {7}).item(), std::log(64.0), 1e-12);
}

TEST(LmLoss, MatchesSoftmaxLoopOracle) {
  sf::Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor logits = sf::testing::random_tensor({3, 5}, rng, -3, 3, false);
    const std::vector<std::size_t> t{rng() % 5, rng() % 5, rng() % 5};
    EXPECT_LT(std::abs(sf::lm_loss(logits, t).item() - oracle::cross_entropy(mat_of(logits), t)), 1e-12);
  }
}

TEST(LmLoss, IgnoredPositionsAreExcluded) {
  sf::Rng rng(2);
  const Tensor logits = sf::testing::random_tensor({3, 5}, rng, -3, 3, false);
  const double kept = sf::lm_loss(logits, {1, 2, 3}, {true, false, true}).item();
  const Tensor row = sf::slice_last_dim(sf::gather_rows(logits, std::vector<std::size_t>{1}), 0, 5);
  EXPECT_NEAR(kept, sf::lm_loss(row, {2}).item(), 1e-15);
  EXPECT_THROW(sf::lm_loss(logits, {1, 2, 3}, {true, true, true}), sf::ContractError);
  EXPECT_THROW(sf::lm_loss(logits, {1, 2, 9}), sf::ContractError);
  EXPECT_THROW(sf::lm_loss(logits, {1, 2}), sf::DimensionError);
}

TEST(LmLoss, IsNonNegativeAndLargeLogitsStayFinite) {
  sf::Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor logits = sf::testing::random_tensor({4, 7}, rng, -500, 500, false);
    const double l = sf::lm_loss(logits, {0, 1, 2, 3}).item();
    EXPECT_TRUE(std::isfinite(l));
    EXPECT_GE(l, 0.0);
  }
}

TEST(AlignLoss, ClosedForms) {
  sf::Rng rng(4);
  const Tensor r = sf::testing::random_tensor({5, 7}, rng, -1, 1, false);
  EXPECT_EQ(sf::align_loss(r, r).item(), 0.0);
  for (std::size_t d : {1u, 7u, 64u}) {
    const Tensor a = sf::testing::random_tensor({9, d}, rng, -1, 1, false);
    EXPECT_NEAR(sf::align_loss(sf::add(a, Tensor::full({9, d}, 1.0)), a).item(), static_cast<double>(d), 1e-9);
  }
  EXPECT_THROW(sf::align_loss(r, Tensor::zeros({5, 6})), sf::DimensionError);
}

TEST(AlignLoss, MatchesLoopOracle) {
  sf::Rng rng(5);
  const Tensor r = sf::testing::random_tensor({6, 4}, rng, -2, 2, false);
  const Tensor t = sf::testing::random_tensor({6, 4}, rng, -2, 2, false);
  double total = 0.0;
  for (std::size_t n = 0; n < 6; ++n) {
    double sq = 0.0;
    for (std::size_t j = 0; j < 4; ++j) sq += (r.at(n, j) - t.at(n, j)) * (r.at(n, j) - t.at(n, j));
    total += sq;
  }
  EXPECT_LT(std::abs(sf::align_loss(r, t).item() - total / 6.0), 1e-12);
}

TEST(InfoNce, SingletonBatchIsZero) {
  EXPECT_EQ(sf::info_nce(fixed({1, 3}, {1, 2, 3}), fixed({1, 3}, {-1, 0, 2}), 0.07).item(), 0.0);
}

TEST(InfoNce, IdenticalEmbeddingsGiveLog2) {
  const Tensor x = fixed({2, 3}, {0.3, -0.2, 0.9, 0.3, -0.2, 0.9});
  EXPECT_NEAR(sf::info_nce(x, x, 0.07).item(), std::numbers::ln2, 1e-9);
}

TEST(InfoNce, OrthonormalPairsMatchClosedForm) {
  const Tensor e = fixed({2, 2}, {1, 0, 0, 1});
  const double expected = -std::log(std::exp(1.0) / (std::exp(1.0) + std::exp(0.0)));
  EXPECT_NEAR(sf::info_nce(e, e, 1.0).item(), expected, 1e-12);
  EXPECT_NEAR(sf::info_nce(e, e, 1.0, false).item(), expected, 1e-12);
}

TEST(InfoNce, MatchesBruteForceOracle) {
  sf::Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t b = 1 + trial % 5;
    const Tensor x = sf::testing::random_tensor({b, 4}, rng, -1, 1, false);
    const Tensor y = sf::testing::random_tensor({b, 4}, rng, -1, 1, false);
    for (bool sym : {true, false}) {
      EXPECT_LT(std::abs(sf::info_nce(x, y, 0.5, sym).item() - oracle::info_nce(mat_of(x), mat_of(y), 0.5, sym)),
                1e-10);
    }
  }
}

TEST(InfoNce, PermutationEquivariant) {
  sf::Rng rng(7);
  const Tensor x = sf::testing::random_tensor({5, 3}, rng, -1, 1, false);
  const Tensor y = sf::testing::random_tensor({5, 3}, rng, -1, 1, false);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  EXPECT_LT(std::abs(sf::info_nce(x, y, 0.2).item() -
                     sf::info_nce(sf::gather_rows(x, perm), sf::gather_rows(y, perm), 0.2).item()),
            1e-12);
}

TEST(InfoNce, LossFallsAsPositivesAlign) {
  // b_0 rotates from orthogonal towards a_0 while the negative stays fixed
  const Tensor a = fixed({2, 3}, {1, 0, 0, 0, 0, 1});
  double previous = INFINITY;
  for (double theta = 1.5; theta >= 0.0; theta -= 0.25) {
    const Tensor b = fixed({2, 3}, {std::cos(theta), std::sin(theta), 0, 0, 0, 1});
    const double l = sf::info_nce(a, b, 0.5).item();
    EXPECT_LT(l, previous);
    previous = l;
  }
}

TEST(InfoNce, ZeroRowIsContractError) {
  EXPECT_THROW(sf::info_nce(fixed({2, 2}, {0, 0, 1, 1}), fixed({2, 2}, {1, 0, 0, 1}), 0.1), sf::ContractError);
}

TEST(ContrastiveLoss, ClosedFormsAndComposition) {
  EXPECT_EQ(sf::contrastive_loss(fixed({1, 2}, {1, 0}), fixed({1, 2}, {0, 1}), fixed({1, 2}, {1, 1}), 0.07).item(),
            0.0);
  sf::Rng rng(8);
  const Tensor r = sf::testing::random_tensor({3, 4}, rng, -1, 1, false);
  const Tensor t = sf::testing::random_tensor({3, 4}, rng, -1, 1, false);
  const Tensor p = sf::testing::random_tensor({3, 4}, rng, -1, 1, false);
  EXPECT_NEAR(sf::contrastive_loss(r, t, t, 0.1).item(), sf::info_nce(r, t, 0.1).item(), 1e-15);
  const double ref = 0.5 * (oracle::info_nce(mat_of(r), mat_of(t), 0.1) + oracle::info_nce(mat_of(r), mat_of(p), 0.1));
  EXPECT_LT(std::abs(sf::contrastive_loss(r, t, p, 0.1).item() - ref), 1e-12);
}

TEST(GateEntropy, ClosedForms) {
  EXPECT_NEAR(sf::gate_entropy_loss(Tensor::full({16, 1}, 0.5)).item(), -std::numbers::ln2, 1e-9);
  const double sat = sf::gate_entropy_loss(Tensor::full({4, 1}, 1.0 - 1e-12)).item();
  EXPECT_LE(sat, 0.0);
  EXPECT_GT(sat, -1e-9);
  EXPECT_NEAR(sf::gate_entropy_loss(fixed({2, 1}, {0.5, 0.9})).item(),
              -0.5 * (oracle::binary_entropy(0.5) + oracle::binary_entropy(0.9)), 1e-12);
  EXPECT_TRUE(std::isfinite(sf::gate_entropy_loss(fixed({2, 1}, {0.0, 1.0})).item()));
}

TEST(GateEntropy, BoundedByMinusLog2) {
  sf::Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const double l = sf::gate_entropy_loss(sf::testing::random_tensor({8, 1}, rng, 1e-6, 1 - 1e-6, false)).item();
    EXPECT_GT(l, -std::numbers::ln2);
    EXPECT_LT(l, 0.0);
  }
}

TEST(TotalLoss, WeightedSum) {
  const sf::LossWeights w{0.1, 0.1, 0.01, 0.07};
  const auto b = sf::total_loss(Tensor::scalar(1), Tensor::scalar(2), Tensor::scalar(3), Tensor::scalar(-0.5), w);
  EXPECT_NEAR(b.total.item(), 1.495, 1e-12);
  const auto zero_w = sf::total_loss(Tensor::scalar(1.25), Tensor::scalar(2), Tensor::scalar(3), Tensor::scalar(-0.5),
                                     sf::LossWeights{0, 0, 0, 1});
  EXPECT_EQ(zero_w.total.item(), 1.25);
  const auto zeros = sf::total_loss(Tensor::scalar(0), Tensor::scalar(0), Tensor::scalar(0), Tensor::scalar(0), w);
  EXPECT_EQ(zeros.total.item(), 0.0);
  EXPECT_THROW((sf::LossWeights{-1, 0, 0, 1}.validate()), sf::ContractError);
  EXPECT_THROW((sf::LossWeights{0, 0, 0, 0}.validate()), sf::ContractError);
}

TEST(ObjectiveGradients, AllLossesMatchFiniteDifferences) {
  sf::Rng rng(10);
  Tensor logits = sf::testing::random_tensor({4, 6}, rng, -2, 2);
  Tensor r = sf::testing::random_tensor({3, 5}, rng);
  Tensor t = sf::testing::random_tensor({3, 5}, rng);
  Tensor p = sf::testing::random_tensor({3, 5}, rng);
  Tensor gates = sf::testing::random_tensor({5, 1}, rng, 0.05, 0.95);
  const sf::LossWeights w{0.3, 0.7, 0.2, 0.5};
  auto f = [&] {
    const auto b = sf::total_loss(sf::lm_loss(logits, {1, 0, 5, 2}, {false, true, false, false}), sf::align_loss(r, t),
                                  sf::contrastive_loss(r, t, p, w.tau), sf::gate_entropy_loss(gates), w);
    return sf::add(b.total, sf::info_nce(t, p, 0.3, false));
  };
  const auto report =
      sf::testing::finite_difference_check(f, {{"logits", logits}, {"r", r}, {"t", t}, {"p", p}, {"gates", gates}}, rng);
  EXPECT_EQ(report.failures, 0u) << report.worst;
  EXPECT_EQ(report.checked, 24u + 45u + 5u);
}
