// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <algorithm>

#include <gtest/gtest.h>

#include "spectrafuse/decoder.hpp"
#include "spectrafuse/errors.hpp"
#include "spectrafuse/optim.hpp"
#include "spectrafuse/vocab.hpp"
#include "test_support.hpp"

using namespace spectrafuse;

namespace {

DecoderConfig small_config() {
  DecoderConfig c;
  c.max_len = 28;
  return c;
}

// Shared pretrained decoder; trained once for the whole suite.
const FrozenDecoder& pretrained() {
  static const FrozenDecoder dec = [] {
    Rng rng(3);
    auto d = FrozenDecoder::init(small_config(), rng);
    const auto corpus = build_decoder_corpus(1600, 16, 5);
    DecoderPretrainOptions opts;
    opts.steps = 700;
    opts.seed = 6;
    pretrain_decoder(d, corpus, opts);
    return d;
  }();
  return dec;
}

}  // namespace

TEST(Vocabulary, StandardTableHasSixtyFourWordsIncludingAnswers) {
  const auto& v = Vocabulary::standard();
  EXPECT_EQ(v.size(), 64u);
  EXPECT_EQ(v.word(v.yes()), "yes");
  EXPECT_EQ(v.word(v.no()), "no");
  EXPECT_THROW(v.id("zebra"), ContractError);
}

TEST(Vocabulary, EncodeSplitsQuestionMarkAndDecodes) {
  const auto& v = Vocabulary::standard();
  const auto ids = v.encode("Is there a light source?");
  ASSERT_EQ(ids.size(), 6u);
  EXPECT_EQ(v.word(ids.back()), "?");
  EXPECT_EQ(v.decode(ids), "is there a light source ?");
}

TEST(Vocabulary, TemplatesFitThePromptBudgetAndRoundTrip) {
  for (auto k : {QuestionKind::warm, QuestionKind::light, QuestionKind::count}) {
    const auto text = question_text(k);
    EXPECT_EQ(question_kind(text), k);
    EXPECT_LE(Vocabulary::standard().encode(text).size(), 12u);
  }
  EXPECT_THROW(question_kind("what colour is the sky?"), ContractError);
}

TEST(Decoder, LogitShapesAndCausality) {
  Rng rng(1);
  const auto dec = FrozenDecoder::init(small_config(), rng);
  const auto& v = Vocabulary::standard();
  const auto visual = spectrafuse::testing::random_tensor({16, 64}, rng, -1, 1, false);
  const auto a = v.encode("is there a light source ?");
  auto b = a;
  b.back() = v.id("smoke");
  const auto la = decoder_logits(dec, &visual, a);
  const auto lb = decoder_logits(dec, &visual, b);
  ASSERT_EQ(la.shape(), (Shape{22, 64}));
  // Changing the last token must not alter any earlier position.
  for (std::size_t r = 0; r + 1 < 22; ++r) {
    for (std::size_t c = 0; c < 64; ++c) EXPECT_EQ(la.at(r, c), lb.at(r, c));
  }
  EXPECT_EQ(answer_logits(dec, visual, a).shape(), (Shape{1, 64}));
}

TEST(Decoder, OverlongSequenceIsADimensionError) {
  Rng rng(1);
  const auto dec = FrozenDecoder::init(small_config(), rng);
  const auto visual = spectrafuse::testing::random_tensor({16, 64}, rng, -1, 1, false);
  std::vector<TokenId> tokens(13, Vocabulary::standard().id("a"));
  EXPECT_THROW(decoder_logits(dec, &visual, tokens), DimensionError);
}

TEST(Decoder, GradientsMatchFiniteDifferencesDuringPretraining) {
  Rng rng(2);
  DecoderConfig c;
  c.dim = 8;
  c.heads = 2;
  c.mlp_hidden = 8;
  c.max_len = 12;
  auto dec = FrozenDecoder::init(c, rng);
  dec.set_trainable(true);
  CorpusItem item{{true, false, false}, Vocabulary::standard().encode("<bos> is there any obj ? yes <eos>")};
  Rng noise(9);
  const auto slots = corpus_slots(dec, item, 0.5, noise);
  std::vector<std::pair<std::string, Tensor>> params;
  dec.visit("decoder", [&](const std::string& n, Tensor& t) { params.emplace_back(n, t); });
  const auto fixed_slots = Tensor(slots.shape(), std::vector<double>(slots.data().begin(), slots.data().end()));
  const auto report = spectrafuse::testing::finite_difference_check([&] { return corpus_loss(dec, item, &fixed_slots); }, params,
                                                       rng, 6);
  EXPECT_EQ(report.failures, 0u) << report.worst;
  EXPECT_GT(report.checked, 50u);
}

TEST(Decoder, EmptyCorpusIsAContractError) {
  Rng rng(1);
  auto dec = FrozenDecoder::init(small_config(), rng);
  EXPECT_THROW(pretrain_decoder(dec, DecoderCorpus{{}, 16}, {}), ContractError);
}

TEST(Decoder, CorpusIsBalancedAndAnswersFollowSlots) {
  const auto corpus = build_decoder_corpus(400, 16, 2);
  const auto& v = Vocabulary::standard();
  std::size_t yes = 0, questions = 0;
  for (const auto& item : corpus.items) {
    if (item.object_slots.empty()) continue;
    ++questions;
    const bool any = std::find(item.object_slots.begin(), item.object_slots.end(), true) != item.object_slots.end();
    const bool said_yes = std::find(item.tokens.begin(), item.tokens.end(), v.yes()) != item.tokens.end();
    EXPECT_EQ(any, said_yes);
    yes += said_yes;
  }
  EXPECT_EQ(questions, 400u);
  EXPECT_EQ(yes, 200u);
}

TEST(Decoder, PretrainingMemorisesTheToySentence) {
  const auto& dec = pretrained();
  for (const auto& s : memorized_sentences()) EXPECT_LT(sentence_loss(dec, s), 0.1) << s;
}

TEST(Decoder, PretrainedDecoderReadsObjectSlots) {
  const auto& dec = pretrained();
  const auto held_out = build_decoder_corpus(200, 16, 77);
  const auto& v = Vocabulary::standard();
  Rng rng(8);
  std::size_t correct = 0, total = 0;
  for (const auto& item : held_out.items) {
    if (item.object_slots.empty()) continue;
    const auto slots = corpus_slots(dec, item, uniform(rng, 0.5, 1.5), rng);
    const auto answer_at = std::find_if(item.tokens.begin(), item.tokens.end(),
                                        [&](TokenId t) { return t == v.yes() || t == v.no(); });
    const std::vector<TokenId> prompt(item.tokens.begin(), answer_at);
    const auto logits = answer_logits(dec, slots, prompt);
    const bool predicted_yes = logits.at(0, v.yes()) > logits.at(0, v.no());
    correct += predicted_yes == (*answer_at == v.yes());
    ++total;
  }
  EXPECT_GE(static_cast<double>(correct) / total, 0.9);
}

TEST(Decoder, FrozenAfterPretrainingAndDeterministic) {
  const auto& dec = pretrained();
  std::size_t trainable = 0;
  const_cast<FrozenDecoder&>(dec).visit("d", [&](const std::string&, Tensor& t) { trainable += t.requires_grad(); });
  EXPECT_EQ(trainable, 0u);

  Rng a(3), b(3);
  auto d1 = FrozenDecoder::init(small_config(), a);
  auto d2 = FrozenDecoder::init(small_config(), b);
  const auto corpus = build_decoder_corpus(64, 16, 5);
  DecoderPretrainOptions opts;
  opts.steps = 5;
  pretrain_decoder(d1, corpus, opts);
  pretrain_decoder(d2, corpus, opts);
  std::vector<std::uint64_t> h1, h2;
  d1.visit("d", [&](const std::string&, Tensor& t) { h1.push_back(tensor_digest(t)); });
  d2.visit("d", [&](const std::string&, Tensor& t) { h2.push_back(tensor_digest(t)); });
  EXPECT_EQ(h1, h2);
}
