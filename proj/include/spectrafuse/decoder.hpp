// SPDX-License-Identifier: Apache-2.0
//
// Small causal decoder that stands in for the frozen language model. The
// input sequence is [visual slots ; text tokens]; visual slots carry an extra
// type embedding.
#pragma once

#include <span>
#include <vector>

#include "spectrafuse/encoders.hpp"
#include "spectrafuse/vocab.hpp"

namespace spectrafuse {

struct DecoderConfig {
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t blocks = 2;
  std::size_t mlp_hidden = 128;
  std::size_t vocab = 64;
  std::size_t max_len = 32;
};

struct FrozenDecoder {
  DecoderConfig config;
  Tensor token_embed;  // [V × d]
  Tensor visual_type;  // [d]
  Tensor pos_embed;    // [max_len × d]
  std::vector<VitBlock> blocks;
  LayerNormParams final_norm;
  LinearParams head;  // d → V

  static FrozenDecoder init(const DecoderConfig& config, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);
  void set_trainable(bool on);
};

/// Rows of the token table for `ids`: [L × d].
Tensor embed_tokens(const FrozenDecoder& dec, std::span<const TokenId> ids);

/// Final-norm hidden states for [visual ; tokens]; `visual` may be null.
Tensor decoder_hidden(const FrozenDecoder& dec, const Tensor* visual, std::span<const TokenId> tokens);
Tensor decoder_logits(const FrozenDecoder& dec, const Tensor* visual, std::span<const TokenId> tokens);
/// Next-token logits after the last prompt token: [1 × V].
Tensor answer_logits(const FrozenDecoder& dec, const Tensor& visual, std::span<const TokenId> prompt);

/// One pretraining sequence. Slot flags mark which visual slots hold the
/// object caption; the rest hold noise only. Pure text items have no slots.
struct CorpusItem {
  std::vector<bool> object_slots;
  std::vector<TokenId> tokens;
};

struct DecoderCorpus {
  std::vector<CorpusItem> items;
  std::size_t slots = 0;
};

/// Yes/no questions over captioned slot grids (answer "yes" iff a slot holds
/// the object caption, balanced) mixed with the memorised sentences.
DecoderCorpus build_decoder_corpus(std::size_t n_questions, std::size_t slots, std::uint64_t seed);

struct DecoderPretrainOptions {
  std::size_t steps = 1500;
  std::size_t batch = 8;
  double lr = 2e-3;
  double noise_min = 0.5;
  double noise_max = 1.5;
  std::uint64_t seed = 1;
  // Optional [slots × d] grids added under the noise for a share of items.
  std::vector<Tensor> backgrounds;
  double background_share = 0.5;
};

/// Visual slot values for a corpus item: object caption rows plus Gaussian
/// noise of a per-item scale, on top of `background` when given.
Tensor corpus_slots(const FrozenDecoder& dec, const CorpusItem& item, double noise, Rng& rng,
                    const Tensor* background = nullptr);

/// Next-token cross-entropy over the text part of `item` (slot positions
/// excluded).
Tensor corpus_loss(const FrozenDecoder& dec, const CorpusItem& item, const Tensor* slots);

/// Trains every decoder parameter with AdamW on `corpus`, then freezes the
/// decoder. Returns the per-step mean loss. ContractError on an empty corpus.
std::vector<double> pretrain_decoder(FrozenDecoder& dec, const DecoderCorpus& corpus,
                                     const DecoderPretrainOptions& opts);

/// Mean next-token cross-entropy of a plain sentence (prefixed with <bos>).
double sentence_loss(const FrozenDecoder& dec, const std::string& sentence);

}  // namespace spectrafuse
