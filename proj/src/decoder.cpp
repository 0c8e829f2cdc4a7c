// SPDX-License-Identifier: Apache-2.0
#include "spectrafuse/decoder.hpp"

#include <algorithm>
#include <random>

#include "spectrafuse/errors.hpp"
#include "spectrafuse/objectives.hpp"
#include "spectrafuse/optim.hpp"

namespace spectrafuse {

namespace {

Tensor normal_tensor(Shape shape, Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

}  // namespace

FrozenDecoder FrozenDecoder::init(const DecoderConfig& config, Rng& rng) {
  if (config.vocab < Vocabulary::standard().size()) {
    throw ContractError("decoder: vocabulary of " + std::to_string(config.vocab) + " cannot hold " +
                        std::to_string(Vocabulary::standard().size()) + " words");
  }
  FrozenDecoder dec;
  dec.config = config;
  dec.token_embed = normal_tensor({config.vocab, config.dim}, rng, 1.0);
  dec.visual_type = normal_tensor({config.dim}, rng, 0.02);
  dec.pos_embed = normal_tensor({config.max_len, config.dim}, rng, 0.02);
  for (std::size_t b = 0; b < config.blocks; ++b) {
    dec.blocks.push_back(VitBlock::init(config.dim, config.heads, config.mlp_hidden, rng));
  }
  dec.final_norm = LayerNormParams::identity(config.dim);
  dec.head = LinearParams::init(config.dim, config.vocab, rng);
  return dec;
}

void FrozenDecoder::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".token_embed", token_embed);
  fn(prefix + ".visual_type", visual_type);
  fn(prefix + ".pos_embed", pos_embed);
  for (std::size_t b = 0; b < blocks.size(); ++b) blocks[b].visit(prefix + ".blocks." + std::to_string(b), fn);
  final_norm.visit(prefix + ".final_norm", fn);
  head.visit(prefix + ".head", fn);
}

void FrozenDecoder::set_trainable(bool on) {
  visit("", [on](const std::string&, Tensor& t) { t.set_requires_grad(on); });
}

Tensor embed_tokens(const FrozenDecoder& dec, std::span<const TokenId> ids) {
  for (TokenId id : ids) {
    if (id >= dec.config.vocab) throw ContractError("decoder: token id " + std::to_string(id) + " out of range");
  }
  return gather_rows(dec.token_embed, std::vector<std::size_t>(ids.begin(), ids.end()));
}

Tensor decoder_hidden(const FrozenDecoder& dec, const Tensor* visual, std::span<const TokenId> tokens) {
  const std::size_t d = dec.config.dim;
  std::vector<Tensor> parts;
  if (visual) {
    if (visual->rank() != 2 || visual->cols() != d) {
      throw DimensionError("decoder: visual slots " + shape_to_string(visual->shape()) + " must have width " +
                           std::to_string(d));
    }
    parts.push_back(add(*visual, expand_rows(dec.visual_type, visual->rows())));
  }
  if (!tokens.empty()) parts.push_back(embed_tokens(dec, tokens));
  if (parts.empty()) throw ContractError("decoder: empty input sequence");
  Tensor x = parts.size() == 1 ? parts[0] : concat_rows(parts);
  const std::size_t len = x.rows();
  if (len > dec.config.max_len) {
    throw DimensionError("decoder: sequence of " + std::to_string(len) + " exceeds maximum length " +
                         std::to_string(dec.config.max_len));
  }
  std::vector<std::size_t> positions(len);
  for (std::size_t i = 0; i < len; ++i) positions[i] = i;
  x = add(x, gather_rows(dec.pos_embed, positions));
  for (const auto& block : dec.blocks) x = vit_block(x, block, true);
  return layer_norm(x, dec.final_norm);
}

Tensor decoder_logits(const FrozenDecoder& dec, const Tensor* visual, std::span<const TokenId> tokens) {
  return linear(decoder_hidden(dec, visual, tokens), dec.head);
}

Tensor answer_logits(const FrozenDecoder& dec, const Tensor& visual, std::span<const TokenId> prompt) {
  if (prompt.empty()) throw ContractError("decoder: empty prompt");
  const Tensor h = decoder_hidden(dec, &visual, prompt);
  const std::size_t last = h.rows() - 1;
  return linear(gather_rows(h, std::vector<std::size_t>{last}), dec.head);
}

DecoderCorpus build_decoder_corpus(std::size_t n_questions, std::size_t slots, std::uint64_t seed) {
  const auto& vocab = Vocabulary::standard();
  Rng rng(seed);
  DecoderCorpus corpus;
  corpus.slots = slots;
  const QuestionKind kinds[] = {QuestionKind::warm, QuestionKind::light};
  for (std::size_t i = 0; i < n_questions; ++i) {
    CorpusItem item;
    item.object_slots.assign(slots, false);
    const bool yes = i % 2 == 0;
    if (yes) {
      const std::size_t k = 1 + rng() % 3;
      for (std::size_t j = 0; j < k; ++j) item.object_slots[rng() % slots] = true;
    }
    item.tokens = vocab.encode(question_text(kinds[(i / 2) % 2]));
    item.tokens.push_back(yes ? vocab.yes() : vocab.no());
    corpus.items.push_back(std::move(item));
  }
  for (const auto& s : memorized_sentences()) {
    CorpusItem item;
    item.tokens.push_back(vocab.bos());
    for (TokenId t : vocab.encode(s)) item.tokens.push_back(t);
    item.tokens.push_back(vocab.eos());
    // keep the sentences a visible share of every epoch
    for (std::size_t r = 0; r < std::max<std::size_t>(1, n_questions / 16); ++r) corpus.items.push_back(item);
  }
  return corpus;
}

Tensor corpus_slots(const FrozenDecoder& dec, const CorpusItem& item, double noise, Rng& rng,
                    const Tensor* background) {
  const std::size_t n = item.object_slots.size(), v = dec.config.vocab, d = dec.config.dim;
  std::vector<double> select(n * v, 0.0);
  const TokenId obj = Vocabulary::standard().object();
  for (std::size_t i = 0; i < n; ++i)
    if (item.object_slots[i]) select[i * v + obj] = 1.0;
  std::normal_distribution<double> dist(0.0, noise);
  std::vector<double> jitter(n * d);
  for (auto& x : jitter) x = dist(rng);
  if (background) {
    if (background->shape() != Shape{n, d}) {
      throw DimensionError("decoder corpus: background grid " + shape_to_string(background->shape()) + ", expected " +
                           shape_to_string(Shape{n, d}));
    }
    for (std::size_t i = 0; i < jitter.size(); ++i) jitter[i] += background->data()[i];
  }
  return add(matmul(Tensor({n, v}, std::move(select)), dec.token_embed), Tensor({n, d}, std::move(jitter)));
}

Tensor corpus_loss(const FrozenDecoder& dec, const CorpusItem& item, const Tensor* slots) {
  if (item.tokens.size() < 2) throw ContractError("decoder corpus: item needs at least two tokens");
  const std::span<const TokenId> inputs(item.tokens.data(), item.tokens.size() - 1);
  const Tensor logits = decoder_logits(dec, slots, inputs);
  const std::size_t offset = slots ? slots->rows() : 0;
  std::vector<std::size_t> rows(inputs.size());
  std::vector<std::size_t> targets(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    rows[i] = offset + i;
    targets[i] = item.tokens[i + 1];
  }
  return lm_loss(gather_rows(logits, rows), targets);
}

std::vector<double> pretrain_decoder(FrozenDecoder& dec, const DecoderCorpus& corpus,
                                     const DecoderPretrainOptions& opts) {
  if (corpus.items.empty()) throw ContractError("pretrain_decoder: empty corpus");
  if (opts.batch == 0) throw ContractError("pretrain_decoder: batch size must be positive");
  dec.set_trainable(true);
  std::vector<ParamGroup> groups{ParamGroup("decoder", AdamWConfig{opts.lr, 0.0})};
  dec.visit("decoder", [&](const std::string& name, Tensor& t) { groups[0].add(name, t); });
  Rng rng(opts.seed);
  std::vector<std::size_t> order(corpus.items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;
  std::vector<double> history;
  history.reserve(opts.steps);
  for (std::size_t step = 0; step < opts.steps; ++step) {
    prepare_gradients(groups);
    double total = 0.0;
    {
      Tape tape;
      Tensor loss = Tensor::scalar(0.0);
      for (std::size_t b = 0; b < opts.batch; ++b) {
        if (cursor == order.size()) {
          std::shuffle(order.begin(), order.end(), rng);
          cursor = 0;
        }
        const auto& item = corpus.items[order[cursor++]];
        if (item.object_slots.empty()) {
          loss = add(loss, corpus_loss(dec, item, nullptr));
        } else {
          const double noise = uniform(rng, opts.noise_min, opts.noise_max);
          const Tensor* bg = nullptr;
          if (!opts.backgrounds.empty() && uniform(rng, 0.0, 1.0) < opts.background_share) {
            bg = &opts.backgrounds[rng() % opts.backgrounds.size()];
          }
          const Tensor slots = corpus_slots(dec, item, noise, rng, bg);
          loss = add(loss, corpus_loss(dec, item, &slots));
        }
      }
      loss = scale(loss, 1.0 / static_cast<double>(opts.batch));
      total = loss.item();
      tape.backward(loss);
    }
    adamw_step(groups);
    history.push_back(total);
  }
  dec.set_trainable(false);
  return history;
}

double sentence_loss(const FrozenDecoder& dec, const std::string& sentence) {
  const auto& vocab = Vocabulary::standard();
  CorpusItem item;
  item.tokens.push_back(vocab.bos());
  for (TokenId t : vocab.encode(sentence)) item.tokens.push_back(t);
  item.tokens.push_back(vocab.eos());
  return corpus_loss(dec, item, nullptr).item();
}

}  // namespace spectrafuse
