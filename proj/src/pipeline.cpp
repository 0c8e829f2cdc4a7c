// SPDX-License-Identifier: Apache-2.0
#include "spectrafuse/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <random>

#include <json.hpp>

#include "spectrafuse/errors.hpp"

namespace spectrafuse {

namespace {

enum Stream : std::uint64_t { rgb_stream = 1, thermal_stream, mae_stream, fusion_stream, null_stream, decoder_stream };

Tensor normal_grid(std::size_t n, std::size_t d, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(n * d);
  for (auto& x : v) x = dist(rng);
  return Tensor({n, d}, std::move(v), true);
}

void set_requires_grad(auto& params, bool on) {
  params.visit("", [on](const std::string&, Tensor& t) { t.set_requires_grad(on); });
}

Tensor row(const Tensor& v) { return reshape(v, {1, v.numel()}); }

Tensor mean_of(const std::vector<Tensor>& terms) {
  Tensor acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return scale(acc, 1.0 / static_cast<double>(terms.size()));
}

[[noreturn]] void rethrow_with_context(const std::string& ctx) {
  try {
    throw;
  } catch (const ParseError& e) {
    throw ParseError(ctx + e.what(), e.offset());
  } catch (const DimensionError& e) {
    throw DimensionError(ctx + e.what());
  } catch (const ContractError& e) {
    throw ContractError(ctx + e.what());
  } catch (const IoError& e) {
    throw IoError(ctx + e.what());
  } catch (const VersionError& e) {
    throw VersionError(ctx + e.what());
  }
}

}  // namespace

Model Model::init(const TrainConfig& cfg) {
  cfg.validate();
  const auto enc_cfg = cfg.encoder_config();
  auto rng_for = [&](Stream s) { return Rng(derive_seed(cfg.seed, s)); };
  Model m;
  Rng r1 = rng_for(rgb_stream), r2 = rng_for(thermal_stream), r3 = rng_for(mae_stream), r4 = rng_for(fusion_stream),
      r5 = rng_for(null_stream), r6 = rng_for(decoder_stream);
  m.rgb_encoder = VitEncoderParams::init(enc_cfg, r1);
  m.rgb_encoder.set_trainable(false);
  m.thermal_encoder = VitEncoderParams::init(enc_cfg, r2);
  apply_freeze_split(m.thermal_encoder, FreezeSplit{cfg.trainable_blocks});
  m.mae_decoder = MaeDecoderParams::init(enc_cfg, r3);
  set_requires_grad(m.mae_decoder, false);
  m.fusion = FusionParameters::init(cfg.fusion_config(), r4);
  m.rgb_null = normal_grid(enc_cfg.tokens(), cfg.dim, r5);
  m.thermal_null = normal_grid(enc_cfg.tokens(), cfg.dim, r5);
  m.decoder = FrozenDecoder::init(cfg.decoder_config(), r6);
  m.decoder.set_trainable(false);
  return m;
}

void Model::visit(const ParamVisitor& fn) {
  rgb_encoder.visit("rgb_encoder", fn);
  thermal_encoder.visit("thermal_encoder", fn);
  mae_decoder.visit("mae_decoder", fn);
  fusion.visit("fusion", fn);
  fn("null.rgb", rgb_null);
  fn("null.thermal", thermal_null);
  decoder.visit("decoder", fn);
}

std::vector<Sample> load_samples(const std::string& dir, const std::string& split) {
  const std::filesystem::path root(dir);
  std::vector<Sample> out;
  for (auto& item : load_split(dir, split)) {
    Sample s{item, read_image((root / item.rgb_path).string()), read_image((root / item.thermal_path).string())};
    if (s.rgb.channels != 3 || s.thermal.channels != 1) {
      throw ContractError("sample " + item.id + ": expected a 3-channel RGB and a 1-channel thermal image");
    }
    out.push_back(std::move(s));
  }
  return out;
}

ForwardResult forward_sample(const Model& model, const Sample& sample, ModalitySubset subset,
                             const ForwardOptions& opts) {
  ForwardResult out;
  out.rgb_present = subset != Modality::ir;
  out.thermal_present = subset != Modality::rgb;
  const auto& tokens = sample.item.question_tokens;
  const std::size_t max_prompt = model.decoder.config.max_len - model.rgb_encoder.config.tokens();
  if (tokens.empty() || tokens.size() > max_prompt) {
    throw DimensionError("prompt of " + std::to_string(tokens.size()) + " tokens; the decoder accepts 1 to " +
                         std::to_string(max_prompt));
  }
  if (out.rgb_present) {
    const bool masked = opts.mask_ratio && *opts.mask_ratio > 0.0;
    out.rgb_tokens = patchify_encode(masked ? block_mask_rgb(sample.rgb, *opts.mask_ratio, opts.mask_seed) : sample.rgb,
                                     model.rgb_encoder);
  } else {
    out.rgb_tokens = model.rgb_null;
  }
  out.thermal_tokens = out.thermal_present ? patchify_encode(replicate_channels(sample.thermal), model.thermal_encoder)
                                           : model.thermal_null;
  const Tensor prompt = embed_tokens(model.decoder, tokens);
  out.fusion = fuse(out.rgb_tokens, out.thermal_tokens, prompt, KeyMask::all(tokens.size()), model.fusion, opts.variant);
  out.logits = answer_logits(model.decoder, out.fusion.fused, tokens);
  return out;
}

std::string infer_answer(const Model& model, const Sample& sample, ModalitySubset subset,
                         const AblationFlags& variant) {
  ForwardOptions opts;
  opts.variant = variant;
  const Tensor logits = forward_sample(model, sample, subset, opts).logits;
  const auto& vocab = Vocabulary::standard();
  return logits.at(0, vocab.yes()) > logits.at(0, vocab.no()) ? "yes" : "no";
}

TrainingState TrainingState::create(const TrainConfig& cfg, Model model) {
  cfg.validate();
  TrainingState s{cfg, std::move(model), {}, {}, Rng(derive_seed(cfg.seed, 31)), 0};
  auto& enc = s.model.thermal_encoder;
  const FreezeSplit split{cfg.trainable_blocks};
  apply_freeze_split(enc, split);

  AdamWConfig base;
  base.weight_decay = cfg.weight_decay;
  base.beta1 = cfg.beta1;
  base.beta2 = cfg.beta2;
  base.eps = cfg.eps;
  base.warmup_steps = cfg.warmup_steps;
  AdamWConfig t = base, f = base;
  t.lr = cfg.lr_thermal;
  f.lr = cfg.lr_fusion;
  s.groups = {ParamGroup("thermal", t), ParamGroup("fusion", f)};
  auto add_to = [](ParamGroup& g) { return [&g](const std::string& n, Tensor& p) { g.add(n, p); }; };
  for (auto b : split.trainable(enc.blocks.size())) {
    enc.blocks[b].visit("thermal_encoder.blocks." + std::to_string(b), add_to(s.groups[0]));
  }
  s.model.fusion.visit("fusion", add_to(s.groups[1]));
  enc.final_norm.visit("thermal_encoder.final_norm", add_to(s.groups[1]));
  s.groups[1].add("null.rgb", s.model.rgb_null);
  s.groups[1].add("null.thermal", s.model.thermal_null);

  auto track = [&s](const std::string& n, Tensor& p) { s.registry.track(n, p); };
  s.model.rgb_encoder.visit("rgb_encoder", track);
  s.model.decoder.visit("decoder", track);
  enc.patch_embed.visit("thermal_encoder.patch_embed", track);
  track("thermal_encoder.pos_embed", enc.pos_embed);
  for (auto b : split.frozen(enc.blocks.size())) enc.blocks[b].visit("thermal_encoder.blocks." + std::to_string(b), track);
  return s;
}

LossBreakdown train_step(TrainingState& state, std::span<const Sample* const> batch) {
  const auto& cfg = state.config;
  const std::string ctx = "train step " + std::to_string(state.step + 1) + ": ";
  try {
    if (batch.empty()) throw ContractError("empty batch");
    const auto& vocab = Vocabulary::standard();
    prepare_gradients(state.groups);
    LossBreakdown parts;
    {
      Tape tape;
      std::vector<Tensor> lm, gate, align, p_rgb, p_thermal, p_prompt;
      for (const Sample* s : batch) {
        ForwardOptions opts;
        opts.variant = cfg.ablation();
        if (cfg.mask_rgb) opts.mask_ratio = cfg.mask_ratio;
        opts.mask_seed = state.rng();
        const auto fr = forward_sample(state.model, *s, s->item.modality, opts);
        lm.push_back(lm_loss(fr.logits, {vocab.id(s->item.answer)}));
        gate.push_back(gate_entropy_loss(fr.fusion.gates));
        if (fr.rgb_present && fr.thermal_present) {
          const Tensor r = cfg.align_clean_rgb ? patchify_encode(s->rgb, state.model.rgb_encoder) : fr.rgb_tokens;
          align.push_back(align_loss(r, fr.thermal_tokens));
          p_rgb.push_back(row(mean_pool(r)));
          p_thermal.push_back(row(mean_pool(fr.thermal_tokens)));
          p_prompt.push_back(row(masked_mean_pool(fr.fusion.prompt_proj, KeyMask::all(fr.fusion.prompt_proj.rows()))));
        }
      }
      const Tensor align_term = align.empty() ? Tensor::scalar(0.0) : mean_of(align);
      const Tensor contr_term = p_rgb.empty() ? Tensor::scalar(0.0)
                                              : contrastive_loss(concat_rows(p_rgb), concat_rows(p_thermal),
                                                                 concat_rows(p_prompt), cfg.tau, cfg.symmetric_nce);
      parts = total_loss(mean_of(lm), align_term, contr_term, mean_of(gate), cfg.loss_weights());
      tape.backward(parts.total);
    }
    clip_grad_norm(state.groups, cfg.grad_clip);
    adamw_step(state.groups);
    ++state.step;
    return parts;
  } catch (const Error&) {
    rethrow_with_context(ctx);
  }
}

std::vector<StepRecord> train(TrainingState& state, const std::vector<Sample>& samples, const MetricsSink& sink) {
  if (samples.empty()) throw ContractError("train: no samples");
  const std::size_t bs = state.config.batch_size;
  std::vector<std::size_t> order(samples.size());
  std::vector<StepRecord> history;
  if (state.config.cosine_decay) {
    const std::uint64_t total = state.config.epochs * ((samples.size() + bs - 1) / bs);
    for (auto& g : state.groups) {
      g.config.decay_steps = total > g.config.warmup_steps ? total - g.config.warmup_steps : 1;
    }
  }
  for (std::size_t epoch = 0; epoch < state.config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), state.rng);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      std::vector<const Sample*> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + bs); ++i) batch.push_back(&samples[order[i]]);
      const auto b = train_step(state, batch);
      const StepRecord r{state.step, b.lm.item(), b.align.item(), b.contr.item(), b.gate.item(), b.total.item()};
      history.push_back(r);
      if (sink) sink(r);
    }
  }
  return history;
}

namespace {

std::vector<double> run_mae(VitEncoderParams& enc, MaeDecoderParams& dec, const std::vector<ImagePlane>& images,
                            const TrainConfig& cfg, std::uint64_t seed) {
  enc.set_trainable(true);
  set_requires_grad(dec, true);
  std::vector<ParamGroup> groups{ParamGroup("mae", AdamWConfig{cfg.mae_lr, 0.0, cfg.beta1, cfg.beta2, cfg.eps})};
  enc.visit("encoder", [&](const std::string& n, Tensor& t) { groups[0].add(n, t); });
  dec.visit("mae_decoder", [&](const std::string& n, Tensor& t) { groups[0].add(n, t); });

  Rng rng(seed);
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;
  const std::size_t n = enc.config.tokens();
  std::vector<double> history;
  for (std::size_t step = 0; step < cfg.mae_steps; ++step) {
    prepare_gradients(groups);
    {
      Tape tape;
      std::vector<Tensor> losses;
      for (std::size_t b = 0; b < cfg.mae_batch; ++b) {
        if (cursor == order.size()) {
          std::shuffle(order.begin(), order.end(), rng);
          cursor = 0;
        }
        const auto mask = sample_mae_mask(n, cfg.mae_ratio, rng());
        losses.push_back(mae_forward_loss(images[order[cursor++]], enc, dec, mask));
      }
      const Tensor loss = mean_of(losses);
      history.push_back(loss.item());
      tape.backward(loss);
    }
    adamw_step(groups);
  }
  set_requires_grad(dec, false);
  return history;
}

}  // namespace

std::vector<double> pretrain_mae(Model& model, const std::vector<ImagePlane>& thermal_images, const TrainConfig& cfg) {
  if (thermal_images.empty()) throw ContractError("pretrain_mae: no thermal images");
  std::vector<ImagePlane> inputs;
  inputs.reserve(thermal_images.size());
  for (const auto& img : thermal_images) inputs.push_back(replicate_channels(img));
  auto history = run_mae(model.thermal_encoder, model.mae_decoder, inputs, cfg, derive_seed(cfg.seed, 41));
  apply_freeze_split(model.thermal_encoder, FreezeSplit{cfg.trainable_blocks});
  return history;
}

std::vector<double> pretrain_rgb_encoder(Model& model, const std::vector<ImagePlane>& rgb_images,
                                         const TrainConfig& cfg) {
  if (rgb_images.empty()) throw ContractError("pretrain_rgb_encoder: no RGB images");
  for (const auto& img : rgb_images) {
    if (img.channels != 3) throw ContractError("pretrain_rgb_encoder: expected 3-channel images");
  }
  Rng rng(derive_seed(cfg.seed, 43));
  auto dec = MaeDecoderParams::init(model.rgb_encoder.config, rng);
  auto history = run_mae(model.rgb_encoder, dec, rgb_images, cfg, derive_seed(cfg.seed, 44));
  model.rgb_encoder.set_trainable(false);
  return history;
}

std::vector<double> pretrain_language_model(Model& model, const TrainConfig& cfg) {
  const auto corpus = build_decoder_corpus(cfg.lm_questions, model.rgb_encoder.config.tokens(), derive_seed(cfg.seed, 51));
  DecoderPretrainOptions opts;
  opts.steps = cfg.lm_steps;
  opts.batch = cfg.lm_batch;
  opts.lr = cfg.lm_lr;
  opts.seed = derive_seed(cfg.seed, 52);
  const auto& enc = model.rgb_encoder.config;
  for (std::size_t i = 0; i < cfg.lm_backgrounds; ++i) {
    const auto q = make_scene_question(i, derive_seed(cfg.seed, 53), enc.image_height, enc.image_width);
    opts.backgrounds.push_back(patchify_encode(generate_pair(q.scene).rgb, model.rgb_encoder).detach());
  }
  return pretrain_decoder(model.decoder, corpus, opts);
}

EvalResult evaluate(const Model& model, const std::vector<Sample>& samples, const AblationFlags& variant,
                    std::optional<Modality> filter) {
  EvalResult out;
  std::vector<QaItem> gold;
  for (const auto& s : samples) {
    if (filter && s.item.modality != *filter) continue;
    out.predictions[s.item.id] = infer_answer(model, s, s.item.modality, variant);
    gold.push_back(s.item);
  }
  out.report = score_benchmark(out.predictions, gold);
  return out;
}

std::string step_record_json(const StepRecord& r) {
  return nlohmann::json{{"step", r.step}, {"lm", r.lm},     {"align", r.align},
                        {"contr", r.contr}, {"gate", r.gate}, {"total", r.total}}
      .dump();
}

}  // namespace spectrafuse
