// SPDX-License-Identifier: Apache-2.0
#include "spectrafuse/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include <json.hpp>

#include "spectrafuse/errors.hpp"

namespace spectrafuse {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void emit(const LineSink& sink, const json& j) {
  if (sink) sink(j.dump());
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory '" + dir + "'");
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("failed writing '" + path + "'");
}

// Fresh model, or one restored from a bundle. Optimizer state in the
// bundle is ignored here.
Model load_model(const TrainConfig& cfg, const std::string& path) {
  Model model = Model::init(cfg);
  if (!path.empty()) restore_model(load_checkpoint(path), cfg, model);
  return model;
}

std::vector<double> loss_tail(const std::vector<double>& h) {
  if (h.empty()) return {};
  return {h.front(), h.back()};
}

}  // namespace

const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names{
      "full",          "no-text-attention", "no-rgb-attention", "no-gated-residual", "gate-zero",
      "no-align-loss", "no-contr-loss",     "no-gate-loss",     "no-masking",        "nl-2",
      "nl-6"};
  return names;
}

void apply_variant(TrainConfig& cfg, const std::string& variant) {
  if (variant == "full" || variant == "gate-zero") {
  } else if (variant == "no-text-attention") {
    cfg.text_attention = false;
  } else if (variant == "no-rgb-attention") {
    cfg.rgb_attention = false;
  } else if (variant == "no-gated-residual") {
    cfg.gated_residual = false;
  } else if (variant == "no-align-loss") {
    cfg.lambda_align = 0.0;
  } else if (variant == "no-contr-loss") {
    cfg.lambda_contr = 0.0;
  } else if (variant == "no-gate-loss") {
    cfg.lambda_gate = 0.0;
  } else if (variant == "no-masking") {
    cfg.mask_rgb = false;
  } else if (variant == "nl-2") {
    cfg.trainable_blocks = std::min<std::size_t>(2, cfg.encoder_blocks);
  } else if (variant == "nl-6") {
    cfg.trainable_blocks = std::min<std::size_t>(6, cfg.encoder_blocks);
  } else {
    std::string known;
    for (const auto& n : variant_names()) known += (known.empty() ? "" : ", ") + n;
    throw ContractError("unknown variant '" + variant + "' (known: " + known + ")");
  }
}

AblationFlags variant_flags(const TrainConfig& cfg, const std::string& variant) {
  TrainConfig c = cfg;
  apply_variant(c, variant);
  AblationFlags flags = c.ablation();
  if (variant == "gate-zero") flags.gate_override = 0.0;
  return flags;
}

Manifest run_gen_data(const TrainConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  DatasetOptions opts;
  opts.scenes = cfg.scenes;
  opts.eval_fraction = cfg.eval_fraction;
  opts.seed = cfg.seed;
  opts.height = opts.width = cfg.image_size;
  return emit_dataset(opts, out_dir);
}

void run_pretrain_mae(const TrainConfig& cfg, const std::string& data_dir, const std::string& out_path,
                      const LineSink& sink) {
  cfg.validate();
  const auto samples = load_samples(data_dir, "train");
  if (samples.empty()) throw ContractError("pretrain-mae: the training split is empty");
  std::vector<ImagePlane> rgb, thermal;
  for (std::size_t i = 0; i < std::min(cfg.mae_images, samples.size()); ++i) {
    rgb.push_back(samples[i].rgb);
    thermal.push_back(samples[i].thermal);
  }
  Model model = Model::init(cfg);
  if (cfg.pretrain_rgb) {
    const auto h = pretrain_rgb_encoder(model, rgb, cfg);
    emit(sink, {{"stage", "mae-rgb"}, {"images", rgb.size()}, {"loss", loss_tail(h)}});
  }
  const auto h = pretrain_mae(model, thermal, cfg);
  emit(sink, {{"stage", "mae-thermal"}, {"images", thermal.size()}, {"loss", loss_tail(h)}});
  save_checkpoint(out_path, capture_model(cfg, model));
}

void run_pretrain_lm(const TrainConfig& cfg, const std::string& init_path, const std::string& out_path,
                     const LineSink& sink) {
  cfg.validate();
  Model model = load_model(cfg, init_path);
  const auto h = pretrain_language_model(model, cfg);
  double memorised = 0.0;
  for (const auto& s : memorized_sentences()) memorised = std::max(memorised, sentence_loss(model.decoder, s));
  emit(sink, {{"stage", "lm"}, {"loss", loss_tail(h)}, {"memorized_ce", memorised}});
  save_checkpoint(out_path, capture_model(cfg, model));
}

std::uint64_t run_train(const TrainConfig& cfg, const std::string& data_dir, const std::string& init_path,
                        const std::string& out_dir, const LineSink& sink) {
  cfg.validate();
  ensure_dir(out_dir);
  const auto samples = load_samples(data_dir, "train");
  Model model = Model::init(cfg);
  std::optional<CheckpointBundle> bundle;
  if (!init_path.empty()) {
    bundle = load_checkpoint(init_path);
    restore_model(*bundle, cfg, model);
  }
  auto state = TrainingState::create(cfg, std::move(model));
  if (bundle && !bundle->groups.empty()) restore_state(*bundle, state);

  std::ofstream metrics(fs::path(out_dir) / "metrics.jsonl", std::ios::trunc);
  if (!metrics) throw IoError("cannot open metrics file in '" + out_dir + "'");
  train(state, samples, [&](const StepRecord& r) {
    const auto line = step_record_json(r);
    metrics << line << '\n';
    if (sink) sink(line);
  });
  const auto drift = state.registry.verify();
  if (!drift.empty()) throw ContractError("frozen parameter changed during training: " + drift.front());
  save_checkpoint((fs::path(out_dir) / "model.tvlb").string(), capture_state(state));
  return state.step;
}

std::string run_eval(const TrainConfig& cfg, const std::string& checkpoint_path, const std::string& data_dir,
                     std::optional<Modality> subset, const std::string& variant) {
  cfg.validate();
  const Model model = load_model(cfg, checkpoint_path);
  const auto samples = load_samples(data_dir, "eval");
  return evaluate(model, samples, variant_flags(cfg, variant), subset).report.to_json();
}

namespace {

struct Probe {
  std::string name;
  Tensor param;
};

GradCheckResult central_differences(const std::string& component, const std::function<Tensor()>& loss_fn,
                                    std::vector<Probe> params, std::size_t max_per_param, Rng& rng) {
  for (auto& p : params) p.param.zero_grad();
  {
    Tape tape;
    tape.backward(loss_fn());
  }
  GradCheckResult out;
  out.component = component;
  // Five-point stencil: O(h^4) truncation lets h stay large enough that
  // roundoff in O(100) losses does not dominate.
  const double h = 1e-3;
  for (auto& p : params) {
    const std::vector<double> analytic(p.param.grad().begin(), p.param.grad().end());
    p.param.clear_grad();
    std::vector<std::size_t> idx(p.param.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(idx.size(), max_per_param));
    auto data = p.param.mutable_data();
    for (auto i : idx) {
      const double orig = data[i];
      auto at = [&](double offset) {
        data[i] = orig + offset;
        return loss_fn().item();
      };
      const double near = at(h) - at(-h), far = at(2 * h) - at(-2 * h);
      data[i] = orig;
      const double numeric = (8 * near - far) / (12 * h);
      const double diff = std::abs(numeric - analytic[i]);
      const double rel = diff / std::max({std::abs(numeric), std::abs(analytic[i]), 1e-300});
      ++out.checked;
      out.max_abs_grad = std::max(out.max_abs_grad, std::abs(analytic[i]));
      if (diff > 1e-8 && rel >= 1e-4) {
        ++out.failures;
      }
      if (diff > 1e-8 && rel > out.max_rel_err) {
        out.max_rel_err = rel;
        char buf[96];
        std::snprintf(buf, sizeof buf, "] analytic %.9e numeric %.9e", analytic[i], numeric);
        out.worst = p.name + "[" + std::to_string(i) + buf;
      }
    }
  }
  return out;
}

Tensor random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = dist(rng);
  return Tensor({rows, cols}, std::move(v));
}

void randomise(Tensor& t, Rng& rng, double scale) {
  std::normal_distribution<double> dist(0.0, scale);
  for (auto& x : t.mutable_data()) x = dist(rng);
}

void set_trainable(auto& params, bool on) {
  params.visit("", [on](const std::string&, Tensor& t) { t.set_requires_grad(on); });
}

std::vector<Probe> collect(auto& params, const std::string& prefix) {
  std::vector<Probe> out;
  params.visit(prefix, [&](const std::string& n, Tensor& t) { out.push_back({n, t}); });
  return out;
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck(const TrainConfig& cfg, std::size_t max_per_param, const LineSink& sink) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, 71));
  Model model = Model::init(cfg);
  const std::size_t n = model.rgb_encoder.config.tokens(), d = cfg.dim;
  std::vector<GradCheckResult> results;
  auto report = [&](GradCheckResult r) {
    emit(sink, {{"component", r.component},
                {"checked", r.checked},
                {"failures", r.failures},
                {"max_rel_err", r.max_rel_err},
                {"max_abs_grad", r.max_abs_grad},
                {"worst", r.worst}});
    results.push_back(std::move(r));
  };

  {
    auto& f = model.fusion;
    randomise(f.mlp_r.fc2.weight, rng, 0.1);
    const Tensor rgb = random_matrix(n, d, rng), thermal = random_matrix(n, d, rng);
    const Tensor prompt = random_matrix(6, d, rng), weights = random_matrix(n, d, rng);
    const auto mask = KeyMask::all(6);
    auto loss = [&] {
      const auto out = fuse(rgb, thermal, prompt, mask, f, AblationFlags{});
      return add(sum(mul(out.fused, weights)), gate_entropy_loss(out.gates));
    };
    report(central_differences("fusion", loss, collect(f, "fusion"), max_per_param, rng));
  }
  {
    auto& enc = model.thermal_encoder;
    ImagePlane img = ImagePlane::filled(cfg.image_size, cfg.image_size, 1, 0.3);
    for (auto& p : img.pixels) p = uniform(rng, 0.0, 1.0);
    const auto input = replicate_channels(img);
    const Tensor target = random_matrix(n, d, rng), weights = random_matrix(n, d, rng);
    std::vector<Probe> params;
    for (auto b : FreezeSplit{cfg.trainable_blocks}.trainable(enc.blocks.size())) {
      for (auto& p : collect(enc.blocks[b], "thermal_encoder.blocks." + std::to_string(b))) params.push_back(p);
    }
    for (auto& p : collect(enc.final_norm, "thermal_encoder.final_norm")) params.push_back(p);
    auto loss = [&] {
      const Tensor t = patchify_encode(input, enc);
      return add(align_loss(target, t), sum(mul(t, weights)));
    };
    report(central_differences("thermal_encoder", loss, params, max_per_param, rng));
  }
  {
    auto& dec = model.mae_decoder;
    set_trainable(dec, true);
    ImagePlane img = ImagePlane::filled(cfg.image_size, cfg.image_size, 3, 0.3);
    for (auto& p : img.pixels) p = uniform(rng, 0.0, 1.0);
    const auto mask = sample_mae_mask(n, cfg.mae_ratio, rng());
    auto loss = [&] { return mae_forward_loss(img, model.thermal_encoder, dec, mask); };
    report(central_differences("mae_decoder", loss, collect(dec, "mae_decoder"), max_per_param, rng));
    set_trainable(dec, false);
  }
  {
    auto& dec = model.decoder;
    dec.set_trainable(true);
    const auto& vocab = Vocabulary::standard();
    CorpusItem item{std::vector<bool>(n, false), vocab.encode("<bos> is there any obj ? yes <eos>")};
    item.object_slots[1] = true;
    const Tensor slots = corpus_slots(dec, item, 1.0, rng).detach();
    auto loss = [&] { return corpus_loss(dec, item, &slots); };
    report(central_differences("decoder", loss, collect(dec, "decoder"), max_per_param, rng));
    dec.set_trainable(false);
  }
  return results;
}

std::string run_ablate(const TrainConfig& cfg, const std::string& data_dir, const std::string& init_path,
                       const std::string& variant, const std::string& out_dir, const LineSink& sink) {
  cfg.validate();
  ensure_dir(out_dir);
  json summary{{"variant", variant}};
  const auto eval_samples = load_samples(data_dir, "eval");
  for (const std::string& name : {std::string("full"), variant}) {
    if (name == "full" && variant == "full" && summary.contains("full")) continue;
    TrainConfig c = cfg;
    apply_variant(c, name);
    const auto dir = (fs::path(out_dir) / name).string();
    run_train(c, data_dir, init_path, dir, sink);
    const Model model = load_model(c, (fs::path(dir) / "model.tvlb").string());
    const auto report = evaluate(model, eval_samples, variant_flags(c, name)).report;
    summary[name] = json::parse(report.to_json());
    emit(sink, {{"stage", "ablate"}, {"variant", name}, {"overall", report.overall}});
  }
  const auto text = summary.dump(2);
  write_text((fs::path(out_dir) / "ablation.json").string(), text + "\n");
  return text;
}

}  // namespace spectrafuse
