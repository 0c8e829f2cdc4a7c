// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
// criterion fails.
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "oracles.hpp"
#include "spectrafuse/checkpoint.hpp"
#include "spectrafuse/errors.hpp"
#include "spectrafuse/runner.hpp"
#include "test_support.hpp"

namespace sf = spectrafuse;
namespace fs = std::filesystem;
using nlohmann::json;
using sf::Tensor;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
  std::printf("%s  %-28s %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

// Runs one criterion; an exception counts as a failure.
void criterion(const std::string& name, const std::function<std::pair<bool, std::string>()>& body) {
  try {
    const auto [pass, detail] = body();
    report(name, pass, detail);
  } catch (const std::exception& e) {
    report(name, false, std::string("exception: ") + e.what());
  }
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::vector<double> vals(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

oracle::Mat mat_of(const Tensor& t) { return oracle::from_flat(vals(t), t.rows(), t.cols()); }

oracle::Affine affine_of(const sf::LinearParams& p) {
  return {oracle::from_flat(vals(p.weight), p.weight.rows(), p.weight.cols()), vals(p.bias)};
}

std::map<std::string, std::uint64_t> digests(sf::Model& m) {
  std::map<std::string, std::uint64_t> out;
  m.visit([&](const std::string& n, Tensor& t) { out[n] = sf::tensor_digest(t); });
  return out;
}

bool starts_with(const std::string& s, const std::string& p) { return s.rfind(p, 0) == 0; }

void randomize(sf::FusionParameters& p, sf::Rng& rng) {
  p.visit("fusion", [&](const std::string& name, Tensor& t) {
    const bool gamma = name.ends_with("gamma");
    for (auto& v : t.mutable_data()) v = gamma ? sf::uniform(rng, 0.5, 1.5) : sf::uniform(rng, -0.8, 0.8);
  });
}

// ---------------------------------------------------------------------------

void gradient_suite(const sf::TrainConfig& cfg) {
  criterion("gradient-check", [&] {
    const auto t0 = Clock::now();
    const auto results = sf::run_gradcheck(cfg, 128);
    const double secs = seconds_since(t0);
    std::size_t checked = 0, failures = 0;
    double worst = 0.0;
    std::string parts;
    for (const auto& r : results) {
      checked += r.checked;
      failures += r.failures;
      worst = std::max(worst, r.max_rel_err);
      parts += (parts.empty() ? "" : ",") + r.component;
    }
    const bool pass = failures == 0 && results.size() == 4 && checked > 0 && secs < 300.0;
    return std::pair{pass, fmt("%zu entries over [%s], %zu failures, max rel %.2e, %.1fs (limit 1e-4, 300s)",
                               checked, parts.c_str(), failures, worst, secs)};
  });
}

void fusion_identity() {
  criterion("fusion-identity", [] {
    sf::Rng rng(101);
    const sf::FusionConfig cfg;  // toy widths
    std::size_t exact_zero_mlp = 0, exact_gate = 0;
    for (int i = 0; i < 100; ++i) {
      auto params = sf::FusionParameters::init(cfg, rng);
      randomize(params, rng);
      const Tensor r = sf::testing::random_tensor({16, cfg.dim}, rng, -2, 2, false);
      const Tensor t = sf::testing::random_tensor({16, cfg.dim}, rng, -2, 2, false);
      const Tensor p = sf::testing::random_tensor({5, cfg.prompt_dim}, rng, -2, 2, false);
      sf::AblationFlags zero_gate;
      zero_gate.gate_override = 0.0;
      exact_gate += vals(sf::fuse(r, t, p, sf::KeyMask::all(5), params, zero_gate).fused) == vals(r);
      for (auto& v : params.mlp_r.fc2.weight.mutable_data()) v = 0.0;
      for (auto& v : params.mlp_r.fc2.bias.mutable_data()) v = 0.0;
      exact_zero_mlp += vals(sf::fuse(r, t, p, sf::KeyMask::all(5), params).fused) == vals(r);
    }
    return std::pair{exact_zero_mlp == 100 && exact_gate == 100,
                     fmt("bit-exact R: zero residual MLP %zu/100, gate 0 %zu/100", exact_zero_mlp, exact_gate)};
  });
}

void loss_closed_forms() {
  criterion("loss-closed-forms", [] {
    const std::size_t V = 64, d = 64;
    const double ce = sf::lm_loss(Tensor::zeros({3, V}), {1, 7, 63}).item();
    const Tensor x({2, 3}, {0.3, -0.2, 0.9, 0.3, -0.2, 0.9});
    const double nce = sf::info_nce(x, x, 0.07).item();
    const double gate = sf::gate_entropy_loss(Tensor::full({16, 1}, 0.5)).item();
    sf::Rng rng(102);
    const Tensor a = sf::testing::random_tensor({16, d}, rng, -1, 1, false);
    const double align = sf::align_loss(sf::add(a, Tensor::full({16, d}, 1.0)), a).item();
    const double e_ce = std::abs(ce - std::log(double(V)));
    const double e_nce = std::abs(nce - std::numbers::ln2);
    const double e_gate = std::abs(gate + std::numbers::ln2);
    const double e_align = std::abs(align - double(d));
    const bool pass = e_ce < 1e-12 && e_nce < 1e-9 && e_gate < 1e-12 && e_align < 1e-9;
    return std::pair{pass, fmt("|CE-logV| %.1e, |NCE-log2| %.1e, |Lgate+log2| %.1e, |align-d| %.1e", e_ce, e_nce,
                               e_gate, e_align)};
  });
}

void oracle_equivalence() {
  criterion("oracle-equivalence", [] {
    double fixture_err = 0.0, mha_err = 0.0, nce_err = 0.0;
    {
      const auto store = oracle::read_fixture(std::string(SPECTRAFUSE_FIXTURE_DIR) + "/fusion_n1_d2.txt");
      sf::Rng rng(0);
      auto params = sf::FusionParameters::init(sf::FusionConfig{2, 2, 1, 2}, rng);
      params.visit("fusion", [&](const std::string& name, Tensor& t) {
        const auto& flat = store.values.at(name).second;
        if (flat.size() != t.numel()) throw sf::DimensionError("fixture entry " + name + " has the wrong size");
        std::copy(flat.begin(), flat.end(), t.mutable_data().begin());
      });
      auto input = [&](const std::string& n) { return Tensor({1, 2}, store.vec("input." + n)); };
      const auto out = sf::fuse(input("rgb"), input("thermal"), input("prompt"), sf::KeyMask::all(1), params);
      const auto ref = oracle::fusion(store.mat("input.rgb"), store.mat("input.thermal"), store.mat("input.prompt"),
                                      {true}, store, 1);
      for (std::size_t j = 0; j < 2; ++j) fixture_err = std::max(fixture_err, std::abs(out.fused.at(0, j) - ref.fused[0][j]));
      fixture_err = std::max(fixture_err, std::abs(out.gates.at(0, 0) - ref.gates[0]));
    }
    sf::Rng rng(103);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t nq = 1 + rng() % 6, nk = 1 + rng() % 8, heads = trial % 2 ? 2 : 4, d = 16;
      auto p = sf::MhaParams::init(d, heads, rng);
      p.visit("mha", [&](const std::string&, Tensor& t) {
        for (auto& v : t.mutable_data()) v = sf::uniform(rng, -0.7, 0.7);
      });
      const Tensor q = sf::testing::random_tensor({nq, d}, rng, -1, 1, false);
      const Tensor k = sf::testing::random_tensor({nk, d}, rng, -1, 1, false);
      const Tensor v = sf::testing::random_tensor({nk, d}, rng, -1, 1, false);
      std::vector<bool> mask(nk, true);
      for (std::size_t j = 1; j < nk; ++j) mask[j] = rng() % 3 != 0;
      sf::AttentionOptions opts;
      opts.key_mask = sf::KeyMask{mask};
      const Tensor y = sf::multi_head_attention(q, k, v, p, opts);
      const auto ref = oracle::attention(mat_of(q), mat_of(k), mat_of(v), affine_of(p.query), affine_of(p.key),
                                         affine_of(p.value), affine_of(p.out), heads, mask);
      for (std::size_t i = 0; i < nq; ++i)
        for (std::size_t j = 0; j < d; ++j) mha_err = std::max(mha_err, std::abs(y.at(i, j) - ref[i][j]));
    }
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t b = 2 + rng() % 7, d = 3 + rng() % 12;
      const double tau = sf::uniform(rng, 0.05, 1.0);
      const Tensor a = sf::testing::random_tensor({b, d}, rng, -1, 1, false);
      const Tensor c = sf::testing::random_tensor({b, d}, rng, -1, 1, false);
      const bool symmetric = trial % 2 == 0;
      nce_err = std::max(nce_err, std::abs(sf::info_nce(a, c, tau, symmetric).item() -
                                           oracle::info_nce(mat_of(a), mat_of(c), tau, symmetric)));
    }
    const bool pass = fixture_err < 1e-10 && mha_err < 1e-10 && nce_err < 1e-10;
    return std::pair{pass, fmt("fuse N=1,d=2 %.1e; MHA x20 %.1e; InfoNCE x20 %.1e (limit 1e-10)", fixture_err,
                               mha_err, nce_err)};
  });
}

void masking_exactness() {
  criterion("masking-exactness", [] {
    const auto img = sf::ImagePlane::filled(224, 224, 3, 0.7);
    const auto out = sf::block_mask_rgb(img, 0.10, 17);
    std::size_t masked = 0;
    for (std::size_t p = 0; p < 224 * 224; ++p) {
      masked += out.pixels[3 * p] == 0.0 && out.pixels[3 * p + 1] == 0.0 && out.pixels[3 * p + 2] == 0.0;
    }
    const auto mae = sf::sample_mae_mask(256, 0.75, 5);

    sf::Rng rng(104);
    const Tensor pred = sf::testing::random_tensor({16, 588}, rng, 0, 1, false);
    Tensor target = sf::testing::random_tensor({16, 588}, rng, 0, 1, false);
    const auto m = sf::sample_mae_mask(16, 0.75, 6);
    const double before = sf::masked_patch_mse(pred, target, m).item();
    for (auto i : m.visible)
      for (std::size_t j = 0; j < 588; ++j) target.mutable_data()[i * 588 + j] += sf::uniform(rng, -5, 5);
    const bool invariant = sf::masked_patch_mse(pred, target, m).item() == before;
    const bool pass = masked == 5018 && mae.masked.size() == 192 && invariant;
    return std::pair{pass, fmt("224^2 at 0.1 -> %zu px (5018); 256 at 0.75 -> %zu (192); unmasked perturbation %s",
                               masked, mae.masked.size(), invariant ? "ignored" : "CHANGES LOSS")};
  });
}

void scoring_fixture() {
  criterion("scoring-fixture", [] {
    std::vector<sf::QaItem> gold;
    std::map<std::string, std::string> pred;
    auto add = [&](sf::Modality m, int count, int correct, const std::string& tag) {
      for (int i = 0; i < count; ++i) {
        sf::QaItem q;
        q.id = tag + std::to_string(i);
        q.modality = m;
        q.answer = "yes";
        q.question = "is there any person ?";
        gold.push_back(q);
        pred[q.id] = i < correct ? "yes" : "no";
      }
    };
    add(sf::Modality::rgb, 2, 2, "r");
    add(sf::Modality::ir, 3, 0, "i");
    add(sf::Modality::rgb_ir, 5, 3, "b");
    const auto r = sf::score_benchmark(pred, gold);
    return std::pair{r.overall == 0.5, fmt("counts (2,3,5), accuracies (1, 0, 0.6) -> overall %.17g", r.overall)};
  });
}

// ---------------------------------------------------------------------------

struct Pipeline {
  sf::TrainConfig cfg;
  fs::path root;
  std::string data, mae, lm, full_dir, ablated_dir;
  std::vector<double> mae_loss;
  double mae_seconds = 0.0;
  bool trained = false;
};

double subset_accuracy(const std::string& report_json, const std::string& subset) {
  return json::parse(report_json).at("subsets").at(subset).at("accuracy").get<double>();
}

void end_to_end(Pipeline& p) {
  const auto t0 = Clock::now();
  std::size_t train_samples = 0;
  double full_ir = -1, gate0_ir = -1;
  criterion("mae-pretraining", [&] {
    p.data = (p.root / "data").string();
    const auto manifest = sf::run_gen_data(p.cfg, p.data);
    for (const auto& [tag, c] : manifest.splits.at("train")) train_samples += c.items;
    p.mae = (p.root / "mae.tvlb").string();
    const auto ts = Clock::now();
    json thermal;
    sf::run_pretrain_mae(p.cfg, p.data, p.mae, [&](const std::string& line) {
      const auto j = json::parse(line);
      if (j.at("stage") == "mae-thermal") thermal = j;
    });
    p.mae_seconds = seconds_since(ts);
    const double first = thermal.at("loss").at(0), last = thermal.at("loss").at(1);
    const bool pass = p.cfg.mae_steps >= 300 && thermal.at("images") == 64 && last < 0.5 * first &&
                      p.mae_seconds < 600.0;
    return std::pair{pass, fmt("%zu steps on %d images: masked MSE %.3f -> %.3f (%.1f%%), %.0fs incl. RGB tower "
                               "(limits 50%%, 600s)",
                               p.cfg.mae_steps, thermal.at("images").get<int>(), first, last, 100.0 * last / first,
                               p.mae_seconds)};
  });

  criterion("end-to-end", [&] {
    p.lm = (p.root / "lm.tvlb").string();
    sf::run_pretrain_lm(p.cfg, p.mae, p.lm);
    p.full_dir = (p.root / "full").string();
    sf::run_train(p.cfg, p.data, p.lm, p.full_dir);
    const auto ckpt = (fs::path(p.full_dir) / "model.tvlb").string();
    full_ir = subset_accuracy(sf::run_eval(p.cfg, ckpt, p.data, sf::Modality::ir, "full"), "ir");
    gate0_ir = subset_accuracy(sf::run_eval(p.cfg, ckpt, p.data, sf::Modality::ir, "gate-zero"), "ir");
    p.trained = true;
    const double secs = seconds_since(t0);
    const bool pass = train_samples >= 2000 && secs <= 3600.0 && full_ir >= 0.85 && gate0_ir <= 0.60;
    return std::pair{pass, fmt("%zu train samples, %.0fs; ir accuracy full %.3f (>=0.85), gate 0 %.3f (<=0.60)",
                               train_samples, secs, full_ir, gate0_ir)};
  });
}

void freeze_contract(const Pipeline& p) {
  criterion("freeze-contract", [&] {
    if (p.lm.empty() || !fs::exists(p.lm)) throw sf::IoError("pretrained bundle unavailable");
    auto model = sf::Model::init(p.cfg);
    sf::restore_model(sf::load_checkpoint(p.lm), p.cfg, model);
    auto state = sf::TrainingState::create(p.cfg, std::move(model));
    const auto before = digests(state.model);
    const auto samples = sf::load_samples(p.data, "train");
    const std::size_t steps = 500, bs = p.cfg.batch_size;
    for (std::size_t s = 0; s < steps; ++s) {
      std::vector<const sf::Sample*> batch;
      for (std::size_t i = 0; i < bs; ++i) batch.push_back(&samples[(s * bs + i) % samples.size()]);
      sf::train_step(state, batch);
    }
    const auto after = digests(state.model);
    const std::size_t blocks = p.cfg.encoder_blocks, first = blocks - p.cfg.trainable_blocks;
    std::size_t frozen_changed = 0, fusion_changed = 0, fusion_total = 0;
    std::vector<bool> block_changed(blocks, false);
    bool lnt_changed = false;
    std::string offender;
    for (const auto& [name, d] : before) {
      const bool changed = after.at(name) != d;
      if (starts_with(name, "fusion.")) {
        ++fusion_total;
        fusion_changed += changed;
        continue;
      }
      if (starts_with(name, "thermal_encoder.final_norm")) {
        lnt_changed |= changed;
        continue;
      }
      bool trainable_block = false;
      for (std::size_t b = 0; b < blocks; ++b) {
        if (starts_with(name, "thermal_encoder.blocks." + std::to_string(b) + ".")) {
          if (changed) block_changed[b] = true;
          trainable_block = b >= first;
        }
      }
      if (trainable_block || starts_with(name, "null.")) continue;
      if (changed) {
        ++frozen_changed;
        if (offender.empty()) offender = name;
      }
    }
    std::size_t changed_blocks = 0, early_changed = 0;
    for (std::size_t b = 0; b < blocks; ++b) {
      changed_blocks += block_changed[b];
      if (b < first) early_changed += block_changed[b];
    }
    const bool pass = frozen_changed == 0 && early_changed == 0 && changed_blocks == p.cfg.trainable_blocks &&
                      lnt_changed && fusion_changed > 0 && state.registry.verify().empty();
    return std::pair{pass,
                     fmt("%zu steps: frozen tensors changed %zu%s%s; thermal blocks changed %zu (last %zu), early %zu; "
                         "LN_T %s; fusion tensors changed %zu/%zu",
                         steps, frozen_changed, offender.empty() ? "" : " e.g. ", offender.c_str(), changed_blocks,
                         p.cfg.trainable_blocks, early_changed, lnt_changed ? "changed" : "unchanged", fusion_changed,
                         fusion_total)};
  });
}

void ablation_direction(Pipeline& p) {
  criterion("ablation-text-attention", [&] {
    if (!p.trained) throw sf::ContractError("full model unavailable");
    sf::TrainConfig c = p.cfg;
    sf::apply_variant(c, "no-text-attention");
    p.ablated_dir = (p.root / "no-text-attention").string();
    sf::run_train(c, p.data, p.lm, p.ablated_dir);
    const double full = subset_accuracy(
        sf::run_eval(p.cfg, (fs::path(p.full_dir) / "model.tvlb").string(), p.data, sf::Modality::rgb_ir, "full"),
        "rgb+ir");
    const double ablated = subset_accuracy(sf::run_eval(c, (fs::path(p.ablated_dir) / "model.tvlb").string(), p.data,
                                                        sf::Modality::rgb_ir, "no-text-attention"),
                                           "rgb+ir");
    const double margin = 100.0 * (full - ablated);
    return std::pair{ablated <= full, fmt("rgb+ir full %.3f, without text attention %.3f (margin %.1f points; "
                                          "soft target >= 2: %s)",
                                          full, ablated, margin, margin >= 2.0 ? "met" : "not met")};
  });
}

void checkpoint_round_trip(const Pipeline& p) {
  criterion("checkpoint-round-trip", [&] {
    if (!p.trained) throw sf::ContractError("full model unavailable");
    const auto path = (fs::path(p.full_dir) / "model.tvlb").string();
    auto a = sf::Model::init(p.cfg);
    sf::restore_model(sf::load_checkpoint(path), p.cfg, a);
    const auto copy = (p.root / "copy.tvlb").string();
    sf::save_checkpoint(copy, sf::capture_model(p.cfg, a));
    sf::TrainConfig other = p.cfg;
    other.seed = p.cfg.seed + 1;
    auto b = sf::Model::init(other);
    sf::restore_model(sf::load_checkpoint(copy), other, b);
    const auto samples = sf::load_samples(p.data, "eval");
    std::size_t exact = 0;
    for (std::size_t i = 0; i < 20; ++i) {
      const auto& s = samples[i * samples.size() / 20];
      exact += vals(sf::forward_sample(a, s, s.item.modality, {}).logits) ==
               vals(sf::forward_sample(b, s, s.item.modality, {}).logits);
    }
    return std::pair{exact == 20, fmt("bit-exact logits on %zu/20 samples after save/load", exact)};
  });
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  Pipeline p;
  try {
    p.cfg = sf::load_config(SPECTRAFUSE_DESK_CONFIG);
    p.cfg.validate();
  } catch (const std::exception& e) {
    std::printf("cannot load desk configuration: %s\n", e.what());
    return 2;
  }
  p.root = fs::temp_directory_path() / ("spectrafuse_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(p.root);
  fs::create_directories(p.root);

  gradient_suite(p.cfg);
  fusion_identity();
  loss_closed_forms();
  oracle_equivalence();
  masking_exactness();
  scoring_fixture();
  end_to_end(p);
  freeze_contract(p);
  ablation_direction(p);
  checkpoint_round_trip(p);

  fs::remove_all(p.root);
  std::printf("%d failed criteria, %.0fs total\n", g_failures, seconds_since(t0));
  return g_failures == 0 ? 0 : 1;
}
