// SPDX-License-Identifier: Apache-2.0
//
// Run configuration stored as `key = value` lines. Unknown keys are errors.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spectrafuse/decoder.hpp"
#include "spectrafuse/fusion.hpp"
#include "spectrafuse/objectives.hpp"

namespace spectrafuse {

struct TrainConfig {
  std::uint64_t seed = 7;

  // geometry and widths
  std::size_t image_size = 56;
  std::size_t patch_size = 14;
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t encoder_blocks = 6;
  std::size_t encoder_mlp = 128;
  std::size_t trainable_blocks = 4;
  std::size_t fusion_hidden = 64;
  std::size_t decoder_blocks = 2;
  std::size_t decoder_mlp = 128;
  std::size_t vocab = 64;
  std::size_t max_prompt = 12;

  // masking
  double mask_ratio = 0.1;
  bool mask_rgb = true;
  double mae_ratio = 0.75;

  // encoder pretraining (MAE)
  bool pretrain_rgb = true;  // pretrain the RGB tower before freezing it
  std::size_t mae_images = 64;
  std::size_t mae_steps = 300;
  std::size_t mae_batch = 8;
  double mae_lr = 1e-3;

  // decoder pretraining
  std::size_t lm_steps = 1200;
  std::size_t lm_batch = 8;
  double lm_lr = 2e-3;
  std::size_t lm_questions = 4000;
  std::size_t lm_backgrounds = 256;  // RGB token grids mixed under the slot noise

  // objective
  double lambda_align = 0.1;
  double lambda_contr = 0.1;
  double lambda_gate = 0.01;
  double tau = 0.07;
  bool symmetric_nce = true;
  bool align_clean_rgb = false;

  // optimisation
  double lr_thermal = 1e-4;
  double lr_fusion = 5e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t warmup_steps = 0;
  bool cosine_decay = false;  // over the whole training run
  double grad_clip = 0.0;     // global L2 norm; 0 disables
  std::size_t batch_size = 4;
  std::size_t epochs = 3;

  // fusion variant
  bool text_attention = true;
  bool rgb_attention = true;
  bool gated_residual = true;

  // data and artefacts
  std::size_t scenes = 2400;
  double eval_fraction = 0.15;
  std::string data_dir = "data";
  std::string checkpoint = "model.tvlb";
  std::string init_checkpoint;

  /// Applies one `key=value` assignment. ContractError for an unknown key or
  /// a malformed value.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  /// ContractError or DimensionError describing the first violated rule.
  void validate() const;

  /// FNV-1a over the architecture-defining keys.
  std::uint64_t fingerprint() const;
  std::string to_text() const;

  EncoderConfig encoder_config() const;
  FusionConfig fusion_config() const;
  DecoderConfig decoder_config() const;
  LossWeights loss_weights() const;
  AblationFlags ablation() const;
};

/// Parses `key = value` text ('#' starts a comment). Errors name the line.
TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::string& path);
/// Splits "KEY=VALUE" and applies it.
void apply_override(TrainConfig& cfg, const std::string& assignment);

}  // namespace spectrafuse
