// SPDX-License-Identifier: Apache-2.0
//
// Text-guided dual-attention fusion with a token-gated residual into the RGB
// stream.
#pragma once

#include <optional>

#include "spectrafuse/nn.hpp"

namespace spectrafuse {

struct FusionConfig {
  std::size_t dim = 64;
  std::size_t prompt_dim = 64;
  std::size_t heads = 4;
  std::size_t mlp_hidden = 64;
};

struct FusionParameters {
  LinearParams prompt_proj;  // W_P: d_p → d
  MhaParams mha_txt;
  MhaParams mha_rgb;
  MlpParams mlp_m;  // 3d → d
  MlpParams mlp_r;  // d → d
  MlpParams mlp_g;  // 2d → 1
  LayerNormParams ln_rgb;
  LayerNormParams ln_thermal;
  LayerNormParams ln_prompt;
  LayerNormParams ln_merge;
  LayerNormParams ln_residual;
  LayerNormParams ln_gate;  // width 2d

  /// The last layer of mlp_r starts at zero so a fresh block is the identity.
  static FusionParameters init(const FusionConfig& config, Rng& rng);
  std::size_t dim() const { return prompt_proj.out_dim(); }
  std::size_t prompt_dim() const { return prompt_proj.in_dim(); }
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct AblationFlags {
  bool text_attention = true;
  bool rgb_attention = true;
  bool gated_residual = true;  // false: gates fixed at 1
  std::optional<double> gate_override;

  static AblationFlags full() { return {}; }
};

struct FusionOutput {
  Tensor fused;  // R† [N × d]
  Tensor gates;  // α  [N × 1]
  Tensor thermal_text;  // T^txt
  Tensor thermal_rgb;   // T^rgb
  Tensor merged;        // T̂
  Tensor delta;         // ΔR
  Tensor prompt_proj;   // W_P P before normalisation [L × d]
};

FusionOutput fuse(const Tensor& rgb, const Tensor& thermal, const Tensor& prompt,
                  const KeyMask& prompt_mask, const FusionParameters& params,
                  const AblationFlags& variant = {});

}  // namespace spectrafuse
