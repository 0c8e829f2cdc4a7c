// SPDX-License-Identifier: Apache-2.0
#include "spectrafuse/fusion.hpp"

#include "spectrafuse/errors.hpp"

namespace spectrafuse {

FusionParameters FusionParameters::init(const FusionConfig& c, Rng& rng) {
  FusionParameters p;
  p.prompt_proj = LinearParams::init(c.prompt_dim, c.dim, rng);
  p.mha_txt = MhaParams::init(c.dim, c.heads, rng);
  p.mha_rgb = MhaParams::init(c.dim, c.heads, rng);
  p.mlp_m = MlpParams::init(3 * c.dim, c.mlp_hidden, c.dim, rng);
  p.mlp_r = MlpParams::init(c.dim, c.mlp_hidden, c.dim, rng);
  p.mlp_r.fc2 = LinearParams::zeros(c.mlp_hidden, c.dim);
  p.mlp_g = MlpParams::init(2 * c.dim, c.mlp_hidden, 1, rng);
  p.ln_rgb = LayerNormParams::identity(c.dim);
  p.ln_thermal = LayerNormParams::identity(c.dim);
  p.ln_prompt = LayerNormParams::identity(c.dim);
  p.ln_merge = LayerNormParams::identity(c.dim);
  p.ln_residual = LayerNormParams::identity(c.dim);
  p.ln_gate = LayerNormParams::identity(2 * c.dim);
  return p;
}

void FusionParameters::visit(const std::string& prefix, const ParamVisitor& fn) {
  prompt_proj.visit(prefix + ".prompt_proj", fn);
  mha_txt.visit(prefix + ".mha_txt", fn);
  mha_rgb.visit(prefix + ".mha_rgb", fn);
  mlp_m.visit(prefix + ".mlp_m", fn);
  mlp_r.visit(prefix + ".mlp_r", fn);
  mlp_g.visit(prefix + ".mlp_g", fn);
  ln_rgb.visit(prefix + ".ln_rgb", fn);
  ln_thermal.visit(prefix + ".ln_thermal", fn);
  ln_prompt.visit(prefix + ".ln_prompt", fn);
  ln_merge.visit(prefix + ".ln_merge", fn);
  ln_residual.visit(prefix + ".ln_residual", fn);
  ln_gate.visit(prefix + ".ln_gate", fn);
}

FusionOutput fuse(const Tensor& rgb, const Tensor& thermal, const Tensor& prompt,
                  const KeyMask& prompt_mask, const FusionParameters& params,
                  const AblationFlags& variant) {
  const std::size_t d = params.dim();
  if (rgb.rank() != 2 || rgb.shape() != thermal.shape() || rgb.cols() != d) {
    throw DimensionError("fuse: rgb " + shape_to_string(rgb.shape()) + " and thermal " +
                         shape_to_string(thermal.shape()) + " must both be [N x " +
                         std::to_string(d) + "]");
  }
  if (prompt.rank() != 2 || prompt.cols() != params.prompt_dim()) {
    throw DimensionError("fuse: prompt " + shape_to_string(prompt.shape()) + " must be [L x " +
                         std::to_string(params.prompt_dim()) + "]");
  }
  if (prompt_mask.size() != prompt.rows()) {
    throw DimensionError("fuse: prompt mask has " + std::to_string(prompt_mask.size()) +
                         " entries for " + std::to_string(prompt.rows()) + " prompt rows");
  }
  if (prompt_mask.count() == 0) throw ContractError("fuse: every prompt position is masked");

  const std::size_t n = rgb.rows();
  FusionOutput out;
  const Tensor r_bar = layer_norm(rgb, params.ln_rgb);
  const Tensor t_bar = layer_norm(thermal, params.ln_thermal);
  out.prompt_proj = linear(prompt, params.prompt_proj);
  const Tensor p_bar = layer_norm(out.prompt_proj, params.ln_prompt);

  AttentionOptions text_opts;
  text_opts.key_mask = prompt_mask;
  out.thermal_text = variant.text_attention
                         ? multi_head_attention(t_bar, p_bar, p_bar, params.mha_txt, text_opts)
                         : Tensor::zeros({n, d});
  out.thermal_rgb = variant.rgb_attention
                        ? multi_head_attention(t_bar, r_bar, r_bar, params.mha_rgb)
                        : Tensor::zeros({n, d});

  out.merged = layer_norm(
      add(thermal, mlp(concat_last_dim({t_bar, out.thermal_text, out.thermal_rgb}), params.mlp_m)),
      params.ln_merge);
  out.delta = mlp(layer_norm(out.merged, params.ln_residual), params.mlp_r);

  if (variant.gate_override) {
    out.gates = Tensor::full({n, 1}, *variant.gate_override);
  } else if (!variant.gated_residual) {
    out.gates = Tensor::full({n, 1}, 1.0);
  } else {
    out.gates = sigmoid(
        mlp(layer_norm(concat_last_dim({r_bar, out.merged}), params.ln_gate), params.mlp_g));
  }
  out.fused = add(rgb, mul(matmul(out.gates, Tensor::full({1, d}, 1.0)), out.delta));
  return out;
}

}  // namespace spectrafuse
