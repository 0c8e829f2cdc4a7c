// SPDX-License-Identifier: Apache-2.0
//
// Patch tokenisation and the toy ViT towers used for both spectral streams,
// block-wise RGB masking, and the masked-autoencoder objective for the
// thermal tower.
#pragma once

#include <cstdint>
#include <vector>

#include "spectrafuse/image.hpp"
#include "spectrafuse/nn.hpp"

namespace spectrafuse {

struct EncoderConfig {
  std::size_t image_height = 56;
  std::size_t image_width = 56;
  std::size_t channels = 3;
  std::size_t patch_size = 14;
  std::size_t dim = 64;
  std::size_t blocks = 6;
  std::size_t heads = 4;
  std::size_t mlp_hidden = 128;

  std::size_t grid_rows() const { return image_height / patch_size; }
  std::size_t grid_cols() const { return image_width / patch_size; }
  std::size_t tokens() const { return grid_rows() * grid_cols(); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  /// DimensionError unless the image tiles exactly into patches.
  void validate() const;
};

/// Pre-norm transformer block: x + MHA(LN(x)), then x + MLP(LN(x)).
struct VitBlock {
  LayerNormParams norm1;
  MhaParams attn;
  LayerNormParams norm2;
  MlpParams mlp;

  static VitBlock init(std::size_t dim, std::size_t heads, std::size_t hidden, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

Tensor vit_block(const Tensor& x, const VitBlock& block, bool causal = false);

struct VitEncoderParams {
  EncoderConfig config;
  LinearParams patch_embed;
  Tensor pos_embed;  // [N × d]
  std::vector<VitBlock> blocks;
  LayerNormParams final_norm;

  static VitEncoderParams init(const EncoderConfig& config, Rng& rng);
  void visit(const std::string& prefix, const ParamVisitor& fn);
  void set_trainable(bool on);
};

/// Which trailing encoder blocks stay trainable.
struct FreezeSplit {
  std::size_t trainable_blocks = 4;

  /// Indices of the trainable blocks (the last `trainable_blocks`).
  std::vector<std::size_t> trainable(std::size_t total_blocks) const;
  std::vector<std::size_t> frozen(std::size_t total_blocks) const;
};

/// Freezes patch embedding, positions and the leading blocks; the trailing
/// blocks and the final norm (LN_T) stay trainable. ContractError if the
/// split asks for more blocks than exist.
void apply_freeze_split(VitEncoderParams& enc, const FreezeSplit& split);

/// 1-channel → 3 identical channels. ContractError on any other input.
ImagePlane replicate_channels(const ImagePlane& thermal);

/// Zeroes a union of random squares covering exactly round(rho·H·W) pixels
/// on every channel. Square side is round(0.18·min(H, W)).
ImagePlane block_mask_rgb(const ImagePlane& rgb, double rho, std::uint64_t seed);
/// Calls to block_mask_rgb since start-up (or the last reset).
std::uint64_t block_mask_invocations();
void reset_block_mask_invocations();

/// [N × ps·ps·C] matrix of flattened patches in row-major patch order.
Tensor patchify(const ImagePlane& img, std::size_t patch_size);
/// Linear patch embedding plus position table; no transformer blocks.
Tensor embed_patches(const Tensor& patches, const VitEncoderParams& enc);
/// Full tower: embed → blocks → final LN.
Tensor patchify_encode(const ImagePlane& img, const VitEncoderParams& enc);

struct MaeMask {
  std::size_t tokens = 0;
  double ratio = 0.0;
  std::vector<std::size_t> masked;   // sorted
  std::vector<std::size_t> visible;  // sorted complement
};

/// Uniform sample of round(ratio·n) distinct indices. ContractError unless
/// 0 ≤ ratio < 1.
MaeMask sample_mae_mask(std::size_t tokens, double ratio, std::uint64_t seed);

struct MaeDecoderParams {
  Tensor mask_token;     // [d_dec]
  LinearParams embed;    // d → d_dec
  Tensor pos_embed;      // [N × d_dec]
  std::vector<VitBlock> blocks;
  LayerNormParams norm;
  LinearParams head;     // d_dec → patch_dim

  /// Two blocks at half the encoder width.
  static MaeDecoderParams init(const EncoderConfig& enc, Rng& rng, std::size_t blocks = 2);
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

/// Encodes only the visible patches, restores the original order with mask
/// tokens and decoder positions, and predicts every patch: [N × patch_dim].
Tensor mae_predict(const ImagePlane& img, const VitEncoderParams& enc, const MaeDecoderParams& dec,
                   const MaeMask& mask);
/// Mean over masked patches of the squared error ‖x_i − x̂_i‖².
Tensor masked_patch_mse(const Tensor& predicted, const Tensor& target, const MaeMask& mask);
Tensor mae_forward_loss(const ImagePlane& img, const VitEncoderParams& enc,
                        const MaeDecoderParams& dec, const MaeMask& mask);

}  // namespace spectrafuse
