// SPDX-License-Identifier: Apache-2.0
#include "spectrafuse/encoders.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

namespace spectrafuse {

namespace {

std::atomic<std::uint64_t> g_block_mask_calls{0};

Tensor small_normal(Shape shape, Rng& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

}  // namespace

void EncoderConfig::validate() const {
  if (patch_size == 0 || image_height % patch_size != 0 || image_width % patch_size != 0) {
    throw DimensionError("encoder: image " + std::to_string(image_height) + "x" +
                         std::to_string(image_width) + " does not tile into " +
                         std::to_string(patch_size) + "-pixel patches");
  }
  if (channels != 1 && channels != 3) {
    throw ContractError("encoder: channels must be 1 or 3, got " + std::to_string(channels));
  }
  if (heads == 0 || dim % heads != 0) {
    throw DimensionError("encoder: width " + std::to_string(dim) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
}

VitBlock VitBlock::init(std::size_t dim, std::size_t heads, std::size_t hidden, Rng& rng) {
  VitBlock b{LayerNormParams::identity(dim), MhaParams::init(dim, heads, rng),
             LayerNormParams::identity(dim), MlpParams::init(dim, hidden, dim, rng)};
  return b;
}

void VitBlock::visit(const std::string& prefix, const ParamVisitor& fn) {
  norm1.visit(prefix + ".norm1", fn);
  attn.visit(prefix + ".attn", fn);
  norm2.visit(prefix + ".norm2", fn);
  mlp.visit(prefix + ".mlp", fn);
}

Tensor vit_block(const Tensor& x, const VitBlock& block, bool causal) {
  const Tensor h = layer_norm(x, block.norm1);
  AttentionOptions opts;
  opts.causal = causal;
  const Tensor x1 = add(x, multi_head_attention(h, h, h, block.attn, opts));
  return add(x1, mlp(layer_norm(x1, block.norm2), block.mlp));
}

VitEncoderParams VitEncoderParams::init(const EncoderConfig& config, Rng& rng) {
  config.validate();
  VitEncoderParams enc;
  enc.config = config;
  enc.patch_embed = LinearParams::init(config.patch_dim(), config.dim, rng);
  enc.pos_embed = small_normal({config.tokens(), config.dim}, rng, 0.02);
  for (std::size_t b = 0; b < config.blocks; ++b) {
    enc.blocks.push_back(VitBlock::init(config.dim, config.heads, config.mlp_hidden, rng));
  }
  enc.final_norm = LayerNormParams::identity(config.dim);
  return enc;
}

void VitEncoderParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  patch_embed.visit(prefix + ".patch_embed", fn);
  fn(prefix + ".pos_embed", pos_embed);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    blocks[b].visit(prefix + ".blocks." + std::to_string(b), fn);
  }
  final_norm.visit(prefix + ".final_norm", fn);
}

void VitEncoderParams::set_trainable(bool on) {
  visit("", [on](const std::string&, Tensor& t) { t.set_requires_grad(on); });
}

std::vector<std::size_t> FreezeSplit::trainable(std::size_t total_blocks) const {
  std::vector<std::size_t> out;
  for (std::size_t b = total_blocks - std::min(trainable_blocks, total_blocks); b < total_blocks; ++b) {
    out.push_back(b);
  }
  return out;
}

std::vector<std::size_t> FreezeSplit::frozen(std::size_t total_blocks) const {
  std::vector<std::size_t> out;
  for (std::size_t b = 0; b < total_blocks - std::min(trainable_blocks, total_blocks); ++b) {
    out.push_back(b);
  }
  return out;
}

void apply_freeze_split(VitEncoderParams& enc, const FreezeSplit& split) {
  if (split.trainable_blocks > enc.blocks.size()) {
    throw ContractError("freeze split: " + std::to_string(split.trainable_blocks) +
                        " trainable blocks requested but the encoder has " +
                        std::to_string(enc.blocks.size()));
  }
  enc.set_trainable(false);
  for (auto b : split.trainable(enc.blocks.size())) {
    enc.blocks[b].visit("", [](const std::string&, Tensor& t) { t.set_requires_grad(true); });
  }
  enc.final_norm.visit("", [](const std::string&, Tensor& t) { t.set_requires_grad(true); });
}

ImagePlane replicate_channels(const ImagePlane& thermal) {
  if (thermal.channels != 1) {
    throw ContractError("replicate_channels: thermal input must be single-channel, got " +
                        std::to_string(thermal.channels) + " channels");
  }
  ImagePlane out{thermal.height, thermal.width, 3, std::vector<double>(thermal.pixels.size() * 3)};
  for (std::size_t i = 0; i < thermal.pixels.size(); ++i) {
    out.pixels[3 * i] = out.pixels[3 * i + 1] = out.pixels[3 * i + 2] = thermal.pixels[i];
  }
  return out;
}

ImagePlane block_mask_rgb(const ImagePlane& rgb, double rho, std::uint64_t seed) {
  g_block_mask_calls.fetch_add(1, std::memory_order_relaxed);
  if (!(rho >= 0.0 && rho < 1.0)) {
    throw ContractError("block_mask_rgb: coverage must lie in [0, 1), got " + std::to_string(rho));
  }
  ImagePlane out = rgb;
  const std::size_t h = rgb.height, w = rgb.width;
  const auto target = static_cast<std::size_t>(std::llround(rho * static_cast<double>(h * w)));
  if (target == 0) return out;
  const auto side = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(0.18 * static_cast<double>(std::min(h, w)))));

  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick_y(0, h - 1), pick_x(0, w - 1);
  std::vector<std::uint8_t> covered(h * w, 0);
  std::size_t count = 0;
  while (count < target) {
    const std::size_t cy = pick_y(rng), cx = pick_x(rng);
    // square [c - side/2, c - side/2 + side) clipped to the image
    const std::size_t y0 = cy >= side / 2 ? cy - side / 2 : 0;
    const std::size_t x0 = cx >= side / 2 ? cx - side / 2 : 0;
    const std::size_t y1 = std::min(h, cy + side - side / 2);
    const std::size_t x1 = std::min(w, cx + side - side / 2);
    // row-major scan; pixels beyond the exact target stay unmasked
    for (std::size_t y = y0; y < y1 && count < target; ++y) {
      for (std::size_t x = x0; x < x1 && count < target; ++x) {
        if (!covered[y * w + x]) {
          covered[y * w + x] = 1;
          ++count;
        }
      }
    }
  }
  for (std::size_t p = 0; p < h * w; ++p) {
    if (!covered[p]) continue;
    for (std::size_t c = 0; c < rgb.channels; ++c) out.pixels[p * rgb.channels + c] = 0.0;
  }
  return out;
}

std::uint64_t block_mask_invocations() { return g_block_mask_calls.load(); }
void reset_block_mask_invocations() { g_block_mask_calls.store(0); }

Tensor patchify(const ImagePlane& img, std::size_t patch_size) {
  if (patch_size == 0 || img.height % patch_size != 0 || img.width % patch_size != 0) {
    throw DimensionError("patchify: image " + std::to_string(img.height) + "x" +
                         std::to_string(img.width) + " does not tile into " +
                         std::to_string(patch_size) + "-pixel patches");
  }
  const std::size_t gr = img.height / patch_size, gc = img.width / patch_size;
  const std::size_t c = img.channels, pd = patch_size * patch_size * c;
  std::vector<double> out(gr * gc * pd);
  for (std::size_t pr = 0; pr < gr; ++pr)
    for (std::size_t pc = 0; pc < gc; ++pc) {
      double* dst = out.data() + (pr * gc + pc) * pd;
      for (std::size_t dy = 0; dy < patch_size; ++dy) {
        const double* src = img.pixels.data() + ((pr * patch_size + dy) * img.width + pc * patch_size) * c;
        std::copy_n(src, patch_size * c, dst + dy * patch_size * c);
      }
    }
  return Tensor({gr * gc, pd}, std::move(out));
}

Tensor embed_patches(const Tensor& patches, const VitEncoderParams& enc) {
  if (patches.rows() != enc.config.tokens()) {
    throw DimensionError("embed_patches: " + std::to_string(patches.rows()) +
                         " patches but the position table has " +
                         std::to_string(enc.config.tokens()));
  }
  return add(linear(patches, enc.patch_embed), enc.pos_embed);
}

Tensor patchify_encode(const ImagePlane& img, const VitEncoderParams& enc) {
  if (img.height != enc.config.image_height || img.width != enc.config.image_width ||
      img.channels != enc.config.channels) {
    throw DimensionError("patchify_encode: image " + std::to_string(img.height) + "x" +
                         std::to_string(img.width) + "x" + std::to_string(img.channels) +
                         " does not match encoder geometry " +
                         std::to_string(enc.config.image_height) + "x" +
                         std::to_string(enc.config.image_width) + "x" +
                         std::to_string(enc.config.channels));
  }
  Tensor x = embed_patches(patchify(img, enc.config.patch_size), enc);
  for (const auto& block : enc.blocks) x = vit_block(x, block);
  return layer_norm(x, enc.final_norm);
}

MaeMask sample_mae_mask(std::size_t tokens, double ratio, std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio < 1.0)) {
    throw ContractError("sample_mae_mask: ratio must lie in [0, 1), got " + std::to_string(ratio));
  }
  std::vector<std::size_t> order(tokens);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto k = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(tokens)));
  MaeMask mask{tokens, ratio, {order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k)},
               {order.begin() + static_cast<std::ptrdiff_t>(k), order.end()}};
  std::sort(mask.masked.begin(), mask.masked.end());
  std::sort(mask.visible.begin(), mask.visible.end());
  return mask;
}

MaeDecoderParams MaeDecoderParams::init(const EncoderConfig& enc, Rng& rng, std::size_t blocks) {
  const std::size_t dd = enc.dim / 2;
  const std::size_t heads = dd % enc.heads == 0 ? enc.heads : 1;
  MaeDecoderParams dec;
  dec.mask_token = small_normal({dd}, rng, 0.02);
  dec.embed = LinearParams::init(enc.dim, dd, rng);
  dec.pos_embed = small_normal({enc.tokens(), dd}, rng, 0.02);
  for (std::size_t b = 0; b < blocks; ++b) dec.blocks.push_back(VitBlock::init(dd, heads, 2 * dd, rng));
  dec.norm = LayerNormParams::identity(dd);
  dec.head = LinearParams::init(dd, enc.patch_dim(), rng);
  return dec;
}

void MaeDecoderParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".mask_token", mask_token);
  embed.visit(prefix + ".embed", fn);
  fn(prefix + ".pos_embed", pos_embed);
  for (std::size_t b = 0; b < blocks.size(); ++b) blocks[b].visit(prefix + ".blocks." + std::to_string(b), fn);
  norm.visit(prefix + ".norm", fn);
  head.visit(prefix + ".head", fn);
}

Tensor mae_predict(const ImagePlane& img, const VitEncoderParams& enc, const MaeDecoderParams& dec,
                   const MaeMask& mask) {
  const std::size_t n = enc.config.tokens();
  if (mask.tokens != n || mask.masked.size() + mask.visible.size() != n) {
    throw DimensionError("mae: mask covers " + std::to_string(mask.tokens) + " tokens, encoder has " +
                         std::to_string(n));
  }
  if (mask.visible.empty()) throw ContractError("mae: every token is masked");
  // encoder sees visible patches only
  Tensor x = gather_rows(embed_patches(patchify(img, enc.config.patch_size), enc), mask.visible);
  for (const auto& block : enc.blocks) x = vit_block(x, block);
  x = linear(layer_norm(x, enc.final_norm), dec.embed);
  // [visible ; mask tokens] then permute back to patch order
  Tensor full = mask.masked.empty() ? x : concat_rows({x, expand_rows(dec.mask_token, mask.masked.size())});
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < mask.visible.size(); ++i) order[mask.visible[i]] = i;
  for (std::size_t i = 0; i < mask.masked.size(); ++i) order[mask.masked[i]] = mask.visible.size() + i;
  Tensor y = add(gather_rows(full, order), dec.pos_embed);
  for (const auto& block : dec.blocks) y = vit_block(y, block);
  return linear(layer_norm(y, dec.norm), dec.head);
}

Tensor masked_patch_mse(const Tensor& predicted, const Tensor& target, const MaeMask& mask) {
  if (predicted.shape() != target.shape()) {
    throw DimensionError("mae: prediction " + shape_to_string(predicted.shape()) +
                         " vs target " + shape_to_string(target.shape()));
  }
  if (mask.masked.empty()) throw ContractError("mae: loss is undefined for an empty mask");
  const Tensor diff = sub(gather_rows(predicted, mask.masked), gather_rows(target, mask.masked));
  return scale(sum(mul(diff, diff)), 1.0 / static_cast<double>(mask.masked.size()));
}

Tensor mae_forward_loss(const ImagePlane& img, const VitEncoderParams& enc,
                        const MaeDecoderParams& dec, const MaeMask& mask) {
  if (mask.masked.empty()) throw ContractError("mae: loss is undefined for an empty mask");
  const Tensor pred = mae_predict(img, enc, dec, mask);
  return masked_patch_mse(pred, patchify(img, enc.config.patch_size), mask);
}

}  // namespace spectrafuse
