// SPDX-License-Identifier: Apache-2.0
//
// Neural primitives: layer normalisation, affine layers, two-layer GELU
// MLPs, multi-head attention with an optional key padding mask, pooling.
#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "spectrafuse/random.hpp"
#include "spectrafuse/tensor.hpp"

namespace spectrafuse {

/// Callback used to enumerate parameters under stable dotted path names.
using ParamVisitor = std::function<void(const std::string& name, Tensor& param)>;

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
  double eps = 1e-5;

  static LayerNormParams identity(std::size_t dim);
  std::size_t dim() const { return gamma.numel(); }
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct LinearParams {
  Tensor weight;  // [out × in]
  Tensor bias;    // [out]

  /// Uniform(-scale/sqrt(in), scale/sqrt(in)) weights, zero bias.
  static LinearParams init(std::size_t in, std::size_t out, Rng& rng, double scale = 1.0);
  static LinearParams zeros(std::size_t in, std::size_t out);
  std::size_t in_dim() const { return weight.shape()[1]; }
  std::size_t out_dim() const { return weight.shape()[0]; }
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

/// linear → GELU → linear.
struct MlpParams {
  LinearParams fc1;
  LinearParams fc2;

  static MlpParams init(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng);
  std::size_t hidden() const { return fc1.out_dim(); }
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

struct MhaParams {
  LinearParams query;
  LinearParams key;
  LinearParams value;
  LinearParams out;
  std::size_t heads = 1;

  static MhaParams init(std::size_t dim, std::size_t heads, Rng& rng);
  std::size_t dim() const { return query.out_dim(); }
  std::size_t head_dim() const { return dim() / heads; }
  void visit(const std::string& prefix, const ParamVisitor& fn);
};

/// Validity flag per key position (true = attend).
struct KeyMask {
  std::vector<bool> valid;

  static KeyMask all(std::size_t n) { return KeyMask{std::vector<bool>(n, true)}; }
  std::size_t size() const { return valid.size(); }
  std::size_t count() const;
};

struct AttentionOptions {
  std::optional<KeyMask> key_mask;
  bool causal = false;
};

/// Per-head attention weight matrices, filled when requested.
struct AttentionTrace {
  std::vector<Tensor> weights;  // heads × [n_q × n_k]
};

Tensor layer_norm(const Tensor& x, const LayerNormParams& p);
Tensor linear(const Tensor& x, const LinearParams& p);
Tensor mlp(const Tensor& x, const MlpParams& p);

/// Scaled dot-product attention per head. Masked keys get additive -1e9
/// logits, so their weight is exactly zero. If every key is masked the result
/// is an all-zero [n_q × d] tensor.
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, const MhaParams& p,
                            const AttentionOptions& opts = {}, AttentionTrace* trace = nullptr);

Tensor mean_pool(const Tensor& x);
/// Mean over the rows flagged valid; contract error if none are.
Tensor masked_mean_pool(const Tensor& x, const KeyMask& mask);

}  // namespace spectrafuse
