// SPDX-License-Identifier: Apache-2.0
//
// Training objectives: answer cross-entropy, token alignment, symmetric
// InfoNCE, gate entropy, and their weighted sum.
#pragma once

#include <vector>

#include "spectrafuse/tensor.hpp"

namespace spectrafuse {

struct LossWeights {
  double lambda_align = 0.1;
  double lambda_contr = 0.1;
  double lambda_gate = 0.01;
  double tau = 0.07;

  /// ContractError on a negative weight or non-positive temperature.
  void validate() const;
};

struct LossBreakdown {
  Tensor lm, align, contr, gate, total;
};

/// Mean negative log-likelihood over positions where `ignore` is false (an
/// empty `ignore` keeps every position). Uses a shifted log-sum-exp.
Tensor lm_loss(const Tensor& logits, const std::vector<std::size_t>& targets,
               const std::vector<bool>& ignore = {});

/// (1/N) Σ_n ‖R_n − T_n‖².
Tensor align_loss(const Tensor& r, const Tensor& t);

/// Divides every row by its Euclidean norm; ContractError on a zero row.
Tensor l2_normalize_rows(const Tensor& x);

/// Temperature-scaled cosine InfoNCE with diagonal positives. Symmetric
/// averages the row-wise and column-wise cross-entropies.
Tensor info_nce(const Tensor& a, const Tensor& b, double tau, bool symmetric = true);

/// ½[NCE(p_R, p_T) + NCE(p_R, p_P)].
Tensor contrastive_loss(const Tensor& p_rgb, const Tensor& p_thermal, const Tensor& p_prompt,
                        double tau, bool symmetric = true);

/// Negative mean binary entropy of the gates, with α clamped to
/// [1e-12, 1 − 1e-12] before the logarithms.
Tensor gate_entropy_loss(const Tensor& gates);

LossBreakdown total_loss(const Tensor& lm, const Tensor& align, const Tensor& contr,
                         const Tensor& gate, const LossWeights& w);

}  // namespace spectrafuse
