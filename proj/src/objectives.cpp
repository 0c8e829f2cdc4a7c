// SPDX-License-Identifier: Apache-2.0
#include "spectrafuse/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "spectrafuse/errors.hpp"

namespace spectrafuse {

void LossWeights::validate() const {
  if (lambda_align < 0 || lambda_contr < 0 || lambda_gate < 0) {
    throw ContractError("loss weights must be non-negative");
  }
  if (!(tau > 0)) throw ContractError("temperature must be positive, got " + std::to_string(tau));
}

Tensor lm_loss(const Tensor& logits, const std::vector<std::size_t>& targets,
               const std::vector<bool>& ignore) {
  if (logits.rank() != 2) throw DimensionError("lm_loss: logits must be [S x V], got " + shape_to_string(logits.shape()));
  const std::size_t s = logits.rows(), v = logits.cols();
  if (targets.size() != s) {
    throw DimensionError("lm_loss: " + std::to_string(targets.size()) + " targets for " + std::to_string(s) + " positions");
  }
  if (!ignore.empty() && ignore.size() != s) {
    throw DimensionError("lm_loss: ignore mask length " + std::to_string(ignore.size()) + " != " + std::to_string(s));
  }
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < s; ++i) {
    if (!ignore.empty() && ignore[i]) continue;
    if (targets[i] >= v) {
      throw ContractError("lm_loss: target " + std::to_string(targets[i]) + " outside vocabulary of " + std::to_string(v));
    }
    kept.push_back(i);
  }
  if (kept.empty()) throw ContractError("lm_loss: every position is ignored");

  const auto x = logits.data();
  std::vector<double> probs(kept.size() * v);
  double total = 0.0;
  for (std::size_t k = 0; k < kept.size(); ++k) {
    const double* row = x.data() + kept[k] * v;
    const double mx = *std::max_element(row, row + v);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    total += lse - row[targets[kept[k]]];
    for (std::size_t j = 0; j < v; ++j) probs[k * v + j] = std::exp(row[j] - lse);
  }
  const double inv = 1.0 / static_cast<double>(kept.size());
  Tensor out = Tensor::scalar(total * inv);
  if (detail::should_record({&logits})) {
    detail::record(out, [logits, kept, targets, probs = std::move(probs), v, inv](std::span<const double> g) {
      auto gl = detail::grad_buffer(logits);
      for (std::size_t k = 0; k < kept.size(); ++k) {
        double* row = gl.data() + kept[k] * v;
        for (std::size_t j = 0; j < v; ++j) row[j] += g[0] * inv * probs[k * v + j];
        row[targets[kept[k]]] -= g[0] * inv;
      }
    });
  }
  return out;
}

Tensor align_loss(const Tensor& r, const Tensor& t) {
  if (r.rank() != 2 || r.shape() != t.shape()) {
    throw DimensionError("align_loss: " + shape_to_string(r.shape()) + " vs " + shape_to_string(t.shape()));
  }
  const Tensor diff = sub(r, t);
  return scale(sum(mul(diff, diff)), 1.0 / static_cast<double>(r.rows()));
}

Tensor l2_normalize_rows(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("l2_normalize_rows: expected a matrix, got " + shape_to_string(x.shape()));
  const std::size_t n = x.rows(), d = x.cols();
  const auto in = x.data();
  std::vector<double> norms(n), out(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += in[i * d + j] * in[i * d + j];
    norms[i] = std::sqrt(s);
    if (!(norms[i] > 0.0)) throw ContractError("l2_normalize_rows: row " + std::to_string(i) + " has zero norm");
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = in[i * d + j] / norms[i];
  }
  Tensor result({n, d}, std::move(out));
  if (detail::should_record({&x})) {
    auto y = result.node();
    detail::record(result, [x, y, norms, n, d](std::span<const double> g) {
      auto gx = detail::grad_buffer(x);
      for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += g[i * d + j] * y->data[i * d + j];
        for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += (g[i * d + j] - dot * y->data[i * d + j]) / norms[i];
      }
    });
  }
  return result;
}

Tensor info_nce(const Tensor& a, const Tensor& b, double tau, bool symmetric) {
  if (a.rank() != 2 || a.shape() != b.shape() || a.rows() == 0) {
    throw DimensionError("info_nce: " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
  if (!(tau > 0)) throw ContractError("info_nce: temperature must be positive");
  const Tensor sim = scale(matmul_nt(l2_normalize_rows(a), l2_normalize_rows(b)), 1.0 / tau);
  std::vector<std::size_t> diagonal(a.rows());
  std::iota(diagonal.begin(), diagonal.end(), 0);
  const Tensor rows = lm_loss(sim, diagonal);
  if (!symmetric) return rows;
  return scale(add(rows, lm_loss(transpose(sim), diagonal)), 0.5);
}

Tensor contrastive_loss(const Tensor& p_rgb, const Tensor& p_thermal, const Tensor& p_prompt,
                        double tau, bool symmetric) {
  return scale(add(info_nce(p_rgb, p_thermal, tau, symmetric), info_nce(p_rgb, p_prompt, tau, symmetric)), 0.5);
}

Tensor gate_entropy_loss(const Tensor& gates) {
  if (gates.numel() == 0) throw ContractError("gate_entropy_loss: no gates");
  constexpr double lo = 1e-12, hi = 1.0 - 1e-12;
  const auto a = gates.data();
  const double inv = 1.0 / static_cast<double>(a.size());
  double total = 0.0;
  for (double x : a) {
    const double c = std::clamp(x, lo, hi);
    total += c * std::log(c) + (1.0 - c) * std::log(1.0 - c);
  }
  Tensor out = Tensor::scalar(total * inv);
  if (detail::should_record({&gates})) {
    detail::record(out, [gates, inv](std::span<const double> g) {
      auto gg = detail::grad_buffer(gates);
      const auto a = gates.data();
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] < lo || a[i] > hi) continue;
        gg[i] += g[0] * inv * std::log(a[i] / (1.0 - a[i]));
      }
    });
  }
  return out;
}

LossBreakdown total_loss(const Tensor& lm, const Tensor& align, const Tensor& contr, const Tensor& gate,
                         const LossWeights& w) {
  for (const Tensor* t : {&lm, &align, &contr, &gate}) {
    if (t->numel() != 1) throw DimensionError("total_loss: loss terms must be scalars, got " + shape_to_string(t->shape()));
  }
  Tensor total =
      add(add(add(lm, scale(align, w.lambda_align)), scale(contr, w.lambda_contr)), scale(gate, w.lambda_gate));
  return LossBreakdown{lm, align, contr, gate, total};
}

}  // namespace spectrafuse
