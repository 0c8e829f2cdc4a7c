// SPDX-License-Identifier: Apache-2.0
#include "spectrafuse/nn.hpp"

#include <algorithm>
#include <cmath>

#include "kernels.hpp"

namespace spectrafuse {

namespace {
constexpr double kMaskedLogit = -1e9;
}

LayerNormParams LayerNormParams::identity(std::size_t dim) {
  return LayerNormParams{Tensor::full({dim}, 1.0, true), Tensor::zeros({dim}, true), 1e-5};
}

void LayerNormParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".gamma", gamma);
  fn(prefix + ".beta", beta);
}

LinearParams LinearParams::init(std::size_t in, std::size_t out, Rng& rng, double scale) {
  const double bound = scale / std::sqrt(static_cast<double>(in));
  std::vector<double> w(out * in);
  for (auto& v : w) v = uniform(rng, -bound, bound);
  return LinearParams{Tensor({out, in}, std::move(w), true), Tensor::zeros({out}, true)};
}

LinearParams LinearParams::zeros(std::size_t in, std::size_t out) {
  return LinearParams{Tensor::zeros({out, in}, true), Tensor::zeros({out}, true)};
}

void LinearParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(prefix + ".weight", weight);
  fn(prefix + ".bias", bias);
}

MlpParams MlpParams::init(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
  auto fc1 = LinearParams::init(in, hidden, rng);
  auto fc2 = LinearParams::init(hidden, out, rng);
  return MlpParams{std::move(fc1), std::move(fc2)};
}

void MlpParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  fc1.visit(prefix + ".fc1", fn);
  fc2.visit(prefix + ".fc2", fn);
}

MhaParams MhaParams::init(std::size_t dim, std::size_t heads, Rng& rng) {
  if (heads == 0 || dim % heads != 0) {
    throw DimensionError("attention: width " + std::to_string(dim) + " is not divisible by " +
                         std::to_string(heads) + " heads");
  }
  auto q = LinearParams::init(dim, dim, rng);
  auto k = LinearParams::init(dim, dim, rng);
  auto v = LinearParams::init(dim, dim, rng);
  auto o = LinearParams::init(dim, dim, rng);
  return MhaParams{std::move(q), std::move(k), std::move(v), std::move(o), heads};
}

void MhaParams::visit(const std::string& prefix, const ParamVisitor& fn) {
  query.visit(prefix + ".query", fn);
  key.visit(prefix + ".key", fn);
  value.visit(prefix + ".value", fn);
  out.visit(prefix + ".out", fn);
}

std::size_t KeyMask::count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), true));
}

Tensor layer_norm(const Tensor& x, const LayerNormParams& p) {
  const std::size_t d = p.dim();
  if (x.rank() == 0 || x.cols() != d) {
    throw DimensionError("layer_norm: input " + shape_to_string(x.shape()) +
                         " does not end in normalised width " + std::to_string(d));
  }
  if (p.beta.numel() != d) throw DimensionError("layer_norm: gamma/beta widths differ");
  if (!(p.eps > 0)) throw ContractError("layer_norm: eps must be positive");
  const std::size_t n = x.rows();
  const auto xs = x.data();
  const auto gamma = p.gamma.data(), beta = p.beta.data();
  std::vector<double> out(n * d), xhat(n * d), inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = xs.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + p.eps);
    inv_std[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * inv;
      xhat[r * d + j] = h;
      out[r * d + j] = gamma[j] * h + beta[j];
    }
  }
  Tensor result(x.shape(), std::move(out));
  if (detail::should_record({&x, &p.gamma, &p.beta})) {
    Tensor gamma_t = p.gamma, beta_t = p.beta;
    detail::record(result, [x, gamma_t, beta_t, xhat = std::move(xhat),
                            inv_std = std::move(inv_std), n, d](std::span<const double> g) {
      if (gamma_t.requires_grad()) {
        auto gg = detail::grad_buffer(gamma_t);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
      }
      if (beta_t.requires_grad()) {
        auto gb = detail::grad_buffer(beta_t);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
      }
      if (x.requires_grad()) {
        const auto gamma = gamma_t.data();
        auto gx = detail::grad_buffer(x);
        const double dd = static_cast<double>(d);
        for (std::size_t r = 0; r < n; ++r) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double gh = g[r * d + j] * gamma[j];
            sum_g += gh;
            sum_gx += gh * xhat[r * d + j];
          }
          for (std::size_t j = 0; j < d; ++j) {
            const double gh = g[r * d + j] * gamma[j];
            gx[r * d + j] += inv_std[r] / dd * (dd * gh - sum_g - xhat[r * d + j] * sum_gx);
          }
        }
      }
    });
  }
  return result;
}

Tensor linear(const Tensor& x, const LinearParams& p) {
  const std::size_t in = p.in_dim(), out_dim = p.out_dim();
  if (x.rank() != 2 || x.cols() != in) {
    throw DimensionError("linear: input " + shape_to_string(x.shape()) + " does not match weight " +
                         shape_to_string(p.weight.shape()));
  }
  if (p.bias.numel() != out_dim) {
    throw DimensionError("linear: bias " + shape_to_string(p.bias.shape()) +
                         " does not match weight " + shape_to_string(p.weight.shape()));
  }
  const std::size_t n = x.rows();
  std::vector<double> out(n * out_dim);
  const auto b = p.bias.data();
  for (std::size_t r = 0; r < n; ++r) std::copy(b.begin(), b.end(), out.begin() + r * out_dim);
  kernels::gemm_nt(x.data().data(), p.weight.data().data(), out.data(), n, in, out_dim);
  Tensor result(Shape{n, out_dim}, std::move(out));
  if (detail::should_record({&x, &p.weight, &p.bias})) {
    Tensor w = p.weight, bias = p.bias;
    detail::record(result, [x, w, bias, n, in, out_dim](std::span<const double> g) {
      if (x.requires_grad()) {
        kernels::gemm_nn(g.data(), w.data().data(), detail::grad_buffer(x).data(), n, out_dim, in);
      }
      if (w.requires_grad()) {
        kernels::gemm_tn(g.data(), x.data().data(), detail::grad_buffer(w).data(), n, out_dim, in);
      }
      if (bias.requires_grad()) {
        auto gb = detail::grad_buffer(bias);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t j = 0; j < out_dim; ++j) gb[j] += g[r * out_dim + j];
      }
    });
  }
  return result;
}

Tensor mlp(const Tensor& x, const MlpParams& p) {
  if (p.fc1.out_dim() != p.fc2.in_dim()) {
    throw DimensionError("mlp: hidden widths differ (" + std::to_string(p.fc1.out_dim()) + " vs " +
                         std::to_string(p.fc2.in_dim()) + ")");
  }
  return linear(gelu(linear(x, p.fc1)), p.fc2);
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, const MhaParams& p,
                            const AttentionOptions& opts, AttentionTrace* trace) {
  const std::size_t d = p.dim();
  if (p.heads == 0 || d % p.heads != 0) {
    throw DimensionError("attention: width " + std::to_string(d) + " is not divisible by " +
                         std::to_string(p.heads) + " heads");
  }
  for (const Tensor* t : {&q, &k, &v}) {
    if (t->rank() != 2 || t->cols() != d) {
      throw DimensionError("attention: operand " + shape_to_string(t->shape()) +
                           " does not have width " + std::to_string(d));
    }
  }
  const std::size_t n_q = q.rows(), n_k = k.rows();
  if (v.rows() != n_k) {
    throw DimensionError("attention: keys " + shape_to_string(k.shape()) + " and values " +
                         shape_to_string(v.shape()) + " differ in length");
  }
  if (opts.key_mask && opts.key_mask->size() != n_k) {
    throw DimensionError("attention: mask length " + std::to_string(opts.key_mask->size()) +
                         " does not match " + std::to_string(n_k) + " keys");
  }
  if (trace) trace->weights.clear();
  if (opts.key_mask && opts.key_mask->count() == 0) {
    return Tensor::zeros({n_q, d});
  }

  std::optional<Tensor> bias;
  if (opts.key_mask || opts.causal) {
    std::vector<double> b(n_q * n_k, 0.0);
    for (std::size_t i = 0; i < n_q; ++i)
      for (std::size_t j = 0; j < n_k; ++j) {
        const bool masked = (opts.key_mask && !opts.key_mask->valid[j]) || (opts.causal && j > i);
        if (masked) b[i * n_k + j] = kMaskedLogit;
      }
    bias = Tensor({n_q, n_k}, std::move(b));
  }

  const Tensor qp = linear(q, p.query);
  const Tensor kp = linear(k, p.key);
  const Tensor vp = linear(v, p.value);
  const std::size_t dh = p.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> heads;
  heads.reserve(p.heads);
  for (std::size_t h = 0; h < p.heads; ++h) {
    const Tensor qh = p.heads == 1 ? qp : slice_last_dim(qp, h * dh, dh);
    const Tensor kh = p.heads == 1 ? kp : slice_last_dim(kp, h * dh, dh);
    const Tensor vh = p.heads == 1 ? vp : slice_last_dim(vp, h * dh, dh);
    Tensor scores = scale(matmul_nt(qh, kh), inv_sqrt);
    if (bias) scores = add(scores, *bias);
    const Tensor weights = softmax_last_dim(scores);
    if (trace) trace->weights.push_back(weights);
    heads.push_back(matmul(weights, vh));
  }
  const Tensor merged = p.heads == 1 ? heads.front() : concat_last_dim(heads);
  return linear(merged, p.out);
}

Tensor mean_pool(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("mean_pool: expected [n x d], got " + shape_to_string(x.shape()));
  return mean_rows(x);
}

Tensor masked_mean_pool(const Tensor& x, const KeyMask& mask) {
  if (x.rank() != 2) {
    throw DimensionError("masked_mean_pool: expected [L x d], got " + shape_to_string(x.shape()));
  }
  if (mask.size() != x.rows()) {
    throw DimensionError("masked_mean_pool: mask length " + std::to_string(mask.size()) +
                         " does not match " + std::to_string(x.rows()) + " rows");
  }
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask.valid[i]) rows.push_back(i);
  if (rows.empty()) throw ContractError("masked_mean_pool: every position is masked");
  return mean_rows(gather_rows(x, rows));
}

}  // namespace spectrafuse
