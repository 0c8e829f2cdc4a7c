// SPDX-License-Identifier: Apache-2.0
#include "spectrafuse/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "kernels.hpp"

namespace spectrafuse {

namespace {

thread_local Tape* g_active_tape = nullptr;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
}

void require_rank2(const Tensor& a, const char* op) {
  if (a.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected rank-2 operand, got " +
                         shape_to_string(a.shape()));
  }
}

void require_defined(const Tensor& a, const char* op) {
  if (!a.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, const char* name, Fwd fwd, Deriv deriv) {
  require_defined(a, name);
  const auto in = a.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  Tensor result(a.shape(), std::move(out));
  if (detail::should_record({&a})) {
    auto out_node = result.node();
    detail::record(result, [a, out_node, deriv](std::span<const double> g) {
      const auto x = a.data();
      const auto& y = out_node->data;
      auto ga = detail::grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
    });
  }
  return result;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : node_(std::make_shared<TensorNode>()) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor: shape " + shape_to_string(shape) + " holds " +
                         std::to_string(shape_numel(shape)) + " elements, got " +
                         std::to_string(data.size()));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<double>{value}, requires_grad);
}

Tensor Tensor::from_node(std::shared_ptr<TensorNode> node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

const Shape& Tensor::shape() const {
  require_defined(*this, "shape");
  return node_->shape;
}

std::size_t Tensor::numel() const { return node_ ? node_->data.size() : 0; }

std::size_t Tensor::cols() const {
  const auto& s = shape();
  return s.empty() ? 1 : s.back();
}

std::size_t Tensor::rows() const {
  const auto c = cols();
  return c == 0 ? 0 : numel() / c;
}

std::span<const double> Tensor::data() const {
  require_defined(*this, "data");
  return node_->data;
}

std::span<double> Tensor::mutable_data() {
  require_defined(*this, "mutable_data");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item: tensor " + shape_to_string(shape()) + " is not a scalar");
  }
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  require_defined(*this, "set_requires_grad");
  if (!node_->leaf) throw ContractError("set_requires_grad: only leaves can be toggled");
  node_->requires_grad = on;
}

bool Tensor::is_leaf() const { return node_ && node_->leaf; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  require_defined(*this, "grad");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  require_defined(*this, "grad");
  return node_->grad;
}

void Tensor::zero_grad() {
  require_defined(*this, "zero_grad");
  node_->grad.assign(node_->data.size(), 0.0);
}

void Tensor::clear_grad() {
  if (node_) {
    node_->grad.clear();
    node_->grad.shrink_to_fit();
  }
}

Tensor Tensor::detach() const {
  require_defined(*this, "detach");
  return Tensor(node_->shape, node_->data, false);
}

Tensor Tensor::clone() const {
  require_defined(*this, "clone");
  Tensor t(node_->shape, node_->data, node_->requires_grad);
  t.node_->grad = node_->grad;
  return t;
}

// ---------------------------------------------------------------------------
// Tape

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() noexcept { return g_active_tape; }

void Tape::push(std::shared_ptr<TensorNode> output, BackwardFn fn) {
  entries_.push_back(Entry{std::move(output), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward: undefined loss");
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got " + shape_to_string(loss.shape()));
  }
  const auto it = std::find_if(entries_.begin(), entries_.end(),
                               [&](const Entry& e) { return e.output == loss.node(); });
  if (it == entries_.end()) {
    throw ContractError("backward: loss was not produced by an operation on this tape");
  }
  detail::accumulate_at(loss, 0, 1.0);
  const auto stop = static_cast<std::ptrdiff_t>(it - entries_.begin());
  for (auto i = stop; i >= 0; --i) {
    auto& entry = entries_[static_cast<std::size_t>(i)];
    if (entry.output->grad.empty()) continue;
    entry.backward(entry.output->grad);
    // intermediate gradients are not needed once propagated
    entry.output->grad.clear();
    entry.output->grad.shrink_to_fit();
  }
  entries_.clear();
}

void backward(const Tensor& loss) {
  Tape* tape = Tape::active();
  if (!tape) throw ContractError("backward: no active tape");
  tape->backward(loss);
}

namespace detail {

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::active()) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

bool should_record(std::span<const Tensor> inputs) {
  if (!Tape::active()) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor& t) { return t.requires_grad(); });
}

void record(Tensor& out, Tape::BackwardFn fn) {
  Tape* tape = Tape::active();
  if (!tape) return;
  out.node()->requires_grad = true;
  out.node()->leaf = false;
  tape->push(out.node(), std::move(fn));
}

std::span<double> grad_buffer(const Tensor& t) {
  auto& node = *t.node();
  if (node.grad.empty()) node.grad.assign(node.data.size(), 0.0);
  return node.grad;
}

void accumulate(const Tensor& t, std::span<const double> g) {
  if (!t.requires_grad()) return;
  auto buf = grad_buffer(t);
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

void accumulate_at(const Tensor& t, std::size_t flat, double g) {
  if (!t.requires_grad()) return;
  grad_buffer(t)[flat] += g;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  require_same_shape(a, b, "add");
  const auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  Tensor result(a.shape(), std::move(out));
  if (detail::should_record({&a, &b})) {
    detail::record(result, [a, b](std::span<const double> g) {
      detail::accumulate(a, g);
      detail::accumulate(b, g);
    });
  }
  return result;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_defined(a, "sub");
  require_defined(b, "sub");
  require_same_shape(a, b, "sub");
  const auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  Tensor result(a.shape(), std::move(out));
  if (detail::should_record({&a, &b})) {
    detail::record(result, [a, b](std::span<const double> g) {
      detail::accumulate(a, g);
      if (b.requires_grad()) {
        auto gb = detail::grad_buffer(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_defined(a, "mul");
  require_defined(b, "mul");
  require_same_shape(a, b, "mul");
  const auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  Tensor result(a.shape(), std::move(out));
  if (detail::should_record({&a, &b})) {
    detail::record(result, [a, b](std::span<const double> g) {
      const auto x = a.data(), y = b.data();
      if (a.requires_grad()) {
        auto ga = detail::grad_buffer(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
      }
      if (b.requires_grad()) {
        auto gb = detail::grad_buffer(b);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
      }
    });
  }
  return result;
}

Tensor scale(const Tensor& a, double c) {
  return unary(
      a, "scale", [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor sigmoid(const Tensor& a) {
  return unary(
      a, "sigmoid",
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor gelu(const Tensor& a) {
  return unary(
      a, "gelu", [](double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2)); },
      [](double x, double) {
        const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2));
        const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + x * pdf;
      });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a) {
  require_defined(a, "sum");
  const auto x = a.data();
  Tensor result = Tensor::scalar(std::accumulate(x.begin(), x.end(), 0.0));
  if (detail::should_record({&a})) {
    detail::record(result, [a](std::span<const double> g) {
      auto ga = detail::grad_buffer(a);
      for (auto& v : ga) v += g[0];
    });
  }
  return result;
}

Tensor mean(const Tensor& a) {
  require_defined(a, "mean");
  if (a.numel() == 0) throw ContractError("mean: empty tensor");
  const auto x = a.data();
  const double n = static_cast<double>(x.size());
  Tensor result = Tensor::scalar(std::accumulate(x.begin(), x.end(), 0.0) / n);
  if (detail::should_record({&a})) {
    detail::record(result, [a, n](std::span<const double> g) {
      auto ga = detail::grad_buffer(a);
      for (auto& v : ga) v += g[0] / n;
    });
  }
  return result;
}

Tensor softmax_last_dim(const Tensor& a) {
  require_defined(a, "softmax_last_dim");
  const std::size_t n = a.rows(), d = a.cols();
  const auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = x.data() + r * d;
    double* y = out.data() + r * d;
    const double mx = *std::max_element(row, row + d);
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) z += (y[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < d; ++j) y[j] /= z;
  }
  Tensor result(a.shape(), std::move(out));
  if (detail::should_record({&a})) {
    auto out_node = result.node();
    detail::record(result, [a, out_node, n, d](std::span<const double> g) {
      const auto& y = out_node->data;
      auto ga = detail::grad_buffer(a);
      for (std::size_t r = 0; r < n; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += g[r * d + j] * y[r * d + j];
        for (std::size_t j = 0; j < d; ++j) ga[r * d + j] += y[r * d + j] * (g[r * d + j] - dot);
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner extents differ for " + shape_to_string(a.shape()) +
                         " and " + shape_to_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  kernels::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  Tensor result(Shape{m, n}, std::move(out));
  if (detail::should_record({&a, &b})) {
    detail::record(result, [a, b, m, k, n](std::span<const double> g) {
      if (a.requires_grad()) {
        kernels::gemm_nt(g.data(), b.data().data(), detail::grad_buffer(a).data(), m, n, k);
      }
      if (b.requires_grad()) {
        kernels::gemm_tn(a.data().data(), g.data(), detail::grad_buffer(b).data(), m, k, n);
      }
    });
  }
  return result;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul_nt");
  require_defined(b, "matmul_nt");
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  if (b.shape()[1] != k) {
    throw DimensionError("matmul_nt: inner extents differ for " + shape_to_string(a.shape()) +
                         " and transposed " + shape_to_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  kernels::gemm_nt(a.data().data(), b.data().data(), out.data(), m, k, n);
  Tensor result(Shape{m, n}, std::move(out));
  if (detail::should_record({&a, &b})) {
    detail::record(result, [a, b, m, k, n](std::span<const double> g) {
      if (a.requires_grad()) {
        kernels::gemm_nn(g.data(), b.data().data(), detail::grad_buffer(a).data(), m, n, k);
      }
      if (b.requires_grad()) {
        // dB[n×k] += gᵀ[n×m] · A[m×k]
        kernels::gemm_tn(g.data(), a.data().data(), detail::grad_buffer(b).data(), m, n, k);
      }
    });
  }
  return result;
}

Tensor transpose(const Tensor& a) {
  require_defined(a, "transpose");
  require_rank2(a, "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  const auto x = a.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  Tensor result(Shape{n, m}, std::move(out));
  if (detail::should_record({&a})) {
    detail::record(result, [a, m, n](std::span<const double> g) {
      auto ga = detail::grad_buffer(a);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Structural

Tensor concat_last_dim(std::initializer_list<Tensor> parts) {
  return concat_last_dim(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor concat_last_dim(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_last_dim: no operands");
  for (const auto& p : parts) require_defined(p, "concat_last_dim");
  const Shape& lead = parts.front().shape();
  if (lead.empty()) throw DimensionError("concat_last_dim: scalar operand");
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != lead.size() || !std::equal(s.begin(), s.end() - 1, lead.begin())) {
      throw DimensionError("concat_last_dim: leading extents differ for " +
                           shape_to_string(lead) + " and " + shape_to_string(s));
    }
    total += s.back();
  }
  const std::size_t rows = parts.front().rows();
  std::vector<double> out(rows * total);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t c = p.cols();
    const auto x = p.data();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(x.data() + r * c, c, out.data() + r * total + off);
    off += c;
  }
  Shape shape = lead;
  shape.back() = total;
  Tensor result(std::move(shape), std::move(out));
  if (detail::should_record(parts)) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    detail::record(result, [inputs, offsets, rows, total](std::span<const double> g) {
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (!inputs[i].requires_grad()) continue;
        const std::size_t c = inputs[i].cols();
        auto gi = detail::grad_buffer(inputs[i]);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < c; ++j) gi[r * c + j] += g[r * total + offsets[i] + j];
      }
    });
  }
  return result;
}

Tensor slice_last_dim(const Tensor& a, std::size_t begin, std::size_t len) {
  require_defined(a, "slice_last_dim");
  if (a.rank() == 0) throw DimensionError("slice_last_dim: scalar operand");
  const std::size_t c = a.cols(), rows = a.rows();
  if (begin + len > c) {
    throw DimensionError("slice_last_dim: range [" + std::to_string(begin) + ", " +
                         std::to_string(begin + len) + ") exceeds " + shape_to_string(a.shape()));
  }
  const auto x = a.data();
  std::vector<double> out(rows * len);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.data() + r * c + begin, len, out.data() + r * len);
  Shape shape = a.shape();
  shape.back() = len;
  Tensor result(std::move(shape), std::move(out));
  if (detail::should_record({&a})) {
    detail::record(result, [a, begin, len, c, rows](std::span<const double> g) {
      auto ga = detail::grad_buffer(a);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < len; ++j) ga[r * c + begin + j] += g[r * len + j];
    });
  }
  return result;
}

Tensor concat_rows(std::initializer_list<Tensor> parts) {
  return concat_rows(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no operands");
  for (const auto& p : parts) require_defined(p, "concat_rows");
  const std::size_t d = parts.front().cols();
  std::size_t total_rows = 0;
  for (const auto& p : parts) {
    if (p.rank() > 2 || p.rank() == 0) {
      throw DimensionError("concat_rows: operands must be rank 1 or 2, got " +
                           shape_to_string(p.shape()));
    }
    if (p.cols() != d) {
      throw DimensionError("concat_rows: widths differ for " +
                           shape_to_string(parts.front().shape()) + " and " +
                           shape_to_string(p.shape()));
    }
    total_rows += p.rows();
  }
  std::vector<double> out;
  out.reserve(total_rows * d);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  Tensor result(Shape{total_rows, d}, std::move(out));
  if (detail::should_record(parts)) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    detail::record(result, [inputs](std::span<const double> g) {
      std::size_t off = 0;
      for (const auto& in : inputs) {
        const std::size_t n = in.numel();
        if (in.requires_grad()) detail::accumulate(in, g.subspan(off, n));
        off += n;
      }
    });
  }
  return result;
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  require_defined(a, "gather_rows");
  if (a.rank() != 2) {
    throw DimensionError("gather_rows: expected rank-2 operand, got " + shape_to_string(a.shape()));
  }
  const std::size_t n = a.shape()[0], d = a.shape()[1];
  const auto x = a.data();
  std::vector<double> out(rows.size() * d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n) {
      throw DimensionError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " +
                           shape_to_string(a.shape()));
    }
    std::copy_n(x.data() + rows[i] * d, d, out.data() + i * d);
  }
  Tensor result(Shape{rows.size(), d}, std::move(out));
  if (detail::should_record({&a})) {
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    detail::record(result, [a, idx, d](std::span<const double> g) {
      auto ga = detail::grad_buffer(a);
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) ga[idx[i] * d + j] += g[i * d + j];
    });
  }
  return result;
}

Tensor expand_rows(const Tensor& v, std::size_t n) {
  require_defined(v, "expand_rows");
  if (!(v.rank() == 1 || (v.rank() == 2 && v.shape()[0] == 1))) {
    throw DimensionError("expand_rows: expected [d] or [1xd], got " + shape_to_string(v.shape()));
  }
  const std::size_t d = v.cols();
  const auto x = v.data();
  std::vector<double> out(n * d);
  for (std::size_t r = 0; r < n; ++r) std::copy_n(x.data(), d, out.data() + r * d);
  Tensor result(Shape{n, d}, std::move(out));
  if (detail::should_record({&v})) {
    detail::record(result, [v, n, d](std::span<const double> g) {
      auto gv = detail::grad_buffer(v);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < d; ++j) gv[j] += g[r * d + j];
    });
  }
  return result;
}

Tensor mean_rows(const Tensor& a) {
  require_defined(a, "mean_rows");
  if (a.rank() != 2) {
    throw DimensionError("mean_rows: expected rank-2 operand, got " + shape_to_string(a.shape()));
  }
  const std::size_t n = a.shape()[0], d = a.shape()[1];
  if (n == 0) throw ContractError("mean_rows: no rows");
  const auto x = a.data();
  std::vector<double> out(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j) out[j] += x[r * d + j];
  for (auto& v : out) v /= static_cast<double>(n);
  Tensor result(Shape{d}, std::move(out));
  if (detail::should_record({&a})) {
    detail::record(result, [a, n, d](std::span<const double> g) {
      auto ga = detail::grad_buffer(a);
      const double inv = 1.0 / static_cast<double>(n);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < d; ++j) ga[r * d + j] += g[j] * inv;
    });
  }
  return result;
}

Tensor reshape(const Tensor& a, Shape shape) {
  require_defined(a, "reshape");
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_to_string(a.shape()) + " as " +
                         shape_to_string(shape));
  }
  Tensor result(std::move(shape), std::vector<double>(a.data().begin(), a.data().end()));
  if (detail::should_record({&a})) {
    detail::record(result, [a](std::span<const double> g) { detail::accumulate(a, g); });
  }
  return result;
}

}  // namespace spectrafuse
