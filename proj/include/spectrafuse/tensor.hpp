// SPDX-License-Identifier: Apache-2.0
//
// Dense float64 tensors with a reverse-mode gradient tape.
//
// A Tensor is a shared handle: copies refer to the same storage, `clone()`
// makes an independent copy. Storage is row-major and flat. Operations never
// broadcast; use `expand_rows` where a row vector must be repeated.
//
// Gradients are recorded only while a `Tape` is alive on the calling thread
// and at least one operand requires a gradient. `Tape::backward` walks the
// recorded operations in reverse order, accumulating into leaf `grad()`
// buffers, and then discards the record.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "spectrafuse/errors.hpp"

namespace spectrafuse {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty when no gradient is held
  bool requires_grad = false;
  bool leaf = true;
};

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor from_node(std::shared_ptr<TensorNode> node);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  /// Extent of the last axis (1 for scalars).
  std::size_t cols() const;
  /// Product of all leading axes.
  std::size_t rows() const;

  std::span<const double> data() const;
  /// Direct write access. Intended for parameter initialisation and the
  /// optimizer; writes are invisible to any tape already recorded.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat) const { return data()[flat]; }
  double at(std::size_t r, std::size_t c) const { return data()[r * cols() + c]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  /// Allocates (or resets) a zero gradient buffer.
  void zero_grad();
  /// Releases the gradient buffer entirely.
  void clear_grad();

  /// Same storage values, no gradient tracking, new node.
  Tensor detach() const;
  Tensor clone() const;

  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

/// Gradient record for one forward pass. Constructing a Tape makes it the
/// active tape of the current thread until it is destroyed; tapes nest.
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const double> grad_out)>;

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Seeds d(loss)/d(loss) = 1 and propagates to every participating leaf.
  /// The record is cleared afterwards.
  void backward(const Tensor& loss);

  std::size_t size() const noexcept { return entries_.size(); }
  void clear() noexcept { entries_.clear(); }

  static Tape* active() noexcept;

  void push(std::shared_ptr<TensorNode> output, BackwardFn fn);

 private:
  struct Entry {
    std::shared_ptr<TensorNode> output;
    BackwardFn backward;
  };
  std::vector<Entry> entries_;
  Tape* previous_ = nullptr;
};

/// Runs `Tape::backward` on the active tape; contract error if there is none.
void backward(const Tensor& loss);

namespace detail {

/// True when an op over `inputs` must be recorded.
bool should_record(std::initializer_list<const Tensor*> inputs);
bool should_record(std::span<const Tensor> inputs);

/// Marks `out` as a tape output and stores the backward closure.
void record(Tensor& out, Tape::BackwardFn fn);

/// Adds `g` into the gradient of `t` (allocating it on first use) if `t`
/// requires a gradient.
void accumulate(const Tensor& t, std::span<const double> g);
void accumulate_at(const Tensor& t, std::size_t flat, double g);
/// Writable gradient buffer of `t`, allocated if needed.
std::span<double> grad_buffer(const Tensor& t);

}  // namespace detail

// ---------------------------------------------------------------------------
// Operations. Elementwise ops require identical shapes.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor neg(const Tensor& a);

/// a[m×k] · b[k×n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// a[m×k] · b[n×k]ᵀ
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor sigmoid(const Tensor& a);
/// Exact GELU, x·Φ(x).
Tensor gelu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);

/// Sum/mean over every element, returning a scalar.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Row-wise softmax over the last axis with max subtraction.
Tensor softmax_last_dim(const Tensor& a);

Tensor concat_last_dim(std::span<const Tensor> parts);
Tensor concat_last_dim(std::initializer_list<Tensor> parts);
/// Columns [begin, begin+len) of the last axis.
Tensor slice_last_dim(const Tensor& a, std::size_t begin, std::size_t len);

/// Stacks rank-2 (or rank-1, as a single row) tensors along the first axis.
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_rows(std::initializer_list<Tensor> parts);
/// Selects rows by index; indices may repeat.
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);
/// Repeats a [d] or [1×d] vector into [n×d].
Tensor expand_rows(const Tensor& v, std::size_t n);
/// Mean over rows of [n×d], giving [d].
Tensor mean_rows(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

// ---------------------------------------------------------------------------
// Serialization: "TNSR", u32 version, u32 rank, u64 extents, f64 payload,
// all little-endian.

inline constexpr std::uint32_t kTensorFormatVersion = 1;

void write_tensor(std::ostream& out, const Tensor& t);
std::vector<std::uint8_t> encode_tensor(const Tensor& t);
/// Decodes one tensor starting at `offset`; advances `offset` past it.
/// Errors carry the absolute byte offset of the failure.
Tensor decode_tensor(std::span<const std::uint8_t> bytes, std::size_t& offset);
Tensor read_tensor_file(const std::string& path);
void write_tensor_file(const std::string& path, const Tensor& t);

}  // namespace spectrafuse
