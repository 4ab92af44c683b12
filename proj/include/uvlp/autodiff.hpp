#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "uvlp/tensor.hpp"

namespace uvlp {

class Rng;
class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so inputs
/// always precede the nodes that consume them.
///
/// A non-recording tape evaluates the same operations without keeping
/// backward closures; it is what inference paths use.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return recording_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var constant(Tensor value);
  /// Leaf referring to a trainable tensor; gradients land in param.grad()
  /// when param.requires_grad() is set. The tensor must outlive the tape.
  Var parameter(Tensor& param);
  /// Read-only leaf: no gradient is ever written back.
  Var parameter(const Tensor& param);

  /// Appends an operation node. `fn` runs during backward with this
  /// node's output gradient available via grad(self).
  Var push(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn);

  const Tensor& value(std::size_t id) const;
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }

  /// Output gradient of a node during backward (zeros if none arrived).
  std::span<const double> grad(std::size_t id);
  /// Accumulation buffer for an input gradient; empty when the input does
  /// not require a gradient.
  std::span<double> accumulator(std::size_t id);

  /// Populates gradients of every trainable leaf reachable from `loss`.
  /// Parameter gradients accumulate across calls.
  void backward(Var loss);

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor* param = nullptr;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::vector<double> grad;
    bool needs_grad = false;
  };

  Node& fresh_node();

  std::vector<Node> nodes_;
  bool recording_;
};

namespace ad {

enum class Trans : std::uint8_t { kNo, kYes };

Var matmul(Var a, Var b, Trans ta = Trans::kNo, Trans tb = Trans::kNo);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
/// x: m x n, bias: m. Adds bias to every column.
Var add_column_bias(Var x, Var bias);

/// Column-wise normalization: every column of x (d x n) is normalized
/// over its d entries, then scaled by gain and shifted by bias.
Var layer_norm(Var x, Var gain, Var bias, double eps);

/// Row-wise softmax of factor * logits restricted to the columns where
/// `allow` (row-major, same extents as logits) is nonzero. Excluded
/// columns get probability exactly zero.
Var masked_softmax(Var logits, std::span<const std::uint8_t> allow, double factor = 1.0);

Var gelu(Var x);
Var relu(Var x);
Var sigmoid(Var x);
/// Inverted dropout; identity when rate == 0.
Var dropout(Var x, double rate, Rng& rng);

Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var concat_rows(std::span<const Var> parts);
Var select_columns(Var a, std::span<const std::size_t> columns);
Var concat_columns(std::span<const Var> parts);

inline constexpr std::ptrdiff_t kNoRow = -1;
/// Columns built from rows of `table` (V x d): result is d x ids.size().
/// An id of kNoRow yields a zero column.
Var embedding_columns(Var table, std::span<const std::ptrdiff_t> ids);

Var sum(Var a);
Var sum_of(std::span<const Var> scalars);
/// Sum over rows of -log softmax(logits row)[target].
Var cross_entropy_sum(Var logits, std::span<const std::size_t> targets);
/// Mean over entries of binary cross-entropy between sigmoid(logits) and
/// the (possibly fractional) targets.
Var bce_with_logits_mean(Var logits, std::span<const double> targets);

}  // namespace ad

/// Central-difference gradient check of `loss` against the analytic
/// gradient already stored in params.grad(). Returns the maximum over
/// coordinates of |a - n| / max(|a|, |n|, 1e-8).
double finite_diff_check(const std::function<double()>& loss, Tensor& params, double h);

double gelu_value(double x);

}  // namespace uvlp
