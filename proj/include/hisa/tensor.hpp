#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "hisa/errors.hpp"
#include "hisa/rng.hpp"

namespace hisa {

#ifdef HISA_SCALAR_FLOAT
using Scalar = float;
#else
using Scalar = double;
#endif

using Shape = std::vector<int>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Named trainable value. Lives outside any tape; a forward pass binds it onto
/// the tape via Tape::leaf and backward() accumulates into `grad`.
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<Scalar> value;
  std::vector<Scalar> grad;

  Parameter() = default;
  Parameter(std::string n, Shape s);

  std::int64_t size() const { return static_cast<std::int64_t>(value.size()); }
  void zero_grad();
  void fill(Scalar v);
  void init_xavier_uniform(Rng& rng);
  void init_normal(Rng& rng, Scalar stddev);
};

/// Dense boolean matrix used for attention masking. True = position visible.
struct BoolMask {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> data;

  BoolMask() = default;
  // Starts fully hidden; callers mark the visible entries. A forgotten mark
  // then fails loudly in masked_softmax instead of silently attending.
  BoolMask(int r, int c, std::uint8_t fill = 0)
      : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

  bool at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c] != 0; }
  void set(int r, int c, bool v) { data[static_cast<std::size_t>(r) * cols + c] = v ? 1 : 0; }
};

class Tape;

/// Lightweight handle to a node on a Tape. Copyable; does not own storage.
class Tensor {
 public:
  Tensor() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

  const Shape& shape() const;
  int rank() const;
  int dim(int axis) const;
  std::int64_t size() const;
  const std::vector<Scalar>& value() const;
  /// Gradient accumulated by backward(). Empty until the first backward pass
  /// that reaches this node.
  const std::vector<Scalar>& grad() const;
  Scalar item() const;
  bool requires_grad() const;
  bool all_finite() const;

 private:
  friend class Tape;
  Tensor(Tape* t, int id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Records every differentiable operation of one forward pass in execution
/// order; backward() replays the record in reverse. Single-threaded per tape.
class Tape {
 public:
  struct Node {
    Shape shape;
    std::vector<Scalar> value;
    std::vector<Scalar> acc_grad;  // accumulated across backward() calls
    std::vector<Scalar> sweep;     // scratch for the current backward() call
    bool requires_grad = false;
    std::function<void()> backward;
    Parameter* bound = nullptr;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Non-differentiable value.
  Tensor constant(Shape shape, std::vector<Scalar> data);
  Tensor scalar_constant(Scalar v);
  /// Differentiable leaf not tied to a Parameter (tests, probes).
  Tensor input(Shape shape, std::vector<Scalar> data);
  /// Differentiable leaf bound to a Parameter: copies its current value;
  /// backward() adds the leaf's gradient into p.grad.
  Tensor leaf(Parameter& p);
  /// Parameter value without gradient tracking (inference paths).
  Tensor frozen_leaf(const Parameter& p);

  /// Reverse sweep from a scalar loss. Gradients of repeated calls accumulate.
  void backward(const Tensor& loss);

  int num_nodes() const { return static_cast<int>(nodes_.size()); }
  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

  Tensor make_node(Shape shape, std::vector<Scalar> value, bool requires_grad);
  std::vector<Scalar>& sweep_of(int id);

 private:
  std::deque<Node> nodes_;
};

// --- operations -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// scale * x + shift, elementwise.
Tensor affine(const Tensor& x, Scalar scale, Scalar shift);
/// x[T,d] + b[d] broadcast over rows.
Tensor add_row_vector(const Tensor& x, const Tensor& b);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Column sums (axis=0 -> [cols]) or row sums (axis=1 -> [rows]) of a matrix.
Tensor sum_axis(const Tensor& x, int axis);
Tensor transpose(const Tensor& x);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice_rows(const Tensor& x, int start, int len);
Tensor slice_cols(const Tensor& x, int start, int len);
Tensor reshape(const Tensor& x, Shape shape);
Tensor softmax(const Tensor& x, int axis);
Tensor log_softmax(const Tensor& x, int axis);
/// Row-wise softmax over visible entries only; masked entries are exactly 0.
/// Every row must have at least one visible entry.
Tensor masked_softmax(const Tensor& scores, const BoolMask& mask);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Scalar eps = static_cast<Scalar>(1e-5));
/// Gathers rows of an embedding table: result row j = table row ids[j].
Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids);
/// result[t] = x[t, cols[t]] for a matrix x.
Tensor gather_per_row(const Tensor& x, const std::vector<int>& cols);
/// KL(p || q) with constant p; q entries floored at `floor` before division.
Tensor kl_divergence(const std::vector<Scalar>& p, const Tensor& q,
                     Scalar floor = static_cast<Scalar>(1e-12));
/// Inverted dropout with a caller-supplied source; rate 0 is the identity.
Tensor dropout(const Tensor& x, Scalar rate, Rng& rng);

}  // namespace hisa
