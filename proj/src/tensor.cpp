#include "hisa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <sstream>
#include <utility>

namespace hisa {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

namespace {

void check_shape_valid(const Shape& shape) {
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
  }
}

void check_same_tape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.tape() != b.tape()) {
    throw ValueError(std::string(op) + ": operands live on different tapes");
  }
}

void check_valid(const Tensor& t, const char* op) {
  if (!t.valid()) throw ValueError(std::string(op) + ": null tensor handle");
}

}  // namespace

// --- Parameter --------------------------------------------------------------

Parameter::Parameter(std::string n, Shape s) : name(std::move(n)), shape(std::move(s)) {
  check_shape_valid(shape);
  value.assign(static_cast<std::size_t>(numel(shape)), Scalar(0));
  grad.assign(value.size(), Scalar(0));
}

void Parameter::zero_grad() { std::fill(grad.begin(), grad.end(), Scalar(0)); }

void Parameter::fill(Scalar v) { std::fill(value.begin(), value.end(), v); }

void Parameter::init_xavier_uniform(Rng& rng) {
  int fan_in = shape.empty() ? 1 : shape[0];
  int fan_out = shape.size() > 1 ? shape[1] : shape[0];
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  for (auto& v : value) v = static_cast<Scalar>(rng.uniform(-a, a));
}

void Parameter::init_normal(Rng& rng, Scalar stddev) {
  for (auto& v : value) v = static_cast<Scalar>(rng.normal(0.0, stddev));
}

// --- Tensor -----------------------------------------------------------------

const Shape& Tensor::shape() const { return tape_->node(id_).shape; }
int Tensor::rank() const { return static_cast<int>(shape().size()); }

int Tensor::dim(int axis) const {
  const Shape& s = shape();
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw ShapeError("dim(" + std::to_string(axis) + ") out of range for " + shape_str(s));
  }
  return s[axis];
}

std::int64_t Tensor::size() const { return static_cast<std::int64_t>(value().size()); }
const std::vector<Scalar>& Tensor::value() const { return tape_->node(id_).value; }
const std::vector<Scalar>& Tensor::grad() const { return tape_->node(id_).acc_grad; }

Scalar Tensor::item() const {
  if (size() != 1) {
    throw ShapeError("item() requires a single-element tensor, got " + shape_str(shape()));
  }
  return value()[0];
}

bool Tensor::requires_grad() const { return tape_->node(id_).requires_grad; }

bool Tensor::all_finite() const {
  for (Scalar v : value()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// --- Tape -------------------------------------------------------------------

Tensor Tape::make_node(Shape shape, std::vector<Scalar> value, bool requires_grad) {
  check_shape_valid(shape);
  if (numel(shape) != static_cast<std::int64_t>(value.size())) {
    throw ShapeError("value length " + std::to_string(value.size()) +
                     " does not match shape " + shape_str(shape));
  }
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Tape::constant(Shape shape, std::vector<Scalar> data) {
  return make_node(std::move(shape), std::move(data), false);
}

Tensor Tape::scalar_constant(Scalar v) { return constant({1}, {v}); }

Tensor Tape::input(Shape shape, std::vector<Scalar> data) {
  return make_node(std::move(shape), std::move(data), true);
}

Tensor Tape::leaf(Parameter& p) {
  Tensor t = make_node(p.shape, p.value, true);
  node(t.id()).bound = &p;
  return t;
}

Tensor Tape::frozen_leaf(const Parameter& p) {
  return make_node(p.shape, p.value, false);
}

std::vector<Scalar>& Tape::sweep_of(int id) {
  Node& n = node(id);
  if (n.sweep.empty()) n.sweep.assign(n.value.size(), Scalar(0));
  return n.sweep;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.valid() || loss.tape() != this) {
    throw ValueError("backward: loss is not on this tape");
  }
  if (loss.size() != 1) {
    throw ShapeError("backward requires a scalar loss, got " + shape_str(loss.shape()));
  }
  const int top = loss.id();
  for (int id = 0; id <= top; ++id) node(id).sweep.clear();
  if (!node(top).requires_grad) return;  // constant loss: nothing to do
  sweep_of(top)[0] = Scalar(1);
  for (int id = top; id >= 0; --id) {
    Node& n = node(id);
    if (n.requires_grad && !n.sweep.empty() && n.backward) n.backward();
  }
  for (int id = 0; id <= top; ++id) {
    Node& n = node(id);
    if (!n.requires_grad || n.sweep.empty()) continue;
    if (n.acc_grad.empty()) n.acc_grad.assign(n.value.size(), Scalar(0));
    for (std::size_t i = 0; i < n.sweep.size(); ++i) n.acc_grad[i] += n.sweep[i];
    if (n.bound != nullptr) {
      for (std::size_t i = 0; i < n.sweep.size(); ++i) n.bound->grad[i] += n.sweep[i];
    }
  }
}

// --- op helpers -------------------------------------------------------------

namespace {

struct Dims2 {
  int rows;
  int cols;
};

Dims2 as_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + " expects a matrix, got " + shape_str(t.shape()));
  }
  return {t.dim(0), t.dim(1)};
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

}  // namespace

// --- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_valid(a, "add");
  check_valid(b, "add");
  check_same_tape(a, b, "add");
  check_same_shape(a, b, "add");
  Tape& tape = *a.tape();
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<Scalar> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  bool rg = a.requires_grad() || b.requires_grad();
  Tensor c = tape.make_node(a.shape(), std::move(out), rg);
  if (rg) {
    Tape* tp = &tape;
    int aid = a.id(), bid = b.id(), cid = c.id();
    bool ag = a.requires_grad(), bg = b.requires_grad();
    tape.node(cid).backward = [tp, aid, bid, cid, ag, bg] {
      const auto& g = tp->node(cid).sweep;
      if (ag) {
        auto& da = tp->sweep_of(aid);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
      }
      if (bg) {
        auto& db = tp->sweep_of(bid);
        for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i];
      }
    };
  }
  return c;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_valid(a, "sub");
  check_valid(b, "sub");
  check_same_tape(a, b, "sub");
  check_same_shape(a, b, "sub");
  Tape& tape = *a.tape();
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<Scalar> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  bool rg = a.requires_grad() || b.requires_grad();
  Tensor c = tape.make_node(a.shape(), std::move(out), rg);
  if (rg) {
    Tape* tp = &tape;
    int aid = a.id(), bid = b.id(), cid = c.id();
    bool ag = a.requires_grad(), bg = b.requires_grad();
    tape.node(cid).backward = [tp, aid, bid, cid, ag, bg] {
      const auto& g = tp->node(cid).sweep;
      if (ag) {
        auto& da = tp->sweep_of(aid);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
      }
      if (bg) {
        auto& db = tp->sweep_of(bid);
        for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
      }
    };
  }
  return c;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_valid(a, "mul");
  check_valid(b, "mul");
  check_same_tape(a, b, "mul");
  check_same_shape(a, b, "mul");
  Tape& tape = *a.tape();
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<Scalar> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  bool rg = a.requires_grad() || b.requires_grad();
  Tensor c = tape.make_node(a.shape(), std::move(out), rg);
  if (rg) {
    Tape* tp = &tape;
    int aid = a.id(), bid = b.id(), cid = c.id();
    bool ag = a.requires_grad(), bg = b.requires_grad();
    tape.node(cid).backward = [tp, aid, bid, cid, ag, bg] {
      const auto& g = tp->node(cid).sweep;
      const auto& av2 = tp->node(aid).value;
      const auto& bv2 = tp->node(bid).value;
      if (ag) {
        auto& da = tp->sweep_of(aid);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bv2[i];
      }
      if (bg) {
        auto& db = tp->sweep_of(bid);
        for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * av2[i];
      }
    };
  }
  return c;
}

Tensor affine(const Tensor& x, Scalar scale, Scalar shift) {
  check_valid(x, "affine");
  Tape& tape = *x.tape();
  const auto& xv = x.value();
  std::vector<Scalar> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = scale * xv[i] + shift;
  bool rg = x.requires_grad();
  Tensor c = tape.make_node(x.shape(), std::move(out), rg);
  if (rg) {
    Tape* tp = &tape;
    int xid = x.id(), cid = c.id();
    tape.node(cid).backward = [tp, xid, cid, scale] {
      const auto& g = tp->node(cid).sweep;
      auto& dx = tp->sweep_of(xid);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += scale * g[i];
    };
  }
  return c;
}

Tensor add_row_vector(const Tensor& x, const Tensor& b) {
  check_valid(x, "add_row_vector");
  check_valid(b, "add_row_vector");
  check_same_tape(x, b, "add_row_vector");
  Dims2 d = as_matrix(x, "add_row_vector");
  if (b.rank() != 1 || b.dim(0) != d.cols) {
    throw ShapeError("add_row_vector: vector " + shape_str(b.shape()) +
                     " does not match matrix " + shape_str(x.shape()));
  }
  Tape& tape = *x.tape();
  const auto& xv = x.value();
  const auto& bv = b.value();
  std::vector<Scalar> out(xv.size());
  for (int r = 0; r < d.rows; ++r) {
    for (int c = 0; c < d.cols; ++c) {
      out[static_cast<std::size_t>(r) * d.cols + c] =
          xv[static_cast<std::size_t>(r) * d.cols + c] + bv[static_cast<std::size_t>(c)];
    }
  }
  bool rg = x.requires_grad() || b.requires_grad();
  Tensor c = tape.make_node(x.shape(), std::move(out), rg);
  if (rg) {
    Tape* tp = &tape;
    int xid = x.id(), bid = b.id(), cid = c.id();
    bool xg = x.requires_grad(), bg = b.requires_grad();
    int rows = d.rows, cols = d.cols;
    tape.node(cid).backward = [tp, xid, bid, cid, xg, bg, rows, cols] {
      const auto& g = tp->node(cid).sweep;
      if (xg) {
        auto& dx = tp->sweep_of(xid);
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
      }
      if (bg) {
        auto& db = tp->sweep_of(bid);
        for (int r = 0; r < rows; ++r) {
          for (int c2 = 0; c2 < cols; ++c2) {
            db[static_cast<std::size_t>(c2)] += g[static_cast<std::size_t>(r) * cols + c2];
          }
        }
      }
    };
  }
  return c;
}

Tensor sigmoid(const Tensor& x) {
  check_valid(x, "sigmoid");
  Tape& tape = *x.tape();
  const auto& xv = x.value();
  std::vector<Scalar> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    // split by sign so exp never overflows
    if (xv[i] >= 0) {
      out[i] = Scalar(1) / (Scalar(1) + std::exp(-xv[i]));
    } else {
      const Scalar e = std::exp(xv[i]);
      out[i] = e / (Scalar(1) + e);
    }
  }
  bool rg = x.requires_grad();
  Tensor c = tape.make_node(x.shape(), std::move(out), rg);
  if (rg) {
    Tape* tp = &tape;
    int xid = x.id(), cid = c.id();
    tape.node(cid).backward = [tp, xid, cid] {
      const auto& g = tp->node(cid).sweep;
      const auto& y = tp->node(cid).value;
      auto& dx = tp->sweep_of(xid);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * y[i] * (Scalar(1) - y[i]);
    };
  }
  return c;
}

Tensor relu(const Tensor& x) {
  check_valid(x, "relu");
  Tape& tape = *x.tape();
  const auto& xv = x.value();
  std::vector<Scalar> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > 0 ? xv[i] : Scalar(0);
  bool rg = x.requires_grad();
  Tensor c = tape.make_node(x.shape(), std::move(out), rg);
  if (rg) {
    Tape* tp = &tape;
    int xid = x.id(), cid = c.id();
    tape.node(cid).backward = [tp, xid, cid] {
      const auto& g = tp->node(cid).sweep;
      const auto& xv2 = tp->node(xid).value;
      auto& dx = tp->sweep_of(xid);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (xv2[i] > 0) dx[i] += g[i];
      }
    };
  }
  return c;
}

Tensor log(const Tensor& x) {
  check_valid(x, "log");
  Tape& tape = *x.tape();
  const auto& xv = x.value();
  std::vector<Scalar> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (!(xv[i] > 0)) {
      throw ValueError("log: non-positive input " + std::to_string(xv[i]) + " at index " +
                       std::to_string(i));
    }
    out[i] = std::log(xv[i]);
  }
  bool rg = x.requires_grad();
  Tensor c = tape.make_node(x.shape(), std::move(out), rg);
  if (rg) {
    Tape* tp = &tape;
    int xid = x.id(), cid = c.id();
    tape.node(cid).backward = [tp, xid, cid] {
      const auto& g = tp->node(cid).sweep;
      const auto& xv2 = tp->node(xid).value;
      auto& dx = tp->sweep_of(xid);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] / xv2[i];
    };
  }
  return c;
}

// --- reductions -------------------------------------------------------------

Tensor sum(const Tensor& x) {
  check_valid(x, "sum");
  Tape& tape = *x.tape();
  const auto& xv = x.value();
  Scalar acc = 0;
  for (Scalar v : xv) acc += v;
  bool rg = x.requires_grad();
  Tensor c = tape.make_node({1}, {acc}, rg);
  if (rg) {
    Tape* tp = &tape;
    int xid = x.id(), cid = c.id();
    tape.node(cid).backward = [tp, xid, cid] {
      const Scalar g = tp->node(cid).sweep[0];
      auto& dx = tp->sweep_of(xid);
      for (auto& v : dx) v += g;
    };
  }
  return c;
}

Tensor mean(const Tensor& x) {
  check_valid(x, "mean");
  if (x.size() == 0) throw ShapeError("mean of an empty tensor");
  Tape& tape = *x.tape();
  const auto& xv = x.value();
  Scalar acc = 0;
  for (Scalar v : xv) acc += v;
  const Scalar n = static_cast<Scalar>(xv.size());
  bool rg = x.requires_grad();
  Tensor c = tape.make_node({1}, {acc / n}, rg);
  if (rg) {
    Tape* tp = &tape;
    int xid = x.id(), cid = c.id();
    tape.node(cid).backward = [tp, xid, cid, n] {
      const Scalar g = tp->node(cid).sweep[0] / n;
      auto& dx = tp->sweep_of(xid);
      for (auto& v : dx) v += g;
    };
  }
  return c;
}

Tensor sum_axis(const Tensor& x, int axis) {
  check_valid(x, "sum_axis");
  Dims2 d = as_matrix(x, "sum_axis");
  if (axis != 0 && axis != 1) throw ShapeError("sum_axis: axis must be 0 or 1");
  Tape& tape = *x.tape();
  const auto& xv = x.value();
  const int out_len = axis == 0 ? d.cols : d.rows;
  std::vector<Scalar> out(static_cast<std::size_t>(out_len), Scalar(0));
  for (int r = 0; r < d.rows; ++r) {
    for (int c = 0; c < d.cols; ++c) {
      out[static_cast<std::size_t>(axis == 0 ? c : r)] +=
          xv[static_cast<std::size_t>(r) * d.cols + c];
    }
  }
  bool rg = x.requires_grad();
  Tensor c = tape.make_node({out_len}, std::move(out), rg);
  if (rg) {
    Tape* tp = &tape;
    int xid = x.id(), cid = c.id();
    int rows = d.rows, cols = d.cols;
    tape.node(cid).backward = [tp, xid, cid, rows, cols, axis] {
      const auto& g = tp->node(cid).sweep;
      auto& dx = tp->sweep_of(xid);
      for (int r = 0; r < rows; ++r) {
        for (int c2 = 0; c2 < cols; ++c2) {
          dx[static_cast<std::size_t>(r) * cols + c2] +=
              g[static_cast<std::size_t>(axis == 0 ? c2 : r)];
        }
      }
    };
  }
  return c;
}

// --- structure --------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_valid(a, "matmul");
  check_valid(b, "matmul");
  check_same_tape(a, b, "matmul");
  Dims2 da = as_matrix(a, "matmul");
  Dims2 db = as_matrix(b, "matmul");
  if (da.cols != db.rows) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  Tape& tape = *a.tape();
  const int m = da.rows, k = da.cols, n = db.cols;
  const auto& av = a.value();
  const auto& bv = b.value();
  std::vector<Scalar> out(static_cast<std::size_t>(m) * n, Scalar(0));
  for (int i = 0; i < m; ++i) {
    const Scalar* arow = av.data() + static_cast<std::size_t>(i) * k;
    Scalar* crow = out.data() + static_cast<std::size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const Scalar aval = arow[kk];
      const Scalar* brow = bv.data() + static_cast<std::size_t>(kk) * n;
      for (int j = 0; j < n; ++j) crow[j] += aval * brow[j];
    }
  }
  bool rg = a.requires_grad() || b.requires_grad();
  Tensor c = tape.make_node({m, n}, std::move(out), rg);
  if (rg) {
    Tape* tp = &tape;
    int aid = a.id(), bid = b.id(), cid = c.id();
    bool ag = a.requires_grad(), bg = b.requires_grad();
    tape.node(cid).backward = [tp, aid, bid, cid, ag, bg, m, k, n] {
      const auto& g = tp->node(cid).sweep;
      const auto& av2 = tp->node(aid).value;
      const auto& bv2 = tp->node(bid).value;
      if (ag) {
        // dA = dC * B^T
        auto& da2 = tp->sweep_of(aid);
        for (int i = 0; i < m; ++i) {
          const Scalar* grow = g.data() + static_cast<std::size_t>(i) * n;
          Scalar* darow = da2.data() + static_cast<std::size_t>(i) * k;
          for (int kk = 0; kk < k; ++kk) {
            const Scalar* brow = bv2.data() + static_cast<std::size_t>(kk) * n;
            Scalar acc = 0;
            for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
            darow[kk] += acc;
          }
        }
      }
      if (bg) {
        // dB = A^T * dC
        auto& db2 = tp->sweep_of(bid);
        for (int kk = 0; kk < k; ++kk) {
          Scalar* dbrow = db2.data() + static_cast<std::size_t>(kk) * n;
          for (int i = 0; i < m; ++i) {
            const Scalar aval = av2[static_cast<std::size_t>(i) * k + kk];
            const Scalar* grow = g.data() + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) dbrow[j] += aval * grow[j];
          }
        }
      }
    };
  }
  return c;
}

Tensor transpose(const Tensor& x) {
  check_valid(x, "transpose");
  Dims2 d = as_matrix(x, "transpose");
  Tape& tape = *x.tape();
  const auto& xv = x.value();
  std::vector<Scalar> out(xv.size());
  for (int r = 0; r < d.rows; ++r) {
    for (int c = 0; c < d.cols; ++c) {
      out[static_cast<std::size_t>(c) * d.rows + r] = xv[static_cast<std::size_t>(r) * d.cols + c];
    }
  }
  bool rg = x.requires_grad();
  Tensor c = tape.make_node({d.cols, d.rows}, std::move(out), rg);
  if (rg) {
    Tape* tp = &tape;
    int xid = x.id(), cid = c.id();
    int rows = d.rows, cols = d.cols;
    tape.node(cid).backward = [tp, xid, cid, rows, cols] {
      const auto& g = tp->node(cid).sweep;
      auto& dx = tp->sweep_of(xid);
      for (int r = 0; r < rows; ++r) {
        for (int c2 = 0; c2 < cols; ++c2) {
          dx[static_cast<std::size_t>(r) * cols + c2] += g[static_cast<std::size_t>(c2) * rows + r];
        }
      }
    };
  }
  return c;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  for (const Tensor& p : parts) {
    check_valid(p, "concat");
    as_matrix(p, "concat");
    check_same_tape(parts[0], p, "concat");
  }
  const int fixed = axis == 0 ? parts[0].dim(1) : parts[0].dim(0);
  int total = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    const int pf = axis == 0 ? p.dim(1) : p.dim(0);
    if (pf != fixed) {
      throw ShapeError("concat: incompatible shapes " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    total += axis == 0 ? p.dim(0) : p.dim(1);
    rg = rg || p.requires_grad();
  }
  Tape& tape = *parts[0].tape();
  Shape out_shape = axis == 0 ? Shape{total, fixed} : Shape{fixed, total};
  std::vector<Scalar> out(static_cast<std::size_t>(total) * fixed);
  if (axis == 0) {
    std::size_t off = 0;
    for (const Tensor& p : parts) {
      const auto& pv = p.value();
      std::copy(pv.begin(), pv.end(), out.begin() + static_cast<std::ptrdiff_t>(off));
      off += pv.size();
    }
  } else {
    int col_off = 0;
    for (const Tensor& p : parts) {
      const auto& pv = p.value();
      const int pc = p.dim(1);
      for (int r = 0; r < fixed; ++r) {
        for (int c = 0; c < pc; ++c) {
          out[static_cast<std::size_t>(r) * total + col_off + c] =
              pv[static_cast<std::size_t>(r) * pc + c];
        }
      }
      col_off += pc;
    }
  }
  Tensor c = tape.make_node(std::move(out_shape), std::move(out), rg);
  if (rg) {
    Tape* tp = &tape;
    int cid = c.id();
    std::vector<int> ids;
    std::vector<int> sizes;  // extent along axis
    std::vector<char> grads;
    ids.reserve(parts.size());
    for (const Tensor& p : parts) {
      ids.push_back(p.id());
      sizes.push_back(axis == 0 ? p.dim(0) : p.dim(1));
      grads.push_back(p.requires_grad() ? 1 : 0);
    }
    tape.node(cid).backward = [tp, cid, ids, sizes, grads, axis, fixed, total] {
      const auto& g = tp->node(cid).sweep;
      int off = 0;
      for (std::size_t pi = 0; pi < ids.size(); ++pi) {
        const int ext = sizes[pi];
        if (grads[pi]) {
          auto& dp = tp->sweep_of(ids[pi]);
          if (axis == 0) {
            for (int r = 0; r < ext; ++r) {
              for (int c2 = 0; c2 < fixed; ++c2) {
                dp[static_cast<std::size_t>(r) * fixed + c2] +=
                    g[static_cast<std::size_t>(off + r) * fixed + c2];
              }
            }
          } else {
            for (int r = 0; r < fixed; ++r) {
              for (int c2 = 0; c2 < ext; ++c2) {
                dp[static_cast<std::size_t>(r) * ext + c2] +=
                    g[static_cast<std::size_t>(r) * total + off + c2];
              }
            }
          }
        }
        off += ext;
      }
    };
  }
  return c;
}

namespace {

Tensor slice_impl(const Tensor& x, int axis, int start, int len, const char* op) {
  check_valid(x, op);
  Dims2 d = as_matrix(x, op);
  const int extent = axis == 0 ? d.rows : d.cols;
  if (start < 0 || len < 1 || start + len > extent) {
    throw ShapeError(std::string(op) + ": range [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") out of bounds for " +
                     shape_str(x.shape()));
  }
  Tape& tape = *x.tape();
  const auto& xv = x.value();
  Shape out_shape = axis == 0 ? Shape{len, d.cols} : Shape{d.rows, len};
  std::vector<Scalar> out(static_cast<std::size_t>(numel(out_shape)));
  if (axis == 0) {
    std::copy(xv.begin() + static_cast<std::ptrdiff_t>(start) * d.cols,
              xv.begin() + static_cast<std::ptrdiff_t>(start + len) * d.cols, out.begin());
  } else {
    for (int r = 0; r < d.rows; ++r) {
      for (int c = 0; c < len; ++c) {
        out[static_cast<std::size_t>(r) * len + c] =
            xv[static_cast<std::size_t>(r) * d.cols + start + c];
      }
    }
  }
  bool rg = x.requires_grad();
  Tensor c = tape.make_node(std::move(out_shape), std::move(out), rg);
  if (rg) {
    Tape* tp = &tape;
    int xid = x.id(), cid = c.id();
    int rows = d.rows, cols = d.cols;
    tape.node(cid).backward = [tp, xid, cid, rows, cols, axis, start, len] {
      const auto& g = tp->node(cid).sweep;
      auto& dx = tp->sweep_of(xid);
      if (axis == 0) {
        for (int r = 0; r < len; ++r) {
          for (int c2 = 0; c2 < cols; ++c2) {
            dx[static_cast<std::size_t>(start + r) * cols + c2] +=
                g[static_cast<std::size_t>(r) * cols + c2];
          }
        }
      } else {
        for (int r = 0; r < rows; ++r) {
          for (int c2 = 0; c2 < len; ++c2) {
            dx[static_cast<std::size_t>(r) * cols + start + c2] +=
                g[static_cast<std::size_t>(r) * len + c2];
          }
        }
      }
    };
  }
  return c;
}

}  // namespace

Tensor slice_rows(const Tensor& x, int start, int len) {
  return slice_impl(x, 0, start, len, "slice_rows");
}

Tensor slice_cols(const Tensor& x, int start, int len) {
  return slice_impl(x, 1, start, len, "slice_cols");
}

Tensor reshape(const Tensor& x, Shape shape) {
  check_valid(x, "reshape");
  check_shape_valid(shape);
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tape& tape = *x.tape();
  bool rg = x.requires_grad();
  Tensor c = tape.make_node(std::move(shape), x.value(), rg);
  if (rg) {
    Tape* tp = &tape;
    int xid = x.id(), cid = c.id();
    tape.node(cid).backward = [tp, xid, cid] {
      const auto& g = tp->node(cid).sweep;
      auto& dx = tp->sweep_of(xid);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
    };
  }
  return c;
}

// --- softmax family ---------------------------------------------------------

namespace {

// Treats x as a stack of `outer` rows of length `len` with stride `stride`
// along the softmax axis. For rank-1 or axis=1 this is contiguous rows; for
// axis=0 it walks columns.
struct AxisView {
  int outer;
  int len;
  std::size_t row_step;
  std::size_t elem_step;
};

AxisView axis_view(const Tensor& x, int axis, const char* op) {
  if (x.rank() == 1) {
    if (axis != 0) throw ShapeError(std::string(op) + ": axis out of range for vector");
    if (x.dim(0) == 0) throw ShapeError(std::string(op) + ": empty axis");
    return {1, x.dim(0), 0, 1};
  }
  if (x.rank() != 2) {
    throw ShapeError(std::string(op) + " expects a vector or matrix, got " +
                     shape_str(x.shape()));
  }
  const int rows = x.dim(0), cols = x.dim(1);
  if (axis != 0 && axis != 1) throw ShapeError(std::string(op) + ": axis must be 0 or 1");
  const int len = axis == 0 ? rows : cols;
  if (len == 0 || (axis == 0 ? cols : rows) == 0) {
    throw ShapeError(std::string(op) + ": empty axis in " + shape_str(x.shape()));
  }
  if (axis == 1) return {rows, cols, static_cast<std::size_t>(cols), 1};
  return {cols, rows, 1, static_cast<std::size_t>(cols)};
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
  check_valid(x, "softmax");
  AxisView v = axis_view(x, axis, "softmax");
  Tape& tape = *x.tape();
  const auto& xv = x.value();
  std::vector<Scalar> out(xv.size());
  for (int o = 0; o < v.outer; ++o) {
    const std::size_t base = static_cast<std::size_t>(o) * v.row_step;
    Scalar mx = xv[base];
    for (int i = 1; i < v.len; ++i) mx = std::max(mx, xv[base + i * v.elem_step]);
    Scalar denom = 0;
    for (int i = 0; i < v.len; ++i) {
      const Scalar e = std::exp(xv[base + i * v.elem_step] - mx);
      out[base + i * v.elem_step] = e;
      denom += e;
    }
    for (int i = 0; i < v.len; ++i) out[base + i * v.elem_step] /= denom;
  }
  bool rg = x.requires_grad();
  Tensor c = tape.make_node(x.shape(), std::move(out), rg);
  if (rg) {
    Tape* tp = &tape;
    int xid = x.id(), cid = c.id();
    tape.node(cid).backward = [tp, xid, cid, v] {
      const auto& g = tp->node(cid).sweep;
      const auto& y = tp->node(cid).value;
      auto& dx = tp->sweep_of(xid);
      for (int o = 0; o < v.outer; ++o) {
        const std::size_t base = static_cast<std::size_t>(o) * v.row_step;
        Scalar dot = 0;
        for (int i = 0; i < v.len; ++i) {
          dot += g[base + i * v.elem_step] * y[base + i * v.elem_step];
        }
        for (int i = 0; i < v.len; ++i) {
          const std::size_t idx = base + i * v.elem_step;
          dx[idx] += (g[idx] - dot) * y[idx];
        }
      }
    };
  }
  return c;
}

Tensor log_softmax(const Tensor& x, int axis) {
  check_valid(x, "log_softmax");
  AxisView v = axis_view(x, axis, "log_softmax");
  Tape& tape = *x.tape();
  const auto& xv = x.value();
  std::vector<Scalar> out(xv.size());
  for (int o = 0; o < v.outer; ++o) {
    const std::size_t base = static_cast<std::size_t>(o) * v.row_step;
    Scalar mx = xv[base];
    for (int i = 1; i < v.len; ++i) mx = std::max(mx, xv[base + i * v.elem_step]);
    Scalar denom = 0;
    for (int i = 0; i < v.len; ++i) denom += std::exp(xv[base + i * v.elem_step] - mx);
    const Scalar lse = mx + std::log(denom);
    for (int i = 0; i < v.len; ++i) {
      out[base + i * v.elem_step] = xv[base + i * v.elem_step] - lse;
    }
  }
  bool rg = x.requires_grad();
  Tensor c = tape.make_node(x.shape(), std::move(out), rg);
  if (rg) {
    Tape* tp = &tape;
    int xid = x.id(), cid = c.id();
    tape.node(cid).backward = [tp, xid, cid, v] {
      const auto& g = tp->node(cid).sweep;
      const auto& y = tp->node(cid).value;  // log-probabilities
      auto& dx = tp->sweep_of(xid);
      for (int o = 0; o < v.outer; ++o) {
        const std::size_t base = static_cast<std::size_t>(o) * v.row_step;
        Scalar gsum = 0;
        for (int i = 0; i < v.len; ++i) gsum += g[base + i * v.elem_step];
        for (int i = 0; i < v.len; ++i) {
          const std::size_t idx = base + i * v.elem_step;
          dx[idx] += g[idx] - std::exp(y[idx]) * gsum;
        }
      }
    };
  }
  return c;
}

Tensor masked_softmax(const Tensor& scores, const BoolMask& mask) {
  check_valid(scores, "masked_softmax");
  Dims2 d = as_matrix(scores, "masked_softmax");
  if (mask.rows != d.rows || mask.cols != d.cols) {
    throw ShapeError("masked_softmax: mask " + std::to_string(mask.rows) + "x" +
                     std::to_string(mask.cols) + " does not match scores " +
                     shape_str(scores.shape()));
  }
  Tape& tape = *scores.tape();
  const auto& xv = scores.value();
  std::vector<Scalar> out(xv.size(), Scalar(0));
  for (int r = 0; r < d.rows; ++r) {
    const std::size_t base = static_cast<std::size_t>(r) * d.cols;
    Scalar mx = -std::numeric_limits<Scalar>::infinity();
    int visible = 0;
    for (int c = 0; c < d.cols; ++c) {
      if (mask.at(r, c)) {
        mx = std::max(mx, xv[base + c]);
        ++visible;
      }
    }
    if (visible == 0) {
      throw ValueError("masked_softmax: row " + std::to_string(r) +
                       " is fully masked (softmax would be undefined)");
    }
    Scalar denom = 0;
    for (int c = 0; c < d.cols; ++c) {
      if (mask.at(r, c)) {
        const Scalar e = std::exp(xv[base + c] - mx);
        out[base + c] = e;
        denom += e;
      }
    }
    for (int c = 0; c < d.cols; ++c) {
      if (mask.at(r, c)) out[base + c] /= denom;
    }
  }
  bool rg = scores.requires_grad();
  Tensor c = tape.make_node(scores.shape(), std::move(out), rg);
  if (rg) {
    Tape* tp = &tape;
    int xid = scores.id(), cid = c.id();
    BoolMask m = mask;
    int rows = d.rows, cols = d.cols;
    tape.node(cid).backward = [tp, xid, cid, m, rows, cols] {
      const auto& g = tp->node(cid).sweep;
      const auto& y = tp->node(cid).value;
      auto& dx = tp->sweep_of(xid);
      for (int r = 0; r < rows; ++r) {
        const std::size_t base = static_cast<std::size_t>(r) * cols;
        Scalar dot = 0;
        for (int c2 = 0; c2 < cols; ++c2) {
          if (m.at(r, c2)) dot += g[base + c2] * y[base + c2];
        }
        for (int c2 = 0; c2 < cols; ++c2) {
          if (m.at(r, c2)) dx[base + c2] += (g[base + c2] - dot) * y[base + c2];
        }
      }
    };
  }
  return c;
}

// --- layer norm -------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scalar eps) {
  check_valid(x, "layer_norm");
  check_valid(gamma, "layer_norm");
  check_valid(beta, "layer_norm");
  check_same_tape(x, gamma, "layer_norm");
  check_same_tape(x, beta, "layer_norm");
  Dims2 d = as_matrix(x, "layer_norm");
  if (gamma.rank() != 1 || gamma.dim(0) != d.cols || beta.rank() != 1 || beta.dim(0) != d.cols) {
    throw ShapeError("layer_norm: gamma/beta must be vectors of length " +
                     std::to_string(d.cols));
  }
  Tape& tape = *x.tape();
  const auto& xv = x.value();
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  std::vector<Scalar> out(xv.size());
  std::vector<Scalar> xhat(xv.size());
  std::vector<Scalar> inv_sigma(static_cast<std::size_t>(d.rows));
  const Scalar dn = static_cast<Scalar>(d.cols);
  for (int r = 0; r < d.rows; ++r) {
    const std::size_t base = static_cast<std::size_t>(r) * d.cols;
    Scalar mu = 0;
    for (int c = 0; c < d.cols; ++c) mu += xv[base + c];
    mu /= dn;
    Scalar var = 0;
    for (int c = 0; c < d.cols; ++c) {
      const Scalar dc = xv[base + c] - mu;
      var += dc * dc;
    }
    var /= dn;
    const Scalar is = Scalar(1) / std::sqrt(var + eps);
    inv_sigma[static_cast<std::size_t>(r)] = is;
    for (int c = 0; c < d.cols; ++c) {
      const Scalar h = (xv[base + c] - mu) * is;
      xhat[base + c] = h;
      out[base + c] = gv[static_cast<std::size_t>(c)] * h + bv[static_cast<std::size_t>(c)];
    }
  }
  bool rg = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  Tensor c = tape.make_node(x.shape(), std::move(out), rg);
  if (rg) {
    Tape* tp = &tape;
    int xid = x.id(), gid = gamma.id(), bid = beta.id(), cid = c.id();
    bool xg = x.requires_grad(), gg = gamma.requires_grad(), bg = beta.requires_grad();
    int rows = d.rows, cols = d.cols;
    auto xh = std::make_shared<std::vector<Scalar>>(std::move(xhat));
    auto isg = std::make_shared<std::vector<Scalar>>(std::move(inv_sigma));
    tape.node(cid).backward = [tp, xid, gid, bid, cid, xg, gg, bg, rows, cols, xh, isg] {
      const auto& g = tp->node(cid).sweep;
      const auto& gv2 = tp->node(gid).value;
      const Scalar dn2 = static_cast<Scalar>(cols);
      if (gg) {
        auto& dgamma = tp->sweep_of(gid);
        for (int r = 0; r < rows; ++r) {
          const std::size_t base = static_cast<std::size_t>(r) * cols;
          for (int c2 = 0; c2 < cols; ++c2) {
            dgamma[static_cast<std::size_t>(c2)] += g[base + c2] * (*xh)[base + c2];
          }
        }
      }
      if (bg) {
        auto& dbeta = tp->sweep_of(bid);
        for (int r = 0; r < rows; ++r) {
          const std::size_t base = static_cast<std::size_t>(r) * cols;
          for (int c2 = 0; c2 < cols; ++c2) dbeta[static_cast<std::size_t>(c2)] += g[base + c2];
        }
      }
      if (xg) {
        auto& dx = tp->sweep_of(xid);
        for (int r = 0; r < rows; ++r) {
          const std::size_t base = static_cast<std::size_t>(r) * cols;
          const Scalar is = (*isg)[static_cast<std::size_t>(r)];
          Scalar mean_dh = 0, mean_dh_xhat = 0;
          for (int c2 = 0; c2 < cols; ++c2) {
            const Scalar dh = g[base + c2] * gv2[static_cast<std::size_t>(c2)];
            mean_dh += dh;
            mean_dh_xhat += dh * (*xh)[base + c2];
          }
          mean_dh /= dn2;
          mean_dh_xhat /= dn2;
          for (int c2 = 0; c2 < cols; ++c2) {
            const Scalar dh = g[base + c2] * gv2[static_cast<std::size_t>(c2)];
            dx[base + c2] += is * (dh - mean_dh - (*xh)[base + c2] * mean_dh_xhat);
          }
        }
      }
    };
  }
  return c;
}

// --- lookup / gather --------------------------------------------------------

Tensor embedding_rows(const Tensor& table, const std::vector<int>& ids) {
  check_valid(table, "embedding_rows");
  Dims2 d = as_matrix(table, "embedding_rows");
  if (ids.empty()) throw ValueError("embedding_rows: empty id sequence");
  for (int id : ids) {
    if (id < 0 || id >= d.rows) {
      throw ValueError("embedding_rows: id " + std::to_string(id) +
                       " outside table with " + std::to_string(d.rows) + " rows");
    }
  }
  Tape& tape = *table.tape();
  const auto& tv = table.value();
  const int L = static_cast<int>(ids.size());
  std::vector<Scalar> out(static_cast<std::size_t>(L) * d.cols);
  for (int j = 0; j < L; ++j) {
    const std::size_t src = static_cast<std::size_t>(ids[static_cast<std::size_t>(j)]) * d.cols;
    std::copy(tv.begin() + static_cast<std::ptrdiff_t>(src),
              tv.begin() + static_cast<std::ptrdiff_t>(src + d.cols),
              out.begin() + static_cast<std::ptrdiff_t>(j) * d.cols);
  }
  bool rg = table.requires_grad();
  Tensor c = tape.make_node({L, d.cols}, std::move(out), rg);
  if (rg) {
    Tape* tp = &tape;
    int tid = table.id(), cid = c.id();
    int cols = d.cols;
    std::vector<int> ids_copy = ids;
    tape.node(cid).backward = [tp, tid, cid, cols, ids_copy] {
      const auto& g = tp->node(cid).sweep;
      auto& dt = tp->sweep_of(tid);
      for (std::size_t j = 0; j < ids_copy.size(); ++j) {
        const std::size_t dst = static_cast<std::size_t>(ids_copy[j]) * cols;
        const std::size_t src = j * static_cast<std::size_t>(cols);
        for (int c2 = 0; c2 < cols; ++c2) dt[dst + c2] += g[src + c2];
      }
    };
  }
  return c;
}

Tensor gather_per_row(const Tensor& x, const std::vector<int>& cols) {
  check_valid(x, "gather_per_row");
  Dims2 d = as_matrix(x, "gather_per_row");
  if (static_cast<int>(cols.size()) != d.rows) {
    throw ShapeError("gather_per_row: need one column index per row, got " +
                     std::to_string(cols.size()) + " for " + shape_str(x.shape()));
  }
  for (int c : cols) {
    if (c < 0 || c >= d.cols) {
      throw ValueError("gather_per_row: column " + std::to_string(c) + " outside " +
                       shape_str(x.shape()));
    }
  }
  Tape& tape = *x.tape();
  const auto& xv = x.value();
  std::vector<Scalar> out(static_cast<std::size_t>(d.rows));
  for (int r = 0; r < d.rows; ++r) {
    out[static_cast<std::size_t>(r)] =
        xv[static_cast<std::size_t>(r) * d.cols + cols[static_cast<std::size_t>(r)]];
  }
  bool rg = x.requires_grad();
  Tensor c = tape.make_node({d.rows}, std::move(out), rg);
  if (rg) {
    Tape* tp = &tape;
    int xid = x.id(), cid = c.id();
    int ncols = d.cols;
    std::vector<int> cols_copy = cols;
    tape.node(cid).backward = [tp, xid, cid, ncols, cols_copy] {
      const auto& g = tp->node(cid).sweep;
      auto& dx = tp->sweep_of(xid);
      for (std::size_t r = 0; r < cols_copy.size(); ++r) {
        dx[r * static_cast<std::size_t>(ncols) + cols_copy[r]] += g[r];
      }
    };
  }
  return c;
}

Tensor kl_divergence(const std::vector<Scalar>& p, const Tensor& q, Scalar floor) {
  check_valid(q, "kl_divergence");
  if (q.rank() != 1) {
    throw ShapeError("kl_divergence expects a probability vector, got " + shape_str(q.shape()));
  }
  if (static_cast<int>(p.size()) != q.dim(0)) {
    throw ShapeError("kl_divergence: length mismatch, p has " + std::to_string(p.size()) +
                     " entries, q has " + std::to_string(q.dim(0)));
  }
  Tape& tape = *q.tape();
  const auto& qv = q.value();
  Scalar acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0) {
      const Scalar qc = std::max(qv[i], floor);
      acc += p[i] * (std::log(p[i]) - std::log(qc));
    }
  }
  bool rg = q.requires_grad();
  Tensor c = tape.make_node({1}, {acc}, rg);
  if (rg) {
    Tape* tp = &tape;
    int qid = q.id(), cid = c.id();
    std::vector<Scalar> p_copy = p;
    tape.node(cid).backward = [tp, qid, cid, p_copy, floor] {
      const Scalar g = tp->node(cid).sweep[0];
      const auto& qv2 = tp->node(qid).value;
      auto& dq = tp->sweep_of(qid);
      for (std::size_t i = 0; i < p_copy.size(); ++i) {
        if (p_copy[i] > 0 && qv2[i] > floor) dq[i] -= g * p_copy[i] / qv2[i];
      }
    };
  }
  return c;
}

Tensor dropout(const Tensor& x, Scalar rate, Rng& rng) {
  check_valid(x, "dropout");
  if (rate < 0 || rate >= 1) {
    throw ValueError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  }
  if (rate == 0) return x;
  Tape& tape = *x.tape();
  const auto& xv = x.value();
  const Scalar keep = Scalar(1) - rate;
  std::vector<Scalar> mask(xv.size());
  std::vector<Scalar> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    mask[i] = rng.uniform() < rate ? Scalar(0) : Scalar(1) / keep;
    out[i] = xv[i] * mask[i];
  }
  bool rg = x.requires_grad();
  Tensor c = tape.make_node(x.shape(), std::move(out), rg);
  if (rg) {
    Tape* tp = &tape;
    int xid = x.id(), cid = c.id();
    auto m = std::make_shared<std::vector<Scalar>>(std::move(mask));
    tape.node(cid).backward = [tp, xid, cid, m] {
      const auto& g = tp->node(cid).sweep;
      auto& dx = tp->sweep_of(xid);
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * (*m)[i];
    };
  }
  return c;
}

}  // namespace hisa
