#include "gsm/ad/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Core>

#include "gsm/error.hpp"

namespace gsm::ad {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using MapM = Eigen::Map<RowMat>;

MapC view(const Tensor& t) { return MapC(t.data.data(), t.rows(), t.cols()); }
MapM view(Tensor& t) { return MapM(t.data.data(), t.rows(), t.cols()); }

Tape& same_tape(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) throw ContractViolation("operands live on different tapes");
  return *a.tape;
}

Tape& tape_of(Var a) {
  if (a.tape == nullptr) throw ContractViolation("variable is not attached to a tape");
  return *a.tape;
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw ContractViolation(std::string(op) + ": incompatible shapes " + shape_string(a.shape) + " and " +
                          shape_string(b.shape));
}

[[noreturn]] void shape_error(const char* op, const Tensor& a) {
  throw ContractViolation(std::string(op) + ": unsupported shape " + shape_string(a.shape));
}

void require_rank2(const char* op, const Tensor& a) {
  if (a.rank() != 2) shape_error(op, a);
}

// Elementwise unary op with derivative expressed from input x and output y.
template <class F, class D>
Var unary(Var a, F f, D dfdx) {
  Tape& t = tape_of(a);
  const Tensor& x = t.value(a);
  Tensor y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = f(x.data[i]);
  const int ia = a.id;
  return t.push(std::move(y), {ia}, [ia, dfdx](Tape& tp, int self) {
    const Tensor& g = tp.grad(Var{&tp, self});
    const Tensor& xv = tp.value(ia);
    const Tensor& yv = tp.value(self);
    Tensor& ga = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * dfdx(xv.data[i], yv.data[i]);
  });
}

// Piecewise-linear elementwise op: side(x) picks the piece, value(x, side) evaluates it and
// slope(side) is its derivative. Sides go through the tape's branch log.
template <class S, class V, class D>
Var piecewise(Var a, S side, V value, D slope) {
  Tape& t = tape_of(a);
  const Tensor& x = t.value(a);
  std::vector<int> sides;
  if (const std::vector<int>* replayed = t.next_branches(x.size())) {
    sides = *replayed;
  } else {
    sides.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) sides[i] = side(x.data[i]);
  }
  Tensor y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = value(x.data[i], sides[i]);
  if (t.recording_branches()) t.log_branches(sides);
  const int ia = a.id;
  return t.push(std::move(y), {ia}, [ia, slope, sides = std::move(sides)](Tape& tp, int self) {
    const Tensor& g = tp.grad(Var{&tp, self});
    Tensor& ga = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * slope(sides[i]);
  });
}

// out = x y, accumulating each entry over the inner index in increasing order with the same
// vector operations everywhere (edge tiles run on zero-padded copies). A row's result thus
// does not depend on its position or on the row count, and permuting the rows of x permutes
// the rows of the result exactly. Eigen's blocked product routes edge rows through
// different kernels and does not give that.
void matmul_rows(const Tensor& x, const Tensor& y, Tensor& out) {
  constexpr int kRows = 4, kCols = 16;
  using Row = Eigen::Matrix<double, 1, kCols>;
  const int n = x.rows(), k = x.cols(), m = y.cols();
  const double* X = x.data.data();
  const double* Y = y.data.data();
  double* O = out.data.data();
  std::vector<Row, Eigen::aligned_allocator<Row>> panel(k);
  for (int j0 = 0; j0 < m; j0 += kCols) {
    const int cn = std::min(kCols, m - j0);
    for (int p = 0; p < k; ++p) {
      panel[p].setZero();
      std::copy_n(Y + static_cast<std::size_t>(p) * m + j0, cn, panel[p].data());
    }
    for (int i0 = 0; i0 < n; i0 += kRows) {
      const int rn = std::min(kRows, n - i0);
      Row acc[kRows];
      for (int r = 0; r < kRows; ++r) acc[r].setZero();
      if (rn == kRows) {
        for (int p = 0; p < k; ++p) {
          for (int r = 0; r < kRows; ++r) acc[r] += X[static_cast<std::size_t>(i0 + r) * k + p] * panel[p];
        }
      } else {
        for (int p = 0; p < k; ++p) {
          for (int r = 0; r < rn; ++r) acc[r] += X[static_cast<std::size_t>(i0 + r) * k + p] * panel[p];
        }
      }
      for (int r = 0; r < rn; ++r) std::copy_n(acc[r].data(), cn, O + static_cast<std::size_t>(i0 + r) * m + j0);
    }
  }
}

}  // namespace

const Tensor& Var::value() const {
  if (tape == nullptr) throw ContractViolation("variable is not attached to a tape");
  return tape->value(*this);
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, nullptr, false});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, nullptr, true});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(Parameter& p, bool frozen) {
  const bool needs = p.trainable && !frozen;
  nodes_.push_back(Node{p.value, {}, {}, {}, needs ? &p : nullptr, needs});
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::push(Tensor value, std::vector<int> parents, BackwardFn backward) {
  bool needs = false;
  for (int p : parents) needs = needs || nodes_.at(p).needs_grad;
  Node node{std::move(value), {}, std::move(parents), {}, nullptr, needs};
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::record_branches(BranchLog* log) {
  record_ = log;
  replay_ = nullptr;
}

void Tape::replay_branches(const BranchLog* log) {
  replay_ = log;
  replay_pos_ = 0;
  record_ = nullptr;
}

const std::vector<int>* Tape::next_branches(std::size_t size) {
  if (replay_ == nullptr) return nullptr;
  if (replay_pos_ >= replay_->choices.size() || replay_->choices[replay_pos_].size() != size) {
    throw ContractViolation("branch replay does not match the recorded ops");
  }
  return &replay_->choices[replay_pos_++];
}

void Tape::log_branches(std::vector<int> choices) {
  if (record_ != nullptr) record_->choices.push_back(std::move(choices));
}

Tensor& Tape::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (n.grad.shape != n.value.shape || n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractViolation("loss belongs to another tape");
  if (nodes_[loss.id].value.size() != 1) {
    throw ContractViolation("backward needs a scalar loss, got shape " + shape_string(nodes_[loss.id].value.shape));
  }
  for (Node& n : nodes_) n.grad = Tensor();
  grad_buffer(loss.id).data[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.data.empty()) continue;
    if (n.param != nullptr) {
      Parameter& p = *n.param;
      if (p.grad.shape != p.value.shape) p.zero_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad.data[i] += n.grad.data[i];
    } else if (n.backward) {
      // Parents only ever need gradient buffers; allocate lazily inside the callback.
      n.backward(*this, id);
    }
  }
}

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  if (x.rank() != 2 || y.rank() != 2 || x.cols() != y.rows()) shape_error("matmul", x, y);
  Tensor out({x.rows(), y.cols()});
  matmul_rows(x, y, out);
  const int ia = a.id, ib = b.id;
  return t.push(std::move(out), {ia, ib}, [ia, ib](Tape& tp, int self) {
    const Tensor& g = tp.grad(Var{&tp, self});
    if (tp.needs_grad(ia)) view(tp.grad_buffer(ia)).noalias() += view(g) * view(tp.value(ib)).transpose();
    if (tp.needs_grad(ib)) view(tp.grad_buffer(ib)).noalias() += view(tp.value(ia)).transpose() * view(g);
  });
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  const Tensor& x = t.value(a);
  require_rank2("transpose", x);
  Tensor out({x.cols(), x.rows()});
  view(out) = view(x).transpose();
  const int ia = a.id;
  return t.push(std::move(out), {ia}, [ia](Tape& tp, int self) {
    view(tp.grad_buffer(ia)) += view(tp.grad(Var{&tp, self})).transpose();
  });
}

namespace {

// Shared implementation of add/sub with optional row broadcast of b.
Var add_impl(Var a, Var b, double sign, const char* name) {
  Tape& t = same_tape(a, b);
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  const bool same = x.shape == y.shape;
  const bool broadcast = !same && x.rank() == 2 && y.rank() == 2 && y.rows() == 1 && y.cols() == x.cols();
  if (!same && !broadcast) shape_error(name, x, y);
  Tensor out = x;
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += sign * y.data[i];
  } else {
    const int c = x.cols();
    for (int r = 0; r < x.rows(); ++r) {
      for (int j = 0; j < c; ++j) out.data[static_cast<std::size_t>(r) * c + j] += sign * y.data[j];
    }
  }
  const int ia = a.id, ib = b.id;
  return t.push(std::move(out), {ia, ib}, [ia, ib, sign, broadcast](Tape& tp, int self) {
    const Tensor& g = tp.grad(Var{&tp, self});
    if (tp.needs_grad(ia)) {
      Tensor& ga = tp.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
    }
    if (tp.needs_grad(ib)) {
      Tensor& gb = tp.grad_buffer(ib);
      if (!broadcast) {
        for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] += sign * g.data[i];
      } else {
        const int c = g.cols();
        for (int r = 0; r < g.rows(); ++r) {
          for (int j = 0; j < c; ++j) gb.data[j] += sign * g.data[static_cast<std::size_t>(r) * c + j];
        }
      }
    }
  });
}

}  // namespace

Var add(Var a, Var b) { return add_impl(a, b, 1.0, "add"); }
Var sub(Var a, Var b) { return add_impl(a, b, -1.0, "sub"); }

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  if (x.shape != y.shape) shape_error("mul", x, y);
  Tensor out(x.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = x.data[i] * y.data[i];
  const int ia = a.id, ib = b.id;
  return t.push(std::move(out), {ia, ib}, [ia, ib](Tape& tp, int self) {
    const Tensor& g = tp.grad(Var{&tp, self});
    if (tp.needs_grad(ia)) {
      Tensor& ga = tp.grad_buffer(ia);
      const Tensor& yv = tp.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * yv.data[i];
    }
    if (tp.needs_grad(ib)) {
      Tensor& gb = tp.grad_buffer(ib);
      const Tensor& xv = tp.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] += g.data[i] * xv.data[i];
    }
  });
}

Var scale(Var a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw ContractViolation("concat of nothing");
  if (axis != 0 && axis != 1) throw ContractViolation("concat axis must be 0 or 1");
  Tape& t = tape_of(parts[0]);
  const Tensor& first = t.value(parts[0]);
  require_rank2("concat", first);
  int rows = 0, cols = 0;
  std::vector<int> ids;
  for (Var p : parts) {
    const Tensor& v = same_tape(parts[0], p).value(p);
    require_rank2("concat", v);
    if (axis == 0) {
      if (v.cols() != first.cols()) shape_error("concat", first, v);
      rows += v.rows();
    } else {
      if (v.rows() != first.rows()) shape_error("concat", first, v);
      cols += v.cols();
    }
    ids.push_back(p.id);
  }
  if (axis == 0) cols = first.cols();
  else rows = first.rows();
  Tensor out({rows, cols});
  int offset = 0;
  for (int id : ids) {
    const Tensor& v = t.value(id);
    if (axis == 0) {
      std::copy(v.data.begin(), v.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(offset) * cols);
      offset += v.rows();
    } else {
      view(out).block(0, offset, rows, v.cols()) = view(v);
      offset += v.cols();
    }
  }
  return t.push(std::move(out), ids, [ids, axis](Tape& tp, int self) {
    const Tensor& g = tp.grad(Var{&tp, self});
    int off = 0;
    for (int id : ids) {
      const Tensor& v = tp.value(id);
      if (tp.needs_grad(id)) {
        if (axis == 0) view(tp.grad_buffer(id)) += view(g).block(off, 0, v.rows(), v.cols());
        else view(tp.grad_buffer(id)) += view(g).block(0, off, v.rows(), v.cols());
      }
      off += axis == 0 ? v.rows() : v.cols();
    }
  });
}

Var slice_rows(Var a, int begin, int end) {
  Tape& t = tape_of(a);
  const Tensor& x = t.value(a);
  require_rank2("slice_rows", x);
  if (begin < 0 || end > x.rows() || begin > end) {
    throw ContractViolation("slice_rows [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of " +
                            shape_string(x.shape));
  }
  const int c = x.cols();
  Tensor out({end - begin, c},
             std::vector<double>(x.data.begin() + static_cast<std::ptrdiff_t>(begin) * c,
                                 x.data.begin() + static_cast<std::ptrdiff_t>(end) * c));
  const int ia = a.id;
  return t.push(std::move(out), {ia}, [ia, begin, c](Tape& tp, int self) {
    const Tensor& g = tp.grad(Var{&tp, self});
    Tensor& ga = tp.grad_buffer(ia);
    const std::size_t off = static_cast<std::size_t>(begin) * c;
    for (std::size_t i = 0; i < g.size(); ++i) ga.data[off + i] += g.data[i];
  });
}

Var slice_cols(Var a, int begin, int end) {
  Tape& t = tape_of(a);
  const Tensor& x = t.value(a);
  require_rank2("slice_cols", x);
  if (begin < 0 || end > x.cols() || begin > end) {
    throw ContractViolation("slice_cols [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of " +
                            shape_string(x.shape));
  }
  Tensor out({x.rows(), end - begin});
  view(out) = view(x).block(0, begin, x.rows(), end - begin);
  const int ia = a.id;
  return t.push(std::move(out), {ia}, [ia, begin](Tape& tp, int self) {
    const Tensor& g = tp.grad(Var{&tp, self});
    view(tp.grad_buffer(ia)).block(0, begin, g.rows(), g.cols()) += view(g);
  });
}

Var reshape(Var a, std::vector<int> shape) {
  Tape& t = tape_of(a);
  const Tensor& x = t.value(a);
  if (shape_size(shape) != x.size()) {
    throw ContractViolation("reshape " + shape_string(x.shape) + " to " + shape_string(shape));
  }
  Tensor out(std::move(shape), x.data);
  const int ia = a.id;
  return t.push(std::move(out), {ia}, [ia](Tape& tp, int self) {
    const Tensor& g = tp.grad(Var{&tp, self});
    Tensor& ga = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
  });
}

Var gather_rows(Var a, const std::vector<int>& indices) {
  Tape& t = tape_of(a);
  const Tensor& x = t.value(a);
  require_rank2("gather_rows", x);
  const int c = x.cols();
  Tensor out({static_cast<int>(indices.size()), c});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const int src = indices[r];
    if (src < 0 || src >= x.rows()) throw ContractViolation("gather_rows index out of range");
    std::copy_n(x.data.begin() + static_cast<std::ptrdiff_t>(src) * c, c,
                out.data.begin() + static_cast<std::ptrdiff_t>(r) * c);
  }
  const int ia = a.id;
  return t.push(std::move(out), {ia}, [ia, indices, c](Tape& tp, int self) {
    const Tensor& g = tp.grad(Var{&tp, self});
    Tensor& ga = tp.grad_buffer(ia);
    for (std::size_t r = 0; r < indices.size(); ++r) {
      double* dst = ga.data.data() + static_cast<std::size_t>(indices[r]) * c;
      const double* src = g.data.data() + r * c;
      for (int j = 0; j < c; ++j) dst[j] += src[j];
    }
  });
}

Var relu(Var a) {
  return piecewise(
      a, [](double x) { return x > 0 ? 1 : 0; }, [](double x, int s) { return s ? x : 0.0; },
      [](int s) { return s ? 1.0 : 0.0; });
}

Var leaky_relu(Var a, double slope) {
  return piecewise(
      a, [](double x) { return x > 0 ? 1 : 0; }, [slope](double x, int s) { return s ? x : slope * x; },
      [slope](int s) { return s ? 1.0 : slope; });
}

Var sigmoid(Var a) {
  return unary(
      a,
      [](double x) {
        // Split by sign so neither branch overflows.
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var abs(Var a) {
  return piecewise(
      a, [](double x) { return x > 0 ? 1 : (x < 0 ? -1 : 0); }, [](double x, int s) { return s * x; },
      [](int s) { return static_cast<double>(s); });
}

Var row_softmax(Var a) {
  Tape& t = tape_of(a);
  const Tensor& x = t.value(a);
  require_rank2("row_softmax", x);
  const int r = x.rows(), c = x.cols();
  Tensor out(x.shape);
  for (int i = 0; i < r; ++i) {
    const double* xi = x.data.data() + static_cast<std::size_t>(i) * c;
    double* yi = out.data.data() + static_cast<std::size_t>(i) * c;
    const double m = *std::max_element(xi, xi + c);
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += (yi[j] = std::exp(xi[j] - m));
    for (int j = 0; j < c; ++j) yi[j] /= z;
  }
  const int ia = a.id;
  return t.push(std::move(out), {ia}, [ia, r, c](Tape& tp, int self) {
    const Tensor& g = tp.grad(Var{&tp, self});
    const Tensor& y = tp.value(self);
    Tensor& ga = tp.grad_buffer(ia);
    for (int i = 0; i < r; ++i) {
      const std::size_t o = static_cast<std::size_t>(i) * c;
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += g.data[o + j] * y.data[o + j];
      for (int j = 0; j < c; ++j) ga.data[o + j] += y.data[o + j] * (g.data[o + j] - dot);
    }
  });
}

namespace {

void require_affine(const char* op, const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  const bool ok = gamma.rank() == 2 && beta.rank() == 2 && gamma.rows() == 1 && beta.rows() == 1 &&
                  gamma.cols() == x.cols() && beta.cols() == x.cols();
  if (!ok) shape_error(op, x, gamma);
}

}  // namespace

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Tape& t = same_tape(x, gamma);
  same_tape(x, beta);
  const Tensor& xv = t.value(x);
  require_rank2("layer_norm", xv);
  require_affine("layer_norm", xv, t.value(gamma), t.value(beta));
  const int r = xv.rows(), c = xv.cols();
  const Tensor& gv = t.value(gamma);
  const Tensor& bv = t.value(beta);
  Tensor out(xv.shape);
  std::vector<double> xhat(xv.size()), inv_std(r);
  for (int i = 0; i < r; ++i) {
    const std::size_t o = static_cast<std::size_t>(i) * c;
    double m = 0.0;
    for (int j = 0; j < c; ++j) m += xv.data[o + j];
    m /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) var += (xv.data[o + j] - m) * (xv.data[o + j] - m);
    var /= c;
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < c; ++j) {
      xhat[o + j] = (xv.data[o + j] - m) * inv_std[i];
      out.data[o + j] = xhat[o + j] * gv.data[j] + bv.data[j];
    }
  }
  const int ix = x.id, ig = gamma.id, ib = beta.id;
  return t.push(std::move(out), {ix, ig, ib},
                [ix, ig, ib, r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp, int self) {
                  const Tensor& g = tp.grad(Var{&tp, self});
                  const Tensor& gam = tp.value(ig);
                  if (tp.needs_grad(ig) || tp.needs_grad(ib)) {
                    Tensor* gg = tp.needs_grad(ig) ? &tp.grad_buffer(ig) : nullptr;
                    Tensor* gb = tp.needs_grad(ib) ? &tp.grad_buffer(ib) : nullptr;
                    for (int i = 0; i < r; ++i) {
                      for (int j = 0; j < c; ++j) {
                        const std::size_t k = static_cast<std::size_t>(i) * c + j;
                        if (gg) gg->data[j] += g.data[k] * xhat[k];
                        if (gb) gb->data[j] += g.data[k];
                      }
                    }
                  }
                  if (tp.needs_grad(ix)) {
                    Tensor& gx = tp.grad_buffer(ix);
                    for (int i = 0; i < r; ++i) {
                      const std::size_t o = static_cast<std::size_t>(i) * c;
                      double m1 = 0.0, m2 = 0.0;
                      for (int j = 0; j < c; ++j) {
                        const double d = g.data[o + j] * gam.data[j];
                        m1 += d;
                        m2 += d * xhat[o + j];
                      }
                      m1 /= c;
                      m2 /= c;
                      for (int j = 0; j < c; ++j) {
                        const double d = g.data[o + j] * gam.data[j];
                        gx.data[o + j] += inv_std[i] * (d - m1 - xhat[o + j] * m2);
                      }
                    }
                  }
                });
}

Var batch_norm(Var x, Var gamma, Var beta, const BatchNormBuffers& buffers, NormMode mode, double eps) {
  Tape& t = same_tape(x, gamma);
  same_tape(x, beta);
  const Tensor& xv = t.value(x);
  require_rank2("batch_norm", xv);
  require_affine("batch_norm", xv, t.value(gamma), t.value(beta));
  if (buffers.running_mean == nullptr || buffers.running_var == nullptr) {
    throw ContractViolation("batch_norm needs running statistics buffers");
  }
  const int r = xv.rows(), c = xv.cols();
  const Tensor& gv = t.value(gamma);
  const Tensor& bv = t.value(beta);
  Tensor out(xv.shape);
  const int ix = x.id, ig = gamma.id, ib = beta.id;

  if (mode == NormMode::Eval) {
    std::vector<double> a(c), shift(c);
    for (int j = 0; j < c; ++j) {
      const double inv = 1.0 / std::sqrt(buffers.running_var->value.data[j] + eps);
      a[j] = inv;
      shift[j] = buffers.running_mean->value.data[j];
    }
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < c; ++j) {
        const std::size_t k = static_cast<std::size_t>(i) * c + j;
        out.data[k] = (xv.data[k] - shift[j]) * a[j] * gv.data[j] + bv.data[j];
      }
    }
    return t.push(std::move(out), {ix, ig, ib}, [ix, ig, ib, r, c, a, shift](Tape& tp, int self) {
      const Tensor& g = tp.grad(Var{&tp, self});
      const Tensor& xs = tp.value(ix);
      const Tensor& gam = tp.value(ig);
      Tensor* gx = tp.needs_grad(ix) ? &tp.grad_buffer(ix) : nullptr;
      Tensor* gg = tp.needs_grad(ig) ? &tp.grad_buffer(ig) : nullptr;
      Tensor* gb = tp.needs_grad(ib) ? &tp.grad_buffer(ib) : nullptr;
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) {
          const std::size_t k = static_cast<std::size_t>(i) * c + j;
          if (gx) gx->data[k] += g.data[k] * a[j] * gam.data[j];
          if (gg) gg->data[j] += g.data[k] * (xs.data[k] - shift[j]) * a[j];
          if (gb) gb->data[j] += g.data[k];
        }
      }
    });
  }

  if (r < 2) throw ContractViolation("batch_norm in training mode needs at least 2 rows");
  std::vector<double> m(c, 0.0), var(c, 0.0), inv_std(c);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) m[j] += xv.data[static_cast<std::size_t>(i) * c + j];
  }
  for (int j = 0; j < c; ++j) m[j] /= r;
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) {
      const double d = xv.data[static_cast<std::size_t>(i) * c + j] - m[j];
      var[j] += d * d;
    }
  }
  for (int j = 0; j < c; ++j) {
    var[j] /= r;
    inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
  }
  std::vector<double> xhat(xv.size());
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * c + j;
      xhat[k] = (xv.data[k] - m[j]) * inv_std[j];
      out.data[k] = xhat[k] * gv.data[j] + bv.data[j];
    }
  }
  if (mode == NormMode::Train) {
    const double mom = buffers.momentum;
    auto& rm = buffers.running_mean->value.data;
    auto& rv = buffers.running_var->value.data;
    for (int j = 0; j < c; ++j) {
      rm[j] = (1.0 - mom) * rm[j] + mom * m[j];
      rv[j] = (1.0 - mom) * rv[j] + mom * var[j] * r / (r - 1.0);
    }
  }
  return t.push(std::move(out), {ix, ig, ib},
                [ix, ig, ib, r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp, int self) {
                  const Tensor& g = tp.grad(Var{&tp, self});
                  const Tensor& gam = tp.value(ig);
                  std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
                  for (int i = 0; i < r; ++i) {
                    for (int j = 0; j < c; ++j) {
                      const std::size_t k = static_cast<std::size_t>(i) * c + j;
                      sum_g[j] += g.data[k];
                      sum_gx[j] += g.data[k] * xhat[k];
                    }
                  }
                  if (tp.needs_grad(ig)) {
                    Tensor& gg = tp.grad_buffer(ig);
                    for (int j = 0; j < c; ++j) gg.data[j] += sum_gx[j];
                  }
                  if (tp.needs_grad(ib)) {
                    Tensor& gb = tp.grad_buffer(ib);
                    for (int j = 0; j < c; ++j) gb.data[j] += sum_g[j];
                  }
                  if (tp.needs_grad(ix)) {
                    Tensor& gx = tp.grad_buffer(ix);
                    for (int i = 0; i < r; ++i) {
                      for (int j = 0; j < c; ++j) {
                        const std::size_t k = static_cast<std::size_t>(i) * c + j;
                        gx.data[k] += gam.data[j] * inv_std[j] *
                                      (g.data[k] - sum_g[j] / r - xhat[k] * sum_gx[j] / r);
                      }
                    }
                  }
                });
}

Var l2_normalize_rows(Var a) {
  Tape& t = tape_of(a);
  const Tensor& x = t.value(a);
  require_rank2("l2_normalize_rows", x);
  const int r = x.rows(), c = x.cols();
  Tensor out(x.shape);
  std::vector<double> norms(r);
  for (int i = 0; i < r; ++i) {
    const std::size_t o = static_cast<std::size_t>(i) * c;
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += x.data[o + j] * x.data[o + j];
    norms[i] = std::max(std::sqrt(s), 1e-12);
    for (int j = 0; j < c; ++j) out.data[o + j] = x.data[o + j] / norms[i];
  }
  const int ia = a.id;
  return t.push(std::move(out), {ia}, [ia, r, c, norms = std::move(norms)](Tape& tp, int self) {
    const Tensor& g = tp.grad(Var{&tp, self});
    const Tensor& y = tp.value(self);
    Tensor& ga = tp.grad_buffer(ia);
    for (int i = 0; i < r; ++i) {
      const std::size_t o = static_cast<std::size_t>(i) * c;
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += g.data[o + j] * y.data[o + j];
      for (int j = 0; j < c; ++j) ga.data[o + j] += (g.data[o + j] - y.data[o + j] * dot) / norms[i];
    }
  });
}

Var max_pool_rows(Var a, int group) {
  Tape& t = tape_of(a);
  const Tensor& x = t.value(a);
  require_rank2("max_pool_rows", x);
  if (group < 1 || x.rows() % group != 0) {
    throw ContractViolation("max_pool_rows group " + std::to_string(group) + " does not divide " +
                            shape_string(x.shape));
  }
  const int c = x.cols(), n = x.rows() / group;
  Tensor out({n, c});
  std::vector<int> arg(static_cast<std::size_t>(n) * c);
  if (const std::vector<int>* replayed = t.next_branches(arg.size())) {
    arg = *replayed;
    for (int p = 0; p < n; ++p) {
      for (int j = 0; j < c; ++j) {
        const std::size_t q = static_cast<std::size_t>(p) * c + j;
        out.data[q] = x.data[(static_cast<std::size_t>(p) * group + arg[q]) * c + j];
      }
    }
  } else {
    for (int p = 0; p < n; ++p) {
      const double* base = x.data.data() + static_cast<std::size_t>(p) * group * c;
      double* o = out.data.data() + static_cast<std::size_t>(p) * c;
      int* ai = arg.data() + static_cast<std::size_t>(p) * c;
      for (int j = 0; j < c; ++j) {
        o[j] = base[j];
        ai[j] = 0;
      }
      for (int q = 1; q < group; ++q) {
        const double* row = base + static_cast<std::size_t>(q) * c;
        for (int j = 0; j < c; ++j) {
          if (row[j] > o[j]) {
            o[j] = row[j];
            ai[j] = q;
          }
        }
      }
    }
  }
  if (t.recording_branches()) t.log_branches(arg);
  const int ia = a.id;
  return t.push(std::move(out), {ia}, [ia, group, c, n, arg = std::move(arg)](Tape& tp, int self) {
    const Tensor& g = tp.grad(Var{&tp, self});
    Tensor& ga = tp.grad_buffer(ia);
    for (int p = 0; p < n; ++p) {
      for (int j = 0; j < c; ++j) {
        const std::size_t k = static_cast<std::size_t>(p) * c + j;
        ga.data[(static_cast<std::size_t>(p) * group + arg[k]) * c + j] += g.data[k];
      }
    }
  });
}

Var edge_max_bn(Var center, Var neighbor, const std::vector<int>& idx, int k, Var gamma, Var beta,
                const BatchNormBuffers& buffers, NormMode mode, double slope, double eps) {
  Tape& t = same_tape(center, neighbor);
  same_tape(center, gamma);
  same_tape(center, beta);
  const Tensor& cv = t.value(center);
  const Tensor& nv = t.value(neighbor);
  require_rank2("edge_max_bn", cv);
  require_rank2("edge_max_bn", nv);
  if (nv.cols() != cv.cols()) shape_error("edge_max_bn", cv, nv);
  require_affine("edge_max_bn", cv, t.value(gamma), t.value(beta));
  const int n = cv.rows(), c = cv.cols(), m = nv.rows();
  if (k < 1 || idx.size() != static_cast<std::size_t>(n) * k) {
    throw ContractViolation("edge_max_bn needs k >= 1 and n * k neighbor indices");
  }
  for (int j : idx) {
    if (j < 0 || j >= m) throw ContractViolation("edge_max_bn neighbor index out of range");
  }
  if (buffers.running_mean == nullptr || buffers.running_var == nullptr) {
    throw ContractViolation("edge_max_bn needs running statistics buffers");
  }
  const double edges = static_cast<double>(n) * k;
  const bool batch_stats = mode != NormMode::Eval;
  if (batch_stats && edges < 2) throw ContractViolation("edge_max_bn in training mode needs at least 2 edges");

  const double* C = cv.data.data();
  const double* N = nv.data.data();
  auto crow = [&](int i) { return C + static_cast<std::size_t>(i) * c; };
  auto nrow = [&](int i, int j) { return N + static_cast<std::size_t>(idx[static_cast<std::size_t>(i) * k + j]) * c; };

  std::vector<double> mean(c, 0.0), var(c, 0.0), inv(c), diff(c);
  if (batch_stats) {
    for (int i = 0; i < n; ++i) {
      const double* ci = crow(i);
      for (int h = 0; h < c; ++h) mean[h] += k * ci[h];
      for (int j = 0; j < k; ++j) {
        const double* nj = nrow(i, j);
        for (int h = 0; h < c; ++h) mean[h] += nj[h];
      }
    }
    for (int h = 0; h < c; ++h) mean[h] /= edges;
    for (int i = 0; i < n; ++i) {
      const double* ci = crow(i);
      for (int j = 0; j < k; ++j) {
        const double* nj = nrow(i, j);
        for (int h = 0; h < c; ++h) {
          const double d = ci[h] + nj[h] - mean[h];
          var[h] += d * d;
        }
      }
    }
    for (int h = 0; h < c; ++h) var[h] /= edges;
    if (mode == NormMode::Train) {
      const double mom = buffers.momentum;
      auto& rm = buffers.running_mean->value.data;
      auto& rv = buffers.running_var->value.data;
      for (int h = 0; h < c; ++h) {
        rm[h] = (1.0 - mom) * rm[h] + mom * mean[h];
        rv[h] = (1.0 - mom) * rv[h] + mom * var[h] * edges / (edges - 1.0);
      }
    }
  } else {
    mean = buffers.running_mean->value.data;
    var = buffers.running_var->value.data;
  }
  for (int h = 0; h < c; ++h) inv[h] = 1.0 / std::sqrt(var[h] + eps);

  // pre = gamma * (e - mean) * inv + beta, evaluated per edge as scale * (e - mean) + beta.
  const Tensor& gv = t.value(gamma);
  const Tensor& bv = t.value(beta);
  std::vector<double> scale(c);
  for (int h = 0; h < c; ++h) scale[h] = gv.data[h] * inv[h];
  Tensor out({n, c});
  std::vector<int> arg(static_cast<std::size_t>(n) * c, 0);
  // Branch-free inner loops so they vectorize; max(p, 0) + slope * min(p, 0) equals the
  // leaky ReLU exactly.
  std::vector<double> shift(c), zbuf(c);
  for (int h = 0; h < c; ++h) shift[h] = bv.data[h] - scale[h] * mean[h];
  const double* sc = scale.data();
  const double* sh = shift.data();
  double* z = zbuf.data();
  // Branches: the selected edge, then the side of the activation.
  std::vector<int> sides;
  if (const std::vector<int>* replayed = t.next_branches(arg.size())) {
    arg = *replayed;
    sides = *t.next_branches(arg.size());
    for (int i = 0; i < n; ++i) {
      const double* ci = crow(i);
      for (int h = 0; h < c; ++h) {
        const std::size_t q = static_cast<std::size_t>(i) * c + h;
        const double pre = sc[h] * (ci[h] + nrow(i, arg[q])[h]) + sh[h];
        out.data[q] = sides[q] ? pre : slope * pre;
      }
    }
  } else {
    for (int i = 0; i < n; ++i) {
      const double* ci = crow(i);
      double* o = out.data.data() + static_cast<std::size_t>(i) * c;
      int* a = arg.data() + static_cast<std::size_t>(i) * c;
      for (int j = 0; j < k; ++j) {
        const double* nj = nrow(i, j);
        for (int h = 0; h < c; ++h) {
          const double pre = sc[h] * (ci[h] + nj[h]) + sh[h];
          z[h] = std::max(pre, 0.0) + slope * std::min(pre, 0.0);
        }
        if (j == 0) {
          std::copy(z, z + c, o);
          continue;
        }
        for (int h = 0; h < c; ++h) {
          const bool better = z[h] > o[h];
          o[h] = better ? z[h] : o[h];
          a[h] = better ? j : a[h];
        }
      }
    }
    if (t.recording_branches()) {
      sides.resize(arg.size());
      for (std::size_t q = 0; q < arg.size(); ++q) sides[q] = out.data[q] > 0 ? 1 : 0;
    }
  }
  if (t.recording_branches()) {
    t.log_branches(arg);
    t.log_branches(sides);
  }

  const int ic = center.id, in = neighbor.id, ig = gamma.id, ib = beta.id;
  return t.push(
      std::move(out), {ic, in, ig, ib},
      [ic, in, ig, ib, n, m, c, k, slope, batch_stats, idx, arg = std::move(arg), sides = std::move(sides),
       mean = std::move(mean), inv = std::move(inv)](Tape& tp, int self) {
        const Tensor& g = tp.grad(Var{&tp, self});
        const double* C = tp.value(ic).data.data();
        const double* N = tp.value(in).data.data();
        const Tensor& gam = tp.value(ig);
        const Tensor& bet = tp.value(ib);
        const double edges = static_cast<double>(n) * k;
        auto nidx = [&](int i, int j) { return idx[static_cast<std::size_t>(i) * k + j]; };

        // Gradient w.r.t. the pre-normalization value of each selected edge.
        std::vector<double> own(static_cast<std::size_t>(n) * c), s1(c, 0.0), s2(c, 0.0);
        std::vector<double> dgam(c, 0.0), dbet(c, 0.0);
        for (int i = 0; i < n; ++i) {
          for (int h = 0; h < c; ++h) {
            const std::size_t q = static_cast<std::size_t>(i) * c + h;
            const double e = C[q] + N[static_cast<std::size_t>(nidx(i, arg[q])) * c + h];
            const double xh = (e - mean[h]) * inv[h];
            const double pre = gam.data[h] * xh + bet.data[h];
            const bool positive = sides.empty() ? pre > 0 : sides[q] != 0;
            const double dpre = g.data[q] * (positive ? 1.0 : slope);
            const double dxh = dpre * gam.data[h];
            dgam[h] += dpre * xh;
            dbet[h] += dpre;
            s1[h] += dxh;
            s2[h] += dxh * xh;
            own[q] = dxh * inv[h];
          }
        }
        if (tp.needs_grad(ig)) {
          Tensor& gg = tp.grad_buffer(ig);
          for (int h = 0; h < c; ++h) gg.data[h] += dgam[h];
        }
        if (tp.needs_grad(ib)) {
          Tensor& gb = tp.grad_buffer(ib);
          for (int h = 0; h < c; ++h) gb.data[h] += dbet[h];
        }
        const bool need_c = tp.needs_grad(ic), need_n = tp.needs_grad(in);
        if (!need_c && !need_n) return;

        // With batch statistics every edge also receives
        //   dE = -inv (s1 + xhat s2) / edges = alpha + beta * e,
        // which sums in closed form over the edges of a row or of a neighbor.
        std::vector<double> alpha(c, 0.0), slope_e(c, 0.0);
        if (batch_stats) {
          for (int h = 0; h < c; ++h) {
            slope_e[h] = -inv[h] * inv[h] * s2[h] / edges;
            alpha[h] = -inv[h] * s1[h] / edges - slope_e[h] * mean[h];
          }
        }
        if (need_c) {
          double* gc = tp.grad_buffer(ic).data.data();
          std::vector<double> nsum(c);
          for (int i = 0; i < n; ++i) {
            const std::size_t o = static_cast<std::size_t>(i) * c;
            for (int h = 0; h < c; ++h) gc[o + h] += own[o + h];
            if (!batch_stats) continue;
            std::fill(nsum.begin(), nsum.end(), 0.0);
            for (int j = 0; j < k; ++j) {
              const double* nj = N + static_cast<std::size_t>(nidx(i, j)) * c;
              for (int h = 0; h < c; ++h) nsum[h] += nj[h];
            }
            for (int h = 0; h < c; ++h) gc[o + h] += k * alpha[h] + slope_e[h] * (k * C[o + h] + nsum[h]);
          }
        }
        if (need_n) {
          double* gn = tp.grad_buffer(in).data.data();
          std::vector<double> csum(static_cast<std::size_t>(m) * c, 0.0);
          std::vector<int> count(m, 0);
          for (int i = 0; i < n; ++i) {
            const std::size_t o = static_cast<std::size_t>(i) * c;
            for (int h = 0; h < c; ++h) gn[static_cast<std::size_t>(nidx(i, arg[o + h])) * c + h] += own[o + h];
            if (!batch_stats) continue;
            for (int j = 0; j < k; ++j) {
              const int r = nidx(i, j);
              ++count[r];
              double* cs = csum.data() + static_cast<std::size_t>(r) * c;
              for (int h = 0; h < c; ++h) cs[h] += C[o + h];
            }
          }
          if (batch_stats) {
            for (int r = 0; r < m; ++r) {
              if (count[r] == 0) continue;
              const std::size_t o = static_cast<std::size_t>(r) * c;
              for (int h = 0; h < c; ++h) {
                gn[o + h] += count[r] * (alpha[h] + slope_e[h] * N[o + h]) + slope_e[h] * csum[o + h];
              }
            }
          }
        }
      });
}

Var max_pool(Var a, int axis) {
  const Tensor& x = tape_of(a).value(a);
  require_rank2("max_pool", x);
  const int rows = x.rows(), cols = x.cols();
  if (axis == 0) return max_pool_rows(a, rows);
  if (axis == 1) return transpose(max_pool_rows(transpose(a), cols));
  throw ContractViolation("max_pool axis must be 0 or 1");
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  const Tensor& x = t.value(a);
  double s = 0.0;
  for (double v : x.data) s += v;
  const int ia = a.id;
  return t.push(Tensor::scalar(s), {ia}, [ia](Tape& tp, int self) {
    const double g = tp.grad(Var{&tp, self}).data[0];
    Tensor& ga = tp.grad_buffer(ia);
    for (double& v : ga.data) v += g;
  });
}

Var mean(Var a) {
  const std::size_t n = tape_of(a).value(a).size();
  if (n == 0) throw ContractViolation("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var l1_norm(Var a) { return sum(abs(a)); }

Var l2_norm(Var a) {
  Tape& t = tape_of(a);
  const Tensor& x = t.value(a);
  double s = 0.0;
  for (double v : x.data) s += v * v;
  const double n = std::sqrt(s);
  const int ia = a.id;
  return t.push(Tensor::scalar(n), {ia}, [ia, n](Tape& tp, int self) {
    if (n == 0.0) return;  // subgradient 0 at the origin
    const double g = tp.grad(Var{&tp, self}).data[0];
    const Tensor& xv = tp.value(ia);
    Tensor& ga = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < xv.size(); ++i) ga.data[i] += g * xv.data[i] / n;
  });
}

Var row_l2_norms(Var a) {
  Tape& t = tape_of(a);
  const Tensor& x = t.value(a);
  require_rank2("row_l2_norms", x);
  const int r = x.rows(), c = x.cols();
  Tensor out({r, 1});
  for (int i = 0; i < r; ++i) {
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += x(i, j) * x(i, j);
    out.data[i] = std::sqrt(s);
  }
  const int ia = a.id;
  return t.push(std::move(out), {ia}, [ia, r, c](Tape& tp, int self) {
    const Tensor& g = tp.grad(Var{&tp, self});
    const Tensor& y = tp.value(self);
    const Tensor& xv = tp.value(ia);
    Tensor& ga = tp.grad_buffer(ia);
    for (int i = 0; i < r; ++i) {
      if (y.data[i] == 0.0) continue;
      for (int j = 0; j < c; ++j) ga(i, j) += g.data[i] * xv(i, j) / y.data[i];
    }
  });
}

Var quat_to_rotmat(Var q) {
  Tape& t = tape_of(q);
  const Tensor& x = t.value(q);
  if (x.rank() != 2 || x.cols() != 4) shape_error("quat_to_rotmat", x);
  const int r = x.rows();
  Tensor out({r, 9});
  for (int i = 0; i < r; ++i) {
    const double w = x(i, 0), a = x(i, 1), b = x(i, 2), c = x(i, 3);
    double* m = out.data.data() + static_cast<std::size_t>(i) * 9;
    m[0] = 1 - 2 * (b * b + c * c);
    m[1] = 2 * (a * b - w * c);
    m[2] = 2 * (a * c + w * b);
    m[3] = 2 * (a * b + w * c);
    m[4] = 1 - 2 * (a * a + c * c);
    m[5] = 2 * (b * c - w * a);
    m[6] = 2 * (a * c - w * b);
    m[7] = 2 * (b * c + w * a);
    m[8] = 1 - 2 * (a * a + b * b);
  }
  const int iq = q.id;
  return t.push(std::move(out), {iq}, [iq, r](Tape& tp, int self) {
    const Tensor& g = tp.grad(Var{&tp, self});
    const Tensor& x = tp.value(iq);
    Tensor& gq = tp.grad_buffer(iq);
    for (int i = 0; i < r; ++i) {
      const double w = x(i, 0), a = x(i, 1), b = x(i, 2), c = x(i, 3);
      const double* G = g.data.data() + static_cast<std::size_t>(i) * 9;
      // Partial derivatives of each entry with respect to w, x, y, z.
      gq(i, 0) += 2 * (-c * G[1] + b * G[2] + c * G[3] - a * G[5] - b * G[6] + a * G[7]);
      gq(i, 1) += 2 * (b * G[1] + c * G[2] + b * G[3] - 2 * a * G[4] - w * G[5] + c * G[6] + w * G[7] -
                       2 * a * G[8]);
      gq(i, 2) += 2 * (-2 * b * G[0] + a * G[1] + w * G[2] + a * G[3] + c * G[5] - w * G[6] + c * G[7] -
                       2 * b * G[8]);
      gq(i, 3) += 2 * (-2 * c * G[0] - w * G[1] + a * G[2] + w * G[3] - 2 * c * G[4] + b * G[5] + a * G[6] +
                       b * G[7]);
    }
  });
}

Var batched_mat3(Var a, Var b, bool transpose_a) {
  Tape& t = same_tape(a, b);
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  if (x.rank() != 2 || y.rank() != 2 || x.cols() != 9 || y.cols() != 9 || x.rows() != y.rows()) {
    shape_error("batched_mat3", x, y);
  }
  const int r = x.rows();
  using M3 = Eigen::Matrix<double, 3, 3, Eigen::RowMajor>;
  Tensor out({r, 9});
  for (int i = 0; i < r; ++i) {
    const Eigen::Map<const M3> A(x.data.data() + 9 * i), B(y.data.data() + 9 * i);
    Eigen::Map<M3> C(out.data.data() + 9 * i);
    if (transpose_a) C.noalias() = A.transpose() * B;
    else C.noalias() = A * B;
  }
  const int ia = a.id, ib = b.id;
  return t.push(std::move(out), {ia, ib}, [ia, ib, r, transpose_a](Tape& tp, int self) {
    const Tensor& g = tp.grad(Var{&tp, self});
    const Tensor& x = tp.value(ia);
    const Tensor& y = tp.value(ib);
    Tensor* ga = tp.needs_grad(ia) ? &tp.grad_buffer(ia) : nullptr;
    Tensor* gb = tp.needs_grad(ib) ? &tp.grad_buffer(ib) : nullptr;
    for (int i = 0; i < r; ++i) {
      const Eigen::Map<const M3> A(x.data.data() + 9 * i), B(y.data.data() + 9 * i), G(g.data.data() + 9 * i);
      if (ga) {
        Eigen::Map<M3> GA(ga->data.data() + 9 * i);
        if (transpose_a) GA.noalias() += B * G.transpose();
        else GA.noalias() += G * B.transpose();
      }
      if (gb) {
        Eigen::Map<M3> GB(gb->data.data() + 9 * i);
        if (transpose_a) GB.noalias() += A * G;
        else GB.noalias() += A.transpose() * G;
      }
    }
  });
}

Var rigid_apply(Var points, Var rotations, Var translations, int group) {
  Tape& t = same_tape(points, rotations);
  same_tape(points, translations);
  const Tensor& p = t.value(points);
  const Tensor& rot = t.value(rotations);
  const Tensor& tr = t.value(translations);
  if (p.rank() != 2 || p.cols() != 3 || rot.rank() != 2 || rot.cols() != 9 || tr.rank() != 2 || tr.cols() != 3 ||
      rot.rows() != tr.rows() || group < 1 || p.rows() != group * rot.rows()) {
    shape_error("rigid_apply", p, rot);
  }
  const int n = p.rows();
  Tensor out({n, 3});
  for (int i = 0; i < n; ++i) {
    const int k = i / group;
    const double* R = rot.data.data() + 9 * k;
    for (int a = 0; a < 3; ++a) {
      out(i, a) = R[3 * a] * p(i, 0) + R[3 * a + 1] * p(i, 1) + R[3 * a + 2] * p(i, 2) + tr(k, a);
    }
  }
  const int ip = points.id, ir = rotations.id, it = translations.id;
  return t.push(std::move(out), {ip, ir, it}, [ip, ir, it, n, group](Tape& tp, int self) {
    const Tensor& g = tp.grad(Var{&tp, self});
    const Tensor& pv = tp.value(ip);
    const Tensor& rv = tp.value(ir);
    Tensor* gp = tp.needs_grad(ip) ? &tp.grad_buffer(ip) : nullptr;
    Tensor* gr = tp.needs_grad(ir) ? &tp.grad_buffer(ir) : nullptr;
    Tensor* gt = tp.needs_grad(it) ? &tp.grad_buffer(it) : nullptr;
    for (int i = 0; i < n; ++i) {
      const int k = i / group;
      const double* R = rv.data.data() + 9 * k;
      for (int a = 0; a < 3; ++a) {
        const double ga = g(i, a);
        if (gt) (*gt)(k, a) += ga;
        for (int b = 0; b < 3; ++b) {
          if (gr) gr->data[9 * k + 3 * a + b] += ga * pv(i, b);
          if (gp) (*gp)(i, b) += ga * R[3 * a + b];
        }
      }
    }
  });
}

}  // namespace gsm::ad
