#include "repflow/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

namespace repflow::ad {

namespace {

using MatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using MutMatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

int64_t shape_product(const std::vector<int64_t>& s) {
  int64_t p = 1;
  for (int64_t d : s) p *= d;
  return p;
}

[[noreturn]] void shape_fail(const char* op, const std::vector<int64_t>& a,
                             const std::vector<int64_t>& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

Tape* common_tape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.tracked() && b.tracked() && a.tape != b.tape)
    throw PreconditionError(std::string(op) + ": operands tracked on different tapes");
  if (a.tracked()) return a.tape;
  if (b.tracked()) return b.tape;
  return nullptr;
}

// Node ids are assigned sequentially, so the id of the node about to be pushed
// is num_nodes(); closures capture it to find their own output gradient.
template <typename Fn>
void track(Tensor& out, Tape* tape, Fn&& fn) {
  if (!tape) return;
  out.tape = tape;
  out.node = tape->push_node(out.shape, std::forward<Fn>(fn));
}

// Elementwise unary op; dydx receives (input value, output value).
template <typename F, typename D>
Tensor unary_op(const Tensor& x, F f, D dydx) {
  Tensor out(x.shape, std::vector<double>(x.values.size()));
  for (size_t i = 0; i < x.values.size(); ++i) out.values[i] = f(x.values[i]);
  if (x.tracked()) {
    const int self = static_cast<int>(x.tape->num_nodes());
    const int nx = x.node;
    track(out, x.tape, [self, nx, xv = x.values, yv = out.values, dydx](Tape& tp) {
      const auto& g = tp.grad(self);
      auto& gx = tp.grad(nx);
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * dydx(xv[i], yv[i]);
    });
  }
  return out;
}

double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Tensor::Tensor(std::vector<int64_t> s, std::vector<double> v)
    : shape(std::move(s)), values(std::move(v)) {
  if (shape_product(shape) != static_cast<int64_t>(values.size()))
    throw ShapeError("Tensor: shape " + shape_str(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
}

Tensor Tensor::zeros(std::vector<int64_t> s) {
  std::vector<double> v(static_cast<size_t>(shape_product(s)), 0.0);
  return Tensor(std::move(s), std::move(v));
}

int64_t Tensor::rows() const {
  if (shape.size() != 2) throw ShapeError("rows(): tensor is not rank-2, shape " + shape_str(shape));
  return shape[0];
}

int64_t Tensor::cols() const {
  if (shape.size() != 2) throw ShapeError("cols(): tensor is not rank-2, shape " + shape_str(shape));
  return shape[1];
}

double Tensor::scalar_value() const {
  if (size() != 1) throw ShapeError("scalar_value(): tensor has " + std::to_string(size()) + " entries");
  return values[0];
}

bool Tensor::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

std::string shape_str(const std::vector<int64_t>& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

// --- Tape ---------------------------------------------------------------------

Tensor Tape::leaf(std::vector<int64_t> shape, std::vector<double> values) {
  Tensor t(std::move(shape), std::move(values));
  t.node = push_node(t.shape, nullptr);
  t.tape = this;
  return t;
}

int Tape::push_node(const std::vector<int64_t>& out_shape, BackwardFn fn) {
  fns_.push_back(std::move(fn));
  shapes_.push_back(out_shape);
  grads_.emplace_back();
  return static_cast<int>(fns_.size()) - 1;
}

std::vector<double>& Tape::grad(int node) {
  auto& g = grads_.at(static_cast<size_t>(node));
  if (g.empty()) g.assign(static_cast<size_t>(shape_product(shapes_[static_cast<size_t>(node)])), 0.0);
  return g;
}

bool Tape::has_grad(int node) const {
  return !grads_.at(static_cast<size_t>(node)).empty();
}

void Tape::backward(const Tensor& root) {
  if (!root.tracked() || root.tape != this)
    throw PreconditionError("backward: root is not tracked on this tape");
  if (root.size() != 1)
    throw PreconditionError("backward: root must be scalar, shape " + shape_str(root.shape));
  for (auto& g : grads_) g.clear();
  grad(root.node).assign(1, 1.0);
  for (int id = root.node; id >= 0; --id) {
    if (!has_grad(id)) continue;  // unreached from root
    if (fns_[static_cast<size_t>(id)]) fns_[static_cast<size_t>(id)](*this);
  }
}

Tensor Tape::gradient_of(const Tensor& t) const {
  if (!t.tracked() || t.tape != this)
    throw PreconditionError("gradient_of: tensor is not tracked on this tape");
  const auto& g = grads_.at(static_cast<size_t>(t.node));
  if (g.empty()) return Tensor::zeros(t.shape);
  return Tensor(t.shape, g);
}

void Tape::reset() {
  fns_.clear();
  shapes_.clear();
  grads_.clear();
}

// --- primitives -----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
    shape_fail("matmul", a.shape, b.shape);
  const int64_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor out({n, m}, std::vector<double>(static_cast<size_t>(n * m)));
  {
    MatMap A(a.values.data(), n, k), B(b.values.data(), k, m);
    MutMatMap C(out.values.data(), n, m);
    C.noalias() = A * B;
  }
  Tape* tape = common_tape("matmul", a, b);
  if (!tape) return out;
  const int self = static_cast<int>(tape->num_nodes());
  const int na = a.node, nb = b.node;
  track(out, tape, [self, na, nb, av = a.values, bv = b.values, n, k, m](Tape& tp) {
    MatMap G(tp.grad(self).data(), n, m);
    if (na >= 0) {
      MatMap B(bv.data(), k, m);
      MutMatMap GA(tp.grad(na).data(), n, k);
      GA.noalias() += G * B.transpose();
    }
    if (nb >= 0) {
      MatMap A(av.data(), n, k);
      MutMatMap GB(tp.grad(nb).data(), k, m);
      GB.noalias() += A.transpose() * G;
    }
  });
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) shape_fail("add", a.shape, b.shape);
  Tensor out(a.shape, std::vector<double>(a.values.size()));
  for (size_t i = 0; i < a.values.size(); ++i) out.values[i] = a.values[i] + b.values[i];
  Tape* tape = common_tape("add", a, b);
  if (!tape) return out;
  const int self = static_cast<int>(tape->num_nodes());
  const int na = a.node, nb = b.node;
  track(out, tape, [self, na, nb](Tape& tp) {
    const auto& g = tp.grad(self);
    if (na >= 0) {
      auto& ga = tp.grad(na);
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    }
    if (nb >= 0) {
      auto& gb = tp.grad(nb);
      for (size_t i = 0; i < gb.size(); ++i) gb[i] += g[i];
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) shape_fail("sub", a.shape, b.shape);
  Tensor out(a.shape, std::vector<double>(a.values.size()));
  for (size_t i = 0; i < a.values.size(); ++i) out.values[i] = a.values[i] - b.values[i];
  Tape* tape = common_tape("sub", a, b);
  if (!tape) return out;
  const int self = static_cast<int>(tape->num_nodes());
  const int na = a.node, nb = b.node;
  track(out, tape, [self, na, nb](Tape& tp) {
    const auto& g = tp.grad(self);
    if (na >= 0) {
      auto& ga = tp.grad(na);
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    }
    if (nb >= 0) {
      auto& gb = tp.grad(nb);
      for (size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) shape_fail("mul", a.shape, b.shape);
  Tensor out(a.shape, std::vector<double>(a.values.size()));
  for (size_t i = 0; i < a.values.size(); ++i) out.values[i] = a.values[i] * b.values[i];
  Tape* tape = common_tape("mul", a, b);
  if (!tape) return out;
  const int self = static_cast<int>(tape->num_nodes());
  const int na = a.node, nb = b.node;
  track(out, tape, [self, na, nb, av = a.values, bv = b.values](Tape& tp) {
    const auto& g = tp.grad(self);
    if (na >= 0) {
      auto& ga = tp.grad(na);
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (nb >= 0) {
      auto& gb = tp.grad(nb);
      for (size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
  return out;
}

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
  if (m.rank() != 2 || v.rank() != 1 || m.cols() != v.shape[0])
    shape_fail("add_rowvec", m.shape, v.shape);
  const int64_t n = m.rows(), k = m.cols();
  Tensor out(m.shape, std::vector<double>(m.values.size()));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < k; ++j)
      out.values[static_cast<size_t>(i * k + j)] =
          m.values[static_cast<size_t>(i * k + j)] + v.values[static_cast<size_t>(j)];
  Tape* tape = common_tape("add_rowvec", m, v);
  if (!tape) return out;
  const int self = static_cast<int>(tape->num_nodes());
  const int nm = m.node, nv = v.node;
  track(out, tape, [self, nm, nv, n, k](Tape& tp) {
    const auto& g = tp.grad(self);
    if (nm >= 0) {
      auto& gm = tp.grad(nm);
      for (size_t i = 0; i < gm.size(); ++i) gm[i] += g[i];
    }
    if (nv >= 0) {
      auto& gv = tp.grad(nv);
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < k; ++j)
          gv[static_cast<size_t>(j)] += g[static_cast<size_t>(i * k + j)];
    }
  });
  return out;
}

Tensor relu(const Tensor& x) {
  return unary_op(x, [](double v) { return v > 0.0 ? v : 0.0; },
                  [](double xi, double) { return xi > 0.0 ? 1.0 : 0.0; });
}

Tensor silu(const Tensor& x) {
  return unary_op(x, [](double v) { return v * sigmoid_scalar(v); },
                  [](double xi, double) {
                    const double s = sigmoid_scalar(xi);
                    return s * (1.0 + xi * (1.0 - s));
                  });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(x, [](double v) { return sigmoid_scalar(v); },
                  [](double, double yi) { return yi * (1.0 - yi); });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values) acc += v;
  Tensor out = Tensor::scalar(acc);
  if (x.tracked()) {
    const int self = static_cast<int>(x.tape->num_nodes());
    const int nx = x.node;
    track(out, x.tape, [self, nx](Tape& tp) {
      const double g = tp.grad(self)[0];
      auto& gx = tp.grad(nx);
      for (auto& v : gx) v += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw PreconditionError("mean: empty tensor");
  double acc = 0.0;
  for (double v : x.values) acc += v;
  const double inv = 1.0 / static_cast<double>(x.size());
  Tensor out = Tensor::scalar(acc * inv);
  if (x.tracked()) {
    const int self = static_cast<int>(x.tape->num_nodes());
    const int nx = x.node;
    track(out, x.tape, [self, nx, inv](Tape& tp) {
      const double g = tp.grad(self)[0] * inv;
      auto& gx = tp.grad(nx);
      for (auto& v : gx) v += g;
    });
  }
  return out;
}

Tensor sum_sq(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values) acc += v * v;
  Tensor out = Tensor::scalar(acc);
  if (x.tracked()) {
    const int self = static_cast<int>(x.tape->num_nodes());
    const int nx = x.node;
    track(out, x.tape, [self, nx, xv = x.values](Tape& tp) {
      const double g = tp.grad(self)[0];
      auto& gx = tp.grad(nx);
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += 2.0 * g * xv[i];
    });
  }
  return out;
}

Tensor scale(const Tensor& x, double c) {
  Tensor out(x.shape, std::vector<double>(x.values.size()));
  for (size_t i = 0; i < x.values.size(); ++i) out.values[i] = x.values[i] * c;
  if (x.tracked()) {
    const int self = static_cast<int>(x.tape->num_nodes());
    const int nx = x.node;
    track(out, x.tape, [self, nx, c](Tape& tp) {
      const auto& g = tp.grad(self);
      auto& gx = tp.grad(nx);
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * c;
    });
  }
  return out;
}

Tensor shift(const Tensor& x, double c) {
  return unary_op(x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor l2_normalize_rows(const Tensor& x, double eps) {
  if (x.rank() != 2) throw ShapeError("l2_normalize_rows: want rank-2, got " + shape_str(x.shape));
  const int64_t n = x.rows(), k = x.cols();
  Tensor out(x.shape, std::vector<double>(x.values.size()));
  std::vector<double> norms(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (int64_t j = 0; j < k; ++j) {
      const double v = x.values[static_cast<size_t>(i * k + j)];
      sq += v * v;
    }
    const double r = std::max(std::sqrt(sq), eps);
    norms[static_cast<size_t>(i)] = r;
    for (int64_t j = 0; j < k; ++j)
      out.values[static_cast<size_t>(i * k + j)] = x.values[static_cast<size_t>(i * k + j)] / r;
  }
  if (x.tracked()) {
    const int self = static_cast<int>(x.tape->num_nodes());
    const int nx = x.node;
    track(out, x.tape, [self, nx, yv = out.values, norms, n, k, eps](Tape& tp) {
      const auto& g = tp.grad(self);
      auto& gx = tp.grad(nx);
      for (int64_t i = 0; i < n; ++i) {
        const double r = norms[static_cast<size_t>(i)];
        if (r > eps) {
          double dot = 0.0;
          for (int64_t j = 0; j < k; ++j)
            dot += g[static_cast<size_t>(i * k + j)] * yv[static_cast<size_t>(i * k + j)];
          for (int64_t j = 0; j < k; ++j) {
            const size_t idx = static_cast<size_t>(i * k + j);
            gx[idx] += (g[idx] - dot * yv[idx]) / r;
          }
        } else {
          // Below the epsilon floor the map is u/eps, a constant scaling.
          for (int64_t j = 0; j < k; ++j) {
            const size_t idx = static_cast<size_t>(i * k + j);
            gx[idx] += g[idx] / eps;
          }
        }
      }
    });
  }
  return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows())
    shape_fail("concat_cols", a.shape, b.shape);
  const int64_t n = a.rows(), ka = a.cols(), kb = b.cols();
  Tensor out({n, ka + kb}, std::vector<double>(static_cast<size_t>(n * (ka + kb))));
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < ka; ++j)
      out.values[static_cast<size_t>(i * (ka + kb) + j)] = a.values[static_cast<size_t>(i * ka + j)];
    for (int64_t j = 0; j < kb; ++j)
      out.values[static_cast<size_t>(i * (ka + kb) + ka + j)] = b.values[static_cast<size_t>(i * kb + j)];
  }
  Tape* tape = common_tape("concat_cols", a, b);
  if (!tape) return out;
  const int self = static_cast<int>(tape->num_nodes());
  const int na = a.node, nb = b.node;
  track(out, tape, [self, na, nb, n, ka, kb](Tape& tp) {
    const auto& g = tp.grad(self);
    if (na >= 0) {
      auto& ga = tp.grad(na);
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < ka; ++j)
          ga[static_cast<size_t>(i * ka + j)] += g[static_cast<size_t>(i * (ka + kb) + j)];
    }
    if (nb >= 0) {
      auto& gb = tp.grad(nb);
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < kb; ++j)
          gb[static_cast<size_t>(i * kb + j)] += g[static_cast<size_t>(i * (ka + kb) + ka + j)];
    }
  });
  return out;
}

Tensor slice_cols(const Tensor& x, int64_t c0, int64_t c1) {
  if (x.rank() != 2 || c0 < 0 || c1 > x.cols() || c0 >= c1)
    throw ShapeError("slice_cols: invalid range [" + std::to_string(c0) + "," + std::to_string(c1) +
                     ") for shape " + shape_str(x.shape));
  const int64_t n = x.rows(), k = x.cols(), w = c1 - c0;
  Tensor out({n, w}, std::vector<double>(static_cast<size_t>(n * w)));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < w; ++j)
      out.values[static_cast<size_t>(i * w + j)] = x.values[static_cast<size_t>(i * k + c0 + j)];
  if (x.tracked()) {
    const int self = static_cast<int>(x.tape->num_nodes());
    const int nx = x.node;
    track(out, x.tape, [self, nx, n, k, w, c0](Tape& tp) {
      const auto& g = tp.grad(self);
      auto& gx = tp.grad(nx);
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < w; ++j)
          gx[static_cast<size_t>(i * k + c0 + j)] += g[static_cast<size_t>(i * w + j)];
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& idx) {
  if (x.rank() != 2) throw ShapeError("gather_rows: want rank-2, got " + shape_str(x.shape));
  const int64_t n = x.rows(), k = x.cols();
  for (int64_t i : idx)
    if (i < 0 || i >= n)
      throw PreconditionError("gather_rows: index " + std::to_string(i) + " out of range [0," +
                              std::to_string(n) + ")");
  const int64_t m = static_cast<int64_t>(idx.size());
  Tensor out({m, k}, std::vector<double>(static_cast<size_t>(m * k)));
  for (int64_t i = 0; i < m; ++i)
    std::copy_n(x.values.begin() + idx[static_cast<size_t>(i)] * k, k,
                out.values.begin() + i * k);
  if (x.tracked()) {
    const int self = static_cast<int>(x.tape->num_nodes());
    const int nx = x.node;
    track(out, x.tape, [self, nx, idx, k, m](Tape& tp) {
      const auto& g = tp.grad(self);
      auto& gx = tp.grad(nx);
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < k; ++j)
          gx[static_cast<size_t>(idx[static_cast<size_t>(i)] * k + j)] +=
              g[static_cast<size_t>(i * k + j)];
    });
  }
  return out;
}

Tensor select_rows(const Tensor& v0, const Tensor& v1, const std::vector<int>& a) {
  if (v0.shape != v1.shape) shape_fail("select_rows", v0.shape, v1.shape);
  if (v0.rank() != 2 || static_cast<int64_t>(a.size()) != v0.rows())
    throw ShapeError("select_rows: flag count " + std::to_string(a.size()) + " vs shape " +
                     shape_str(v0.shape));
  for (int f : a)
    if (f != 0 && f != 1) throw PreconditionError("select_rows: flags must be 0 or 1");
  const int64_t n = v0.rows(), k = v0.cols();
  Tensor out(v0.shape, std::vector<double>(v0.values.size()));
  for (int64_t i = 0; i < n; ++i) {
    const Tensor& src = a[static_cast<size_t>(i)] ? v1 : v0;
    std::copy_n(src.values.begin() + i * k, k, out.values.begin() + i * k);
  }
  Tape* tape = common_tape("select_rows", v0, v1);
  if (!tape) return out;
  const int self = static_cast<int>(tape->num_nodes());
  const int n0 = v0.node, n1 = v1.node;
  track(out, tape, [self, n0, n1, a, n, k](Tape& tp) {
    const auto& g = tp.grad(self);
    for (int64_t i = 0; i < n; ++i) {
      const int target = a[static_cast<size_t>(i)] ? n1 : n0;
      if (target < 0) continue;
      auto& gt = tp.grad(target);
      for (int64_t j = 0; j < k; ++j)
        gt[static_cast<size_t>(i * k + j)] += g[static_cast<size_t>(i * k + j)];
    }
  });
  return out;
}

Tensor scalar_mul(const Tensor& x, const Tensor& s) {
  if (s.size() != 1) shape_fail("scalar_mul", x.shape, s.shape);
  const double sv = s.values[0];
  Tensor out(x.shape, std::vector<double>(x.values.size()));
  for (size_t i = 0; i < x.values.size(); ++i) out.values[i] = x.values[i] * sv;
  Tape* tape = common_tape("scalar_mul", x, s);
  if (!tape) return out;
  const int self = static_cast<int>(tape->num_nodes());
  const int nx = x.node, ns = s.node;
  track(out, tape, [self, nx, ns, sv, xv = x.values](Tape& tp) {
    const auto& g = tp.grad(self);
    if (nx >= 0) {
      auto& gx = tp.grad(nx);
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * sv;
    }
    if (ns >= 0) {
      double acc = 0.0;
      for (size_t i = 0; i < xv.size(); ++i) acc += g[i] * xv[i];
      tp.grad(ns)[0] += acc;
    }
  });
  return out;
}

}  // namespace repflow::ad
