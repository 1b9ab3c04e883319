#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "repflow/errors.hpp"

namespace repflow::ad {

class Tape;

// Dense row-major array of doubles, rank 0..2. When `node >= 0` the tensor is
// tracked on `tape` and participates in reverse-mode differentiation. Values
// are immutable once an op has consumed them (ops copy what backward needs).
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> values;
  int node = -1;
  Tape* tape = nullptr;

  Tensor() = default;
  Tensor(std::vector<int64_t> s, std::vector<double> v);

  static Tensor scalar(double v) { return Tensor({}, {v}); }
  static Tensor zeros(std::vector<int64_t> s);

  int64_t size() const { return static_cast<int64_t>(values.size()); }
  int64_t rank() const { return static_cast<int64_t>(shape.size()); }
  int64_t rows() const;
  int64_t cols() const;
  bool tracked() const { return node >= 0 && tape != nullptr; }
  double scalar_value() const;
  bool all_finite() const;
};

std::string shape_str(const std::vector<int64_t>& s);

// Define-by-run tape. Nodes are pushed in execution order, which is a valid
// topological order; backward() replays the recorded closures in reverse.
// Single-threaded per training step; gradients owned by the tape.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&)>;

  // Registers a tracked leaf (parameter or input requiring gradients).
  Tensor leaf(std::vector<int64_t> shape, std::vector<double> values);

  // Extension point for composite ops (used by the transport-cost and MMD
  // losses). Returns the node id the caller should stamp on its result.
  int push_node(const std::vector<int64_t>& out_shape, BackwardFn fn);

  // Gradient buffer for a node, allocated to zeros on first access.
  std::vector<double>& grad(int node);
  bool has_grad(int node) const;

  // Reverse pass from a scalar root. Seeds d(root)/d(root) = 1 and accumulates
  // into every reachable node; tracked leaves off the path keep zero gradients.
  void backward(const Tensor& root);

  // Gradient of a tracked tensor after backward(); zeros if it was unreached.
  Tensor gradient_of(const Tensor& t) const;

  size_t num_nodes() const { return fns_.size(); }
  void reset();

 private:
  std::vector<BackwardFn> fns_;
  std::vector<std::vector<int64_t>> shapes_;
  std::vector<std::vector<double>> grads_;
};

// --- forward primitives -----------------------------------------------------
// Each op computes values eagerly and records a backward closure when any
// input is tracked. Two tracked inputs must live on the same tape.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// (n,k) matrix plus length-k row vector broadcast over rows.
Tensor add_rowvec(const Tensor& m, const Tensor& v);
Tensor relu(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Sum of squared entries (squared-error reduction when fed a difference).
Tensor sum_sq(const Tensor& x);
Tensor scale(const Tensor& x, double c);
Tensor shift(const Tensor& x, double c);
// Row-wise z = u / max(||u||_2, eps).
Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor slice_cols(const Tensor& x, int64_t c0, int64_t c1);
Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& idx);
// Per-row head selection: row i of the result is v1's row where a[i]==1,
// v0's row otherwise. Gradient flows only to the selected side.
Tensor select_rows(const Tensor& v0, const Tensor& v1, const std::vector<int>& a);
// x scaled by a (possibly tracked) scalar tensor.
Tensor scalar_mul(const Tensor& x, const Tensor& s);

}  // namespace repflow::ad
