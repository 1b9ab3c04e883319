#pragma once

#include <functional>
#include <string>
#include <vector>

#include "repflow/tensor.hpp"

namespace repflow::ad {

struct NamedParam {
  std::string name;
  Tensor* tensor;
};

// Adam accumulators for one parameter group; buffers parallel the group's
// parameter list and match each tensor's shape.
struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState init(const std::vector<NamedParam>& params, double beta1 = 0.9,
                        double beta2 = 0.999, double eps = 1e-8);
};

// Standard Adam update with bias correction. Throws NumericError naming the
// parameter if its gradient contains NaN/Inf; no parameter is modified then.
void adam_step(const std::vector<NamedParam>& params, const std::vector<Tensor>& grads,
               AdamState& state, double lr);

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  bool pass(double tol) const { return max_rel_err < tol; }
};

// Builds a scalar loss from parameter tensors. When `tape` is non-null the
// tensors are tracked leaves on it; otherwise they are plain values.
using LossFn = std::function<Tensor(Tape* tape, const std::vector<Tensor>& params)>;

// Compares backward() gradients against central finite differences of the
// closure. Per-parameter error is max_i |a_i - n_i| scaled by the larger of
// the two gradient infinity norms; a parameter whose both gradients are below
// 1e-7 in norm reports the raw difference (treated as zero-vs-zero).
GradCheckReport grad_check(const LossFn& loss_fn, const std::vector<NamedParam>& params,
                           double fd_step = 1e-5);

}  // namespace repflow::ad
