#pragma once

#include <cstdint>
#include <vector>

#include "repflow/nets.hpp"
#include "repflow/tensor.hpp"

namespace repflow::balance {

// Pairwise Euclidean distances between two latent clouds; rows index the
// first cloud, columns the second. On the unit sphere every entry is in [0,2].
struct CostMatrix {
  int64_t n = 0;
  int64_t m = 0;
  std::vector<double> h;  // n*m, row-major

  double at(int64_t i, int64_t j) const { return h[static_cast<size_t>(i * m + j)]; }
};

// Entropically regularized coupling with uniform marginals (1/n, 1/m).
struct TransportPlan {
  int64_t n = 0;
  int64_t m = 0;
  std::vector<double> pi;  // n*m, row-major
  double sharp_cost = 0.0;
  int64_t iterations = 0;
  double marginal_residual = 0.0;
};

constexpr double kDefaultEps = 0.1;
constexpr int64_t kDefaultMaxIter = 200;
constexpr double kDefaultTol = 1e-6;

CostMatrix cost_matrix(const ad::Tensor& z0, const ad::Tensor& z1);

// Log-domain Sinkhorn with dual potentials. Alternates the row and column
// updates until the L1 marginal residual drops below tol or max_iter is hit,
// then projects the plan onto the feasible polytope so its marginals are
// exact up to roundoff (keeps the sharp cost a valid upper bound on the
// unregularized optimum).
TransportPlan sinkhorn(const CostMatrix& cost, double eps, int64_t max_iter = kDefaultMaxIter,
                       double tol = kDefaultTol);

// (1/n) * min over permutations of the assignment cost; n = m <= 8 only.
double exact_ot_oracle(const CostMatrix& cost);

// Sharp transport cost <H, pi*> as a tracked scalar. The plan is treated as a
// constant: the gradient is that of the cost matrix entries only (envelope
// gradient of the regularized objective). Exactly symmetric in its arguments;
// internally the clouds are ordered canonically before running Sinkhorn.
ad::Tensor balance_loss(const ad::Tensor& z0, const ad::Tensor& z1, double eps,
                        int64_t max_iter = kDefaultMaxIter, double tol = kDefaultTol);

// Squared MMD with a Gaussian kernel; unbiased within-group sums, falling
// back to the biased estimator when a group has a single point. Negative
// estimates clamp to zero (zero gradient there).
ad::Tensor mmd(const ad::Tensor& z0, const ad::Tensor& z1, double bandwidth);

// Median of pooled pairwise distances, the default MMD bandwidth.
double median_heuristic_bandwidth(const ad::Tensor& z0, const ad::Tensor& z1);

// Evaluation-mode Sinkhorn sharp cost between the encoded treatment groups.
// Identical arithmetic to balance_loss on the same inputs, untracked.
double latent_group_distance(const nets::EncoderParams& enc, const ad::Tensor& x,
                             const std::vector<int>& a, double eps,
                             int64_t max_iter = kDefaultMaxIter, double tol = kDefaultTol);

// Shared value path for balance_loss / latent_group_distance: canonical
// orientation, Sinkhorn, sharp cost. Exposed for the eval diagnostics.
double sharp_cost_between(const ad::Tensor& z0, const ad::Tensor& z1, double eps,
                          int64_t max_iter = kDefaultMaxIter, double tol = kDefaultTol);

}  // namespace repflow::balance
