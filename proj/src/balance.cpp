#include "repflow/balance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace repflow::balance {

using ad::shape_str;

namespace {

double lse(const double* v, int64_t count) {
  double hi = -std::numeric_limits<double>::infinity();
  for (int64_t i = 0; i < count; ++i) hi = std::max(hi, v[i]);
  if (!std::isfinite(hi)) return hi;  // all -inf
  double acc = 0.0;
  for (int64_t i = 0; i < count; ++i) acc += std::exp(v[i] - hi);
  return hi + std::log(acc);
}

// Lexicographic key (row count, then flattened values): fixes the Sinkhorn
// orientation so the loss is exactly symmetric under argument swap.
bool second_cloud_first(const ad::Tensor& z0, const ad::Tensor& z1) {
  if (z0.rows() != z1.rows()) return z1.rows() < z0.rows();
  return std::lexicographical_compare(z1.values.begin(), z1.values.end(), z0.values.begin(),
                                      z0.values.end());
}

struct CanonicalCost {
  CostMatrix cost;   // rows = first cloud in canonical order
  bool swapped;      // true when z1 provided the rows
};

CanonicalCost canonical_cost(const ad::Tensor& z0, const ad::Tensor& z1) {
  const bool swap = second_cloud_first(z0, z1);
  const ad::Tensor& r = swap ? z1 : z0;
  const ad::Tensor& c = swap ? z0 : z1;
  return {cost_matrix(r, c), swap};
}

}  // namespace

CostMatrix cost_matrix(const ad::Tensor& z0, const ad::Tensor& z1) {
  if (z0.rank() != 2 || z1.rank() != 2 || z0.cols() != z1.cols())
    throw ShapeError("cost_matrix: shape mismatch " + shape_str(z0.shape) + " vs " +
                     shape_str(z1.shape));
  if (z0.rows() == 0 || z1.rows() == 0) throw PreconditionError("cost_matrix: empty group");
  const int64_t n = z0.rows(), m = z1.rows(), d = z0.cols();
  CostMatrix out;
  out.n = n;
  out.m = m;
  out.h.resize(static_cast<size_t>(n * m));
  for (int64_t i = 0; i < n; ++i) {
    const double* zi = z0.values.data() + i * d;
    for (int64_t j = 0; j < m; ++j) {
      const double* zj = z1.values.data() + j * d;
      double sq = 0.0;
      for (int64_t k = 0; k < d; ++k) {
        const double diff = zi[k] - zj[k];
        sq += diff * diff;
      }
      out.h[static_cast<size_t>(i * m + j)] = std::sqrt(sq);
    }
  }
  return out;
}

TransportPlan sinkhorn(const CostMatrix& cost, double eps, int64_t max_iter, double tol) {
  if (eps <= 0.0) throw PreconditionError("sinkhorn: eps must be positive");
  if (max_iter < 1) throw PreconditionError("sinkhorn: max_iter must be >= 1");
  for (double v : cost.h)
    if (!std::isfinite(v)) throw PreconditionError("sinkhorn: non-finite cost entry");

  const int64_t n = cost.n, m = cost.m;
  const double a = 1.0 / static_cast<double>(n);
  const double b = 1.0 / static_cast<double>(m);
  const double log_a = std::log(a), log_b = std::log(b);

  std::vector<double> f(static_cast<size_t>(n), 0.0), g(static_cast<size_t>(m), 0.0);
  std::vector<double> row_buf(static_cast<size_t>(m)), col_buf(static_cast<size_t>(n));

  int64_t it = 0;
  while (it < max_iter) {
    ++it;
    // Row potentials from current column potentials; the same log-sum-exp
    // doubles as the row-marginal residual of the previous iterate.
    double row_resid = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t j = 0; j < m; ++j)
        row_buf[static_cast<size_t>(j)] = (g[static_cast<size_t>(j)] - cost.at(i, j)) / eps;
      const double l = lse(row_buf.data(), m);
      row_resid += std::abs(std::exp(f[static_cast<size_t>(i)] / eps + l) - a);
      f[static_cast<size_t>(i)] = eps * (log_a - l);
    }
    if (it > 1 && row_resid < tol) break;
    for (int64_t j = 0; j < m; ++j) {
      for (int64_t i = 0; i < n; ++i)
        col_buf[static_cast<size_t>(i)] = (f[static_cast<size_t>(i)] - cost.at(i, j)) / eps;
      g[static_cast<size_t>(j)] = eps * (log_b - lse(col_buf.data(), n));
    }
  }

  TransportPlan plan;
  plan.n = n;
  plan.m = m;
  plan.iterations = it;
  plan.pi.resize(static_cast<size_t>(n * m));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j)
      plan.pi[static_cast<size_t>(i * m + j)] =
          std::exp((f[static_cast<size_t>(i)] + g[static_cast<size_t>(j)] - cost.at(i, j)) / eps);

  // Project onto the transport polytope: scale rows then columns down to
  // their marginals and spread the leftover mass as a rank-one correction.
  std::vector<double> row_sum(static_cast<size_t>(n), 0.0), col_sum(static_cast<size_t>(m), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j) row_sum[static_cast<size_t>(i)] += plan.pi[static_cast<size_t>(i * m + j)];
  for (int64_t i = 0; i < n; ++i) {
    const double s = row_sum[static_cast<size_t>(i)];
    if (s > a) {
      const double scale = a / s;
      for (int64_t j = 0; j < m; ++j) plan.pi[static_cast<size_t>(i * m + j)] *= scale;
    }
  }
  for (int64_t j = 0; j < m; ++j)
    for (int64_t i = 0; i < n; ++i) col_sum[static_cast<size_t>(j)] += plan.pi[static_cast<size_t>(i * m + j)];
  for (int64_t j = 0; j < m; ++j) {
    const double s = col_sum[static_cast<size_t>(j)];
    if (s > b) {
      const double scale = b / s;
      for (int64_t i = 0; i < n; ++i) plan.pi[static_cast<size_t>(i * m + j)] *= scale;
    }
  }
  std::vector<double> err_a(static_cast<size_t>(n), 0.0), err_b(static_cast<size_t>(m), 0.0);
  double total_err = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < m; ++j) s += plan.pi[static_cast<size_t>(i * m + j)];
    err_a[static_cast<size_t>(i)] = a - s;
    total_err += a - s;
  }
  for (int64_t j = 0; j < m; ++j) {
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += plan.pi[static_cast<size_t>(i * m + j)];
    err_b[static_cast<size_t>(j)] = b - s;
  }
  if (total_err > 0.0) {
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < m; ++j)
        plan.pi[static_cast<size_t>(i * m + j)] +=
            err_a[static_cast<size_t>(i)] * err_b[static_cast<size_t>(j)] / total_err;
  }

  double cost_acc = 0.0, final_resid = 0.0;
  std::fill(row_sum.begin(), row_sum.end(), 0.0);
  std::fill(col_sum.begin(), col_sum.end(), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j) {
      const double p = plan.pi[static_cast<size_t>(i * m + j)];
      cost_acc += p * cost.at(i, j);
      row_sum[static_cast<size_t>(i)] += p;
      col_sum[static_cast<size_t>(j)] += p;
    }
  for (int64_t i = 0; i < n; ++i) final_resid += std::abs(row_sum[static_cast<size_t>(i)] - a);
  for (int64_t j = 0; j < m; ++j) final_resid += std::abs(col_sum[static_cast<size_t>(j)] - b);
  plan.sharp_cost = cost_acc;
  plan.marginal_residual = final_resid;
  return plan;
}

double exact_ot_oracle(const CostMatrix& cost) {
  if (cost.n != cost.m || cost.n > 8)
    throw PreconditionError("exact_ot_oracle: supports square instances with n <= 8 only, got " +
                            std::to_string(cost.n) + "x" + std::to_string(cost.m));
  const int64_t n = cost.n;
  std::vector<int64_t> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += cost.at(i, perm[static_cast<size_t>(i)]);
    best = std::min(best, acc);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(n);
}

double sharp_cost_between(const ad::Tensor& z0, const ad::Tensor& z1, double eps, int64_t max_iter,
                          double tol) {
  const CanonicalCost cc = canonical_cost(z0, z1);
  return sinkhorn(cc.cost, eps, max_iter, tol).sharp_cost;
}

ad::Tensor balance_loss(const ad::Tensor& z0, const ad::Tensor& z1, double eps, int64_t max_iter,
                        double tol) {
  const CanonicalCost cc = canonical_cost(z0, z1);
  const TransportPlan plan = sinkhorn(cc.cost, eps, max_iter, tol);
  ad::Tensor out = ad::Tensor::scalar(plan.sharp_cost);

  ad::Tape* tape = nullptr;
  if (z0.tracked()) tape = z0.tape;
  if (z1.tracked()) {
    if (tape && tape != z1.tape)
      throw PreconditionError("balance_loss: operands tracked on different tapes");
    tape = z1.tape;
  }
  if (!tape) return out;

  const int node_r = cc.swapped ? z1.node : z0.node;
  const int node_c = cc.swapped ? z0.node : z1.node;
  const std::vector<double> rv = cc.swapped ? z1.values : z0.values;
  const std::vector<double> cv = cc.swapped ? z0.values : z1.values;
  const int64_t n = cc.cost.n, m = cc.cost.m;
  const int64_t d = z0.cols();
  const int self = static_cast<int>(tape->num_nodes());

  out.tape = tape;
  out.node = tape->push_node(out.shape, [self, node_r, node_c, rv, cv, pi = plan.pi,
                                         h = cc.cost.h, n, m, d](ad::Tape& tp) {
    const double gout = tp.grad(self)[0];
    // d<H,pi>/dz with pi frozen: each pair contributes pi_ij * (r_i - c_j)/H_ij.
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t j = 0; j < m; ++j) {
        const double p = pi[static_cast<size_t>(i * m + j)];
        const double dist = h[static_cast<size_t>(i * m + j)];
        if (p <= 0.0 || dist <= 1e-30) continue;
        const double coef = gout * p / dist;
        for (int64_t k = 0; k < d; ++k) {
          const double diff = rv[static_cast<size_t>(i * d + k)] - cv[static_cast<size_t>(j * d + k)];
          if (node_r >= 0) tp.grad(node_r)[static_cast<size_t>(i * d + k)] += coef * diff;
          if (node_c >= 0) tp.grad(node_c)[static_cast<size_t>(j * d + k)] -= coef * diff;
        }
      }
    }
  });
  return out;
}

ad::Tensor mmd(const ad::Tensor& z0, const ad::Tensor& z1, double bandwidth) {
  if (z0.rank() != 2 || z1.rank() != 2 || z0.cols() != z1.cols())
    throw ShapeError("mmd: shape mismatch " + shape_str(z0.shape) + " vs " + shape_str(z1.shape));
  if (z0.rows() == 0 || z1.rows() == 0) throw PreconditionError("mmd: empty group");
  if (bandwidth <= 0.0) throw PreconditionError("mmd: bandwidth must be positive");

  const int64_t n = z0.rows(), m = z1.rows(), d = z0.cols();
  const double inv_bw2 = 1.0 / (bandwidth * bandwidth);
  const bool unbiased = n > 1 && m > 1;

  auto kernel = [&](const double* u, const double* v) {
    double sq = 0.0;
    for (int64_t k = 0; k < d; ++k) {
      const double diff = u[k] - v[k];
      sq += diff * diff;
    }
    return std::exp(-0.5 * sq * inv_bw2);
  };

  const double w00 = unbiased ? 1.0 / static_cast<double>(n * (n - 1)) : 1.0 / static_cast<double>(n * n);
  const double w11 = unbiased ? 1.0 / static_cast<double>(m * (m - 1)) : 1.0 / static_cast<double>(m * m);
  const double w01 = -2.0 / static_cast<double>(n * m);

  double value = 0.0;
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j) {
      if (unbiased && i == j) continue;
      value += w00 * kernel(z0.values.data() + i * d, z0.values.data() + j * d);
    }
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < m; ++j) {
      if (unbiased && i == j) continue;
      value += w11 * kernel(z1.values.data() + i * d, z1.values.data() + j * d);
    }
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < m; ++j)
      value += w01 * kernel(z0.values.data() + i * d, z1.values.data() + j * d);

  const bool clamped = value < 0.0;
  ad::Tensor out = ad::Tensor::scalar(clamped ? 0.0 : value);

  ad::Tape* tape = nullptr;
  if (z0.tracked()) tape = z0.tape;
  if (z1.tracked()) {
    if (tape && tape != z1.tape)
      throw PreconditionError("mmd: operands tracked on different tapes");
    tape = z1.tape;
  }
  if (!tape || clamped) return out;  // clamped value has zero subgradient

  const int n0 = z0.node, n1 = z1.node;
  const int self = static_cast<int>(tape->num_nodes());
  out.tape = tape;
  out.node = tape->push_node(
      out.shape,
      [self, n0, n1, v0 = z0.values, v1 = z1.values, n, m, d, inv_bw2, unbiased, w00, w11,
       w01](ad::Tape& tp) {
        const double gout = tp.grad(self)[0];
        auto kern = [&](const double* u, const double* v) {
          double sq = 0.0;
          for (int64_t k = 0; k < d; ++k) {
            const double diff = u[k] - v[k];
            sq += diff * diff;
          }
          return std::exp(-0.5 * sq * inv_bw2);
        };
        // dk(u,v)/du = k * (v - u) / bw^2
        auto accumulate = [&](double weight, const double* u, const double* v, double* gu,
                              double* gv) {
          const double kv = kern(u, v);
          const double coef = gout * weight * kv * inv_bw2;
          for (int64_t k = 0; k < d; ++k) {
            const double delta = v[k] - u[k];
            if (gu) gu[k] += coef * delta;
            if (gv) gv[k] -= coef * delta;
          }
        };
        double* g0 = n0 >= 0 ? tp.grad(n0).data() : nullptr;
        double* g1 = n1 >= 0 ? tp.grad(n1).data() : nullptr;
        if (g0)
          for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < n; ++j) {
              if (unbiased && i == j) continue;
              accumulate(w00, v0.data() + i * d, v0.data() + j * d, g0 + i * d, g0 + j * d);
            }
        if (g1)
          for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < m; ++j) {
              if (unbiased && i == j) continue;
              accumulate(w11, v1.data() + i * d, v1.data() + j * d, g1 + i * d, g1 + j * d);
            }
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < m; ++j)
            accumulate(w01, v0.data() + i * d, v1.data() + j * d, g0 ? g0 + i * d : nullptr,
                       g1 ? g1 + j * d : nullptr);
      });
  return out;
}

double median_heuristic_bandwidth(const ad::Tensor& z0, const ad::Tensor& z1) {
  const int64_t n = z0.rows(), m = z1.rows(), d = z0.cols();
  std::vector<double> pooled;
  pooled.reserve(static_cast<size_t>((n + m) * d));
  pooled.insert(pooled.end(), z0.values.begin(), z0.values.end());
  pooled.insert(pooled.end(), z1.values.begin(), z1.values.end());
  const int64_t total = n + m;
  std::vector<double> dists;
  dists.reserve(static_cast<size_t>(total * (total - 1) / 2));
  for (int64_t i = 0; i < total; ++i)
    for (int64_t j = i + 1; j < total; ++j) {
      double sq = 0.0;
      for (int64_t k = 0; k < d; ++k) {
        const double diff = pooled[static_cast<size_t>(i * d + k)] - pooled[static_cast<size_t>(j * d + k)];
        sq += diff * diff;
      }
      dists.push_back(std::sqrt(sq));
    }
  if (dists.empty()) return 1.0;
  std::nth_element(dists.begin(), dists.begin() + dists.size() / 2, dists.end());
  const double med = dists[dists.size() / 2];
  return med > 1e-12 ? med : 1.0;
}

double latent_group_distance(const nets::EncoderParams& enc, const ad::Tensor& x,
                             const std::vector<int>& a, double eps, int64_t max_iter, double tol) {
  if (x.rank() != 2 || static_cast<int64_t>(a.size()) != x.rows())
    throw ShapeError("latent_group_distance: treatment count vs " + shape_str(x.shape));
  std::vector<int64_t> idx0, idx1;
  for (size_t i = 0; i < a.size(); ++i) (a[i] ? idx1 : idx0).push_back(static_cast<int64_t>(i));
  if (idx0.empty() || idx1.empty())
    throw PreconditionError("latent_group_distance: a treatment group is empty");
  const ad::Tensor z = nets::encoder_forward(enc, x);
  const ad::Tensor z0 = ad::gather_rows(z, idx0);
  const ad::Tensor z1 = ad::gather_rows(z, idx1);
  return sharp_cost_between(z0, z1, eps, max_iter, tol);
}

}  // namespace repflow::balance
