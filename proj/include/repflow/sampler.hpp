#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "repflow/data.hpp"
#include "repflow/nets.hpp"
#include "repflow/tensor.hpp"

namespace repflow::sampler {

// Generated potential outcomes for one (x, a) request, in original outcome
// units. noise_seeds[m] fully determines draw m together with the parameters.
struct PosteriorDraws {
  int64_t m = 0;
  int64_t d_y = 1;
  std::vector<double> draws;  // m * d_y
  std::vector<uint64_t> noise_seeds;
};

// Scalar-vector field for stub-driven tests: maps (state, t) to dy/dt.
using FieldFn = std::function<std::vector<double>(const std::vector<double>& y, double t)>;

// Classical RK4 from t=1 down to t=0 with fixed step -1/n_steps.
std::vector<double> rk4_integrate(const FieldFn& field, std::vector<double> y1, int64_t n_steps);

// Reverse-time integration of the trained field; each row of y1 integrates
// independently under its own conditioning row and arm flag, so batched and
// one-at-a-time integration agree bitwise.
ad::Tensor rk4_integrate_rows(const nets::VelocityParams& vel, const ad::Tensor& y1,
                              const ad::Tensor& cond, const std::vector<int>& a, int64_t n_steps);

// Rows of y1 are independent noise draws sharing one conditioning vector.
ad::Tensor rk4_integrate_batch(const nets::VelocityParams& vel, const ad::Tensor& y1,
                               const std::vector<double>& cond_row, int a, int64_t n_steps);

std::vector<double> rk4_integrate(const nets::VelocityParams& vel, const std::vector<double>& y1,
                                  const std::vector<double>& z, int a, int64_t n_steps);

// Draws M potential outcomes for covariate row x (original units) under arm a.
// Noise stream m derives from (seed, m) only, so the two arms see identical
// noise and draws are reproducible under any execution order. `enc` may be
// null when the velocity net is conditioned on standardized x directly.
PosteriorDraws sample_po(const nets::EncoderParams* enc, const nets::VelocityParams& vel,
                         const std::vector<double>& x_row, int a, int64_t m_draws, int64_t n_steps,
                         uint64_t seed, const data::Standardizer& st);

// Empirical response function: mean of the M draws.
std::vector<double> estimate_mu(const nets::EncoderParams* enc, const nets::VelocityParams& vel,
                                const std::vector<double>& x_row, int a, int64_t m_draws,
                                int64_t n_steps, uint64_t seed, const data::Standardizer& st);

// CATE estimate mu_1 - mu_0 with common random numbers across arms.
std::vector<double> estimate_cate(const nets::EncoderParams* enc, const nets::VelocityParams& vel,
                                  const std::vector<double>& x_row, int64_t m_draws,
                                  int64_t n_steps, uint64_t seed, const data::Standardizer& st);

}  // namespace repflow::sampler
