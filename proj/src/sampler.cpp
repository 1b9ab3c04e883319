#include "repflow/sampler.hpp"

#include <cmath>
#include <string>

namespace repflow::sampler {

namespace {

void check_finite(const std::vector<double>& y, int64_t step) {
  for (double v : y)
    if (!std::isfinite(v))
      throw NumericError("rk4_integrate: non-finite state at step " + std::to_string(step));
}

// Encodes one covariate row into the conditioning vector the velocity net
// expects: the unit-norm representation, or the standardized covariates when
// the encoder is bypassed.
std::vector<double> conditioning_row(const nets::EncoderParams* enc,
                                     const std::vector<double>& x_row,
                                     const data::Standardizer& st) {
  std::vector<double> xs(x_row.size());
  st.apply_x_row(x_row.data(), xs.data());
  if (!enc) return xs;
  ad::Tensor x({1, static_cast<int64_t>(xs.size())}, xs);
  return nets::encoder_forward(*enc, x).values;
}

}  // namespace

std::vector<double> rk4_integrate(const FieldFn& field, std::vector<double> y1, int64_t n_steps) {
  if (n_steps < 1) throw PreconditionError("rk4_integrate: n_steps must be >= 1");
  const double h = -1.0 / static_cast<double>(n_steps);
  const size_t d = y1.size();
  std::vector<double> tmp(d);
  for (int64_t s = 0; s < n_steps; ++s) {
    const double t0 = static_cast<double>(n_steps - s) / static_cast<double>(n_steps);
    const double th = (static_cast<double>(n_steps - s) - 0.5) / static_cast<double>(n_steps);
    const double t1 = static_cast<double>(n_steps - s - 1) / static_cast<double>(n_steps);
    const std::vector<double> k1 = field(y1, t0);
    for (size_t i = 0; i < d; ++i) tmp[i] = y1[i] + 0.5 * h * k1[i];
    const std::vector<double> k2 = field(tmp, th);
    for (size_t i = 0; i < d; ++i) tmp[i] = y1[i] + 0.5 * h * k2[i];
    const std::vector<double> k3 = field(tmp, th);
    for (size_t i = 0; i < d; ++i) tmp[i] = y1[i] + h * k3[i];
    const std::vector<double> k4 = field(tmp, t1);
    for (size_t i = 0; i < d; ++i)
      y1[i] += h / 6.0 * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
    check_finite(y1, s);
  }
  return y1;
}

ad::Tensor rk4_integrate_rows(const nets::VelocityParams& vel, const ad::Tensor& y1,
                              const ad::Tensor& cond, const std::vector<int>& a, int64_t n_steps) {
  if (n_steps < 1) throw PreconditionError("rk4_integrate: n_steps must be >= 1");
  const int64_t m = y1.rows();
  const double h = -1.0 / static_cast<double>(n_steps);
  ad::Tensor y = y1;
  ad::Tensor tmp = y1;
  std::vector<double> t(static_cast<size_t>(m));
  auto eval = [&](const ad::Tensor& state, double ti) {
    std::fill(t.begin(), t.end(), ti);
    return nets::velocity_forward(vel, state, t, cond, a);
  };
  for (int64_t s = 0; s < n_steps; ++s) {
    const double t0 = static_cast<double>(n_steps - s) / static_cast<double>(n_steps);
    const double th = (static_cast<double>(n_steps - s) - 0.5) / static_cast<double>(n_steps);
    const double t1 = static_cast<double>(n_steps - s - 1) / static_cast<double>(n_steps);
    const ad::Tensor k1 = eval(y, t0);
    for (size_t i = 0; i < y.values.size(); ++i) tmp.values[i] = y.values[i] + 0.5 * h * k1.values[i];
    const ad::Tensor k2 = eval(tmp, th);
    for (size_t i = 0; i < y.values.size(); ++i) tmp.values[i] = y.values[i] + 0.5 * h * k2.values[i];
    const ad::Tensor k3 = eval(tmp, th);
    for (size_t i = 0; i < y.values.size(); ++i) tmp.values[i] = y.values[i] + h * k3.values[i];
    const ad::Tensor k4 = eval(tmp, t1);
    for (size_t i = 0; i < y.values.size(); ++i)
      y.values[i] += h / 6.0 * (k1.values[i] + 2.0 * (k2.values[i] + k3.values[i]) + k4.values[i]);
    check_finite(y.values, s);
  }
  return y;
}

ad::Tensor rk4_integrate_batch(const nets::VelocityParams& vel, const ad::Tensor& y1,
                               const std::vector<double>& cond_row, int a, int64_t n_steps) {
  const int64_t m = y1.rows();
  const int64_t cd = static_cast<int64_t>(cond_row.size());
  ad::Tensor cond({m, cd}, std::vector<double>(static_cast<size_t>(m * cd)));
  for (int64_t i = 0; i < m; ++i)
    std::copy_n(cond_row.begin(), cd, cond.values.begin() + i * cd);
  const std::vector<int> flags(static_cast<size_t>(m), a);
  return rk4_integrate_rows(vel, y1, cond, flags, n_steps);
}

std::vector<double> rk4_integrate(const nets::VelocityParams& vel, const std::vector<double>& y1,
                                  const std::vector<double>& z, int a, int64_t n_steps) {
  ad::Tensor seed({1, static_cast<int64_t>(y1.size())}, y1);
  return rk4_integrate_batch(vel, seed, z, a, n_steps).values;
}

PosteriorDraws sample_po(const nets::EncoderParams* enc, const nets::VelocityParams& vel,
                         const std::vector<double>& x_row, int a, int64_t m_draws, int64_t n_steps,
                         uint64_t seed, const data::Standardizer& st) {
  if (m_draws < 1) throw PreconditionError("sample_po: M must be >= 1");
  if (n_steps < 1) throw PreconditionError("sample_po: N must be >= 1");
  if (a != 0 && a != 1) throw PreconditionError("sample_po: a must be 0 or 1");

  const std::vector<double> cond = conditioning_row(enc, x_row, st);
  const int64_t d_y = vel.head0_w.cols();

  PosteriorDraws out;
  out.m = m_draws;
  out.d_y = d_y;
  out.noise_seeds.resize(static_cast<size_t>(m_draws));
  ad::Tensor y1({m_draws, d_y}, std::vector<double>(static_cast<size_t>(m_draws * d_y)));
  const Rng base(seed);
  for (int64_t m = 0; m < m_draws; ++m) {
    Rng draw_rng = base.derive(static_cast<uint64_t>(m));
    out.noise_seeds[static_cast<size_t>(m)] = draw_rng.seed();
    for (int64_t j = 0; j < d_y; ++j) y1.values[static_cast<size_t>(m * d_y + j)] = draw_rng.normal();
  }

  ad::Tensor y0 = rk4_integrate_batch(vel, y1, cond, a, n_steps);
  out.draws.resize(y0.values.size());
  for (size_t i = 0; i < y0.values.size(); ++i) out.draws[i] = st.invert_y(y0.values[i]);
  return out;
}

std::vector<double> estimate_mu(const nets::EncoderParams* enc, const nets::VelocityParams& vel,
                                const std::vector<double>& x_row, int a, int64_t m_draws,
                                int64_t n_steps, uint64_t seed, const data::Standardizer& st) {
  const PosteriorDraws draws = sample_po(enc, vel, x_row, a, m_draws, n_steps, seed, st);
  std::vector<double> mu(static_cast<size_t>(draws.d_y), 0.0);
  for (int64_t m = 0; m < draws.m; ++m)
    for (int64_t j = 0; j < draws.d_y; ++j)
      mu[static_cast<size_t>(j)] += draws.draws[static_cast<size_t>(m * draws.d_y + j)];
  for (auto& v : mu) v /= static_cast<double>(draws.m);
  return mu;
}

std::vector<double> estimate_cate(const nets::EncoderParams* enc, const nets::VelocityParams& vel,
                                  const std::vector<double>& x_row, int64_t m_draws,
                                  int64_t n_steps, uint64_t seed, const data::Standardizer& st) {
  // Common random numbers: both arms reuse the same (seed, m) noise streams.
  const std::vector<double> mu1 = estimate_mu(enc, vel, x_row, 1, m_draws, n_steps, seed, st);
  const std::vector<double> mu0 = estimate_mu(enc, vel, x_row, 0, m_draws, n_steps, seed, st);
  std::vector<double> tau(mu1.size());
  for (size_t j = 0; j < tau.size(); ++j) tau[j] = mu1[j] - mu0[j];
  return tau;
}

}  // namespace repflow::sampler
