#include "repflow/adam.hpp"

#include <algorithm>
#include <cmath>

namespace repflow::ad {

AdamState AdamState::init(const std::vector<NamedParam>& params, double beta1, double beta2,
                          double eps) {
  AdamState st;
  st.beta1 = beta1;
  st.beta2 = beta2;
  st.eps = eps;
  st.m.reserve(params.size());
  st.v.reserve(params.size());
  for (const auto& p : params) {
    st.m.emplace_back(p.tensor->values.size(), 0.0);
    st.v.emplace_back(p.tensor->values.size(), 0.0);
  }
  return st;
}

void adam_step(const std::vector<NamedParam>& params, const std::vector<Tensor>& grads,
               AdamState& state, double lr) {
  if (lr <= 0.0) throw PreconditionError("adam_step: lr must be positive");
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw PreconditionError("adam_step: param/grad/state counts disagree");
  for (size_t p = 0; p < params.size(); ++p) {
    if (grads[p].shape != params[p].tensor->shape)
      throw ShapeError("adam_step: grad shape " + shape_str(grads[p].shape) + " vs param " +
                       params[p].name + " " + shape_str(params[p].tensor->shape));
    if (!grads[p].all_finite())
      throw NumericError("adam_step: non-finite gradient for parameter " + params[p].name);
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (size_t p = 0; p < params.size(); ++p) {
    auto& w = params[p].tensor->values;
    const auto& g = grads[p].values;
    auto& m = state.m[p];
    auto& v = state.v[p];
    for (size_t i = 0; i < w.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

GradCheckReport grad_check(const LossFn& loss_fn, const std::vector<NamedParam>& params,
                           double fd_step) {
  // Analytic pass.
  Tape tape;
  std::vector<Tensor> tracked;
  tracked.reserve(params.size());
  for (const auto& p : params) tracked.push_back(tape.leaf(p.tensor->shape, p.tensor->values));
  Tensor loss = loss_fn(&tape, tracked);
  if (loss.size() != 1) throw PreconditionError("grad_check: closure must return a scalar loss");
  tape.backward(loss);
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const auto& t : tracked) analytic.push_back(tape.gradient_of(t));

  // Numeric pass on untracked copies.
  std::vector<Tensor> plain;
  plain.reserve(params.size());
  for (const auto& p : params) plain.push_back(*p.tensor);
  auto eval = [&]() { return loss_fn(nullptr, plain).scalar_value(); };

  GradCheckReport report;
  for (size_t p = 0; p < params.size(); ++p) {
    double max_diff = 0.0, max_mag = 0.0;
    for (size_t i = 0; i < plain[p].values.size(); ++i) {
      const double saved = plain[p].values[i];
      plain[p].values[i] = saved + fd_step;
      const double up = eval();
      plain[p].values[i] = saved - fd_step;
      const double down = eval();
      plain[p].values[i] = saved;
      const double numeric = (up - down) / (2.0 * fd_step);
      const double a = analytic[p].values[i];
      max_diff = std::max(max_diff, std::abs(a - numeric));
      max_mag = std::max({max_mag, std::abs(a), std::abs(numeric)});
    }
    const double err = (max_mag < 1e-7) ? max_diff : max_diff / max_mag;
    report.entries.push_back({params[p].name, err});
    report.max_rel_err = std::max(report.max_rel_err, err);
  }
  return report;
}

}  // namespace repflow::ad
