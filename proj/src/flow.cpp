#include "repflow/flow.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "repflow/balance.hpp"

namespace repflow::flow {

using ad::shape_str;

namespace {

ad::Tensor batch_x_tensor(const data::Batch& b) {
  return ad::Tensor({b.n, b.d_x}, b.x);
}

ad::Tensor batch_y_tensor(const data::Batch& b) {
  return ad::Tensor({b.n, b.d_y}, b.y);
}

data::Batch gather_batch(const data::Batch& src, const std::vector<int64_t>& idx) {
  data::Batch out;
  out.n = static_cast<int64_t>(idx.size());
  out.d_x = src.d_x;
  out.d_y = src.d_y;
  out.x.resize(static_cast<size_t>(out.n * out.d_x));
  out.y.resize(static_cast<size_t>(out.n * out.d_y));
  out.a.resize(static_cast<size_t>(out.n));
  for (int64_t k = 0; k < out.n; ++k) {
    const int64_t i = idx[static_cast<size_t>(k)];
    std::copy_n(src.x.begin() + i * src.d_x, src.d_x, out.x.begin() + k * src.d_x);
    std::copy_n(src.y.begin() + i * src.d_y, src.d_y, out.y.begin() + k * src.d_y);
    out.a[static_cast<size_t>(k)] = src.a[static_cast<size_t>(i)];
  }
  return out;
}

// Untracked validation loss used by early stopping; fixed noise per call index
// keeps evaluations comparable and runs deterministic.
double validation_flow_loss(const nets::EncoderParams& enc, const nets::VelocityParams& vel,
                            bool bypass, const data::Batch& val, double sigma, Rng rng) {
  ad::Tensor x = batch_x_tensor(val);
  ad::Tensor cond = bypass ? x : nets::encoder_forward(enc, x);
  ad::Tensor loss = flow_loss_given_cond(vel, cond, val, sigma, rng);
  return loss.scalar_value();
}

}  // namespace

void FlowConfig::validate() const {
  if (!(sigma > 0.0)) throw PreconditionError("FlowConfig: sigma must be > 0");
  if (lambda < 0.0) throw PreconditionError("FlowConfig: lambda must be >= 0");
  if (batch_size < 1) throw PreconditionError("FlowConfig: batch_size must be >= 1");
  if (steps < 0) throw PreconditionError("FlowConfig: steps must be >= 0");
  if (!(lr > 0.0)) throw PreconditionError("FlowConfig: lr must be > 0");
  if (!(sinkhorn_eps > 0.0)) throw PreconditionError("FlowConfig: sinkhorn_eps must be > 0");
}

ad::Tensor interpolant(const ad::Tensor& y0, const ad::Tensor& y1, const std::vector<double>& t,
                       double sigma) {
  if (y0.shape != y1.shape) throw ShapeError("interpolant: shape mismatch " + shape_str(y0.shape) +
                                             " vs " + shape_str(y1.shape));
  if (y0.rank() != 2 || static_cast<int64_t>(t.size()) != y0.rows())
    throw ShapeError("interpolant: t length " + std::to_string(t.size()) + " vs " +
                     shape_str(y0.shape));
  for (double ti : t)
    if (!(ti >= 0.0 && ti <= 1.0))
      throw PreconditionError("interpolant: t=" + std::to_string(ti) + " outside [0,1]");
  const int64_t n = y0.rows(), d = y0.cols();
  ad::Tensor out(y0.shape, std::vector<double>(y0.values.size()));
  for (int64_t i = 0; i < n; ++i) {
    const double ti = t[static_cast<size_t>(i)];
    const double c0 = 1.0 - ti;
    const double c1 = ti + sigma * (1.0 - ti);
    for (int64_t j = 0; j < d; ++j) {
      const size_t idx = static_cast<size_t>(i * d + j);
      out.values[idx] = c0 * y0.values[idx] + c1 * y1.values[idx];
    }
  }
  return out;
}

ad::Tensor target_velocity(const ad::Tensor& y0, const ad::Tensor& y1, double sigma) {
  if (y0.shape != y1.shape)
    throw ShapeError("target_velocity: shape mismatch " + shape_str(y0.shape) + " vs " +
                     shape_str(y1.shape));
  ad::Tensor out(y0.shape, std::vector<double>(y0.values.size()));
  const double c1 = 1.0 - sigma;
  for (size_t i = 0; i < y0.values.size(); ++i)
    out.values[i] = c1 * y1.values[i] - y0.values[i];
  return out;
}

ad::Tensor flow_residual_mean(const ad::Tensor& v, const ad::Tensor& u) {
  if (v.shape != u.shape)
    throw ShapeError("flow_residual_mean: shape mismatch " + shape_str(v.shape) + " vs " +
                     shape_str(u.shape));
  return ad::scale(ad::sum_sq(ad::sub(v, u)), 1.0 / static_cast<double>(v.rows()));
}

ad::Tensor flow_loss_given_cond(const nets::VelocityParams& vel, const ad::Tensor& cond,
                                const data::Batch& batch, double sigma, Rng& rng) {
  if (batch.n < 1) throw PreconditionError("flow_loss: empty batch");
  std::vector<double> t(static_cast<size_t>(batch.n));
  for (auto& v : t) v = rng.uniform();
  ad::Tensor y1({batch.n, batch.d_y}, std::vector<double>(static_cast<size_t>(batch.n * batch.d_y)));
  for (auto& v : y1.values) v = rng.normal();
  ad::Tensor y0 = batch_y_tensor(batch);
  ad::Tensor psi = interpolant(y0, y1, t, sigma);
  ad::Tensor u = target_velocity(y0, y1, sigma);
  ad::Tensor v = nets::velocity_forward(vel, psi, t, cond, batch.a);
  return flow_residual_mean(v, u);
}

ad::Tensor flow_loss(const nets::EncoderParams& enc, const nets::VelocityParams& vel,
                     const data::Batch& batch, double sigma, Rng& rng) {
  ad::Tensor cond = nets::encoder_forward(enc, batch_x_tensor(batch));
  return flow_loss_given_cond(vel, cond, batch, sigma, rng);
}

ad::Tensor total_loss(const ad::Tensor& l_flow, const ad::Tensor& l_bal, double lambda) {
  if (l_flow.size() != 1 || l_bal.size() != 1)
    throw PreconditionError("total_loss: both terms must be scalar");
  return ad::add(l_flow, ad::scale(l_bal, lambda));
}

TrainState train(const data::Batch& train_split, const data::Batch* val_split,
                 const TrainSetup& setup) {
  setup.dims.validate();
  setup.config.validate();
  if (train_split.n < 1) throw PreconditionError("train: empty training split");
  if (train_split.d_x != setup.dims.d_x || train_split.d_y != setup.dims.d_y)
    throw PreconditionError("train: batch dimensions disagree with ModelDims");

  const FlowConfig& cfg = setup.config;
  const int64_t cond_dim = setup.bypass_encoder ? setup.dims.d_x : setup.dims.d_z;

  TrainState state;
  auto [enc, vel] = nets::init_params(setup.dims, cfg.seed, cond_dim);
  state.encoder = std::move(enc);
  state.velocity = std::move(vel);
  state.opt_encoder = ad::AdamState::init(state.encoder.named());
  state.opt_velocity = ad::AdamState::init(state.velocity.named());

  Rng batch_rng = Rng(cfg.seed).derive("batch");
  Rng noise_rng = Rng(cfg.seed).derive("noise");
  Rng val_rng_root = Rng(cfg.seed).derive("val");

  double best_val = std::numeric_limits<double>::infinity();
  int64_t evals_since_best = 0;

  for (int64_t step = 1; step <= cfg.steps; ++step) {
    std::vector<int64_t> idx(static_cast<size_t>(std::min(cfg.batch_size, train_split.n)));
    for (auto& v : idx)
      v = static_cast<int64_t>(batch_rng.uniform_int(static_cast<uint64_t>(train_split.n)));
    const data::Batch mb = gather_batch(train_split, idx);

    ad::Tape tape;
    nets::EncoderParams enc_t;
    if (!setup.bypass_encoder) enc_t = state.encoder.tracked(tape);
    nets::VelocityParams vel_t = state.velocity.tracked(tape);

    const ad::Tensor x = batch_x_tensor(mb);
    const ad::Tensor cond = setup.bypass_encoder ? x : nets::encoder_forward(enc_t, x);

    ad::Tensor l_bal = ad::Tensor::scalar(0.0);
    if (cfg.lambda > 0.0 && setup.balance != BalanceKind::none) {
      std::vector<int64_t> idx0, idx1;
      for (int64_t k = 0; k < mb.n; ++k)
        (mb.a[static_cast<size_t>(k)] ? idx1 : idx0).push_back(k);
      if (idx0.empty() || idx1.empty()) {
        ++state.balance_skipped_steps;  // lambda treated as 0 for this step
      } else {
        ad::Tensor z0 = ad::gather_rows(cond, idx0);
        ad::Tensor z1 = ad::gather_rows(cond, idx1);
        ++state.balance_evaluations;
        if (setup.balance == BalanceKind::wasserstein) {
          l_bal = balance::balance_loss(z0, z1, cfg.sinkhorn_eps);
        } else {
          l_bal = balance::mmd(z0, z1, balance::median_heuristic_bandwidth(z0, z1));
        }
      }
    }

    ad::Tensor l_flow = flow_loss_given_cond(vel_t, cond, mb, cfg.sigma, noise_rng);
    ad::Tensor l_total = total_loss(l_flow, l_bal, cfg.lambda);
    if (!std::isfinite(l_total.scalar_value()))
      throw NumericError("train: non-finite loss at step " + std::to_string(step) +
                         " (L_flow=" + std::to_string(l_flow.scalar_value()) +
                         ", L_bal=" + std::to_string(l_bal.scalar_value()) + ")");

    tape.backward(l_total);

    if (!setup.bypass_encoder) {
      auto tracked_enc = enc_t.named();
      std::vector<ad::Tensor> grads;
      grads.reserve(tracked_enc.size());
      for (auto& p : tracked_enc) grads.push_back(tape.gradient_of(*p.tensor));
      adam_step(state.encoder.named(), grads, state.opt_encoder, cfg.lr);
    }
    {
      auto tracked_vel = vel_t.named();
      std::vector<ad::Tensor> grads;
      grads.reserve(tracked_vel.size());
      for (auto& p : tracked_vel) grads.push_back(tape.gradient_of(*p.tensor));
      adam_step(state.velocity.named(), grads, state.opt_velocity, cfg.lr);
    }

    state.step = step;
    state.history.push_back(
        {step, l_flow.scalar_value(), l_bal.scalar_value(), l_total.scalar_value()});

    if (setup.early_stop && val_split && val_split->n > 0 && step % setup.eval_interval == 0) {
      const int64_t eval_idx = step / setup.eval_interval;
      const double vl =
          validation_flow_loss(state.encoder, state.velocity, setup.bypass_encoder, *val_split,
                               cfg.sigma, val_rng_root.derive(static_cast<uint64_t>(eval_idx)));
      if (vl < best_val) {
        best_val = vl;
        evals_since_best = 0;
      } else if (++evals_since_best >= setup.patience) {
        state.stopped_at = step;
        break;
      }
    }
  }
  return state;
}

void write_loss_csv(const std::vector<StepRecord>& history, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("write_loss_csv: cannot open " + path);
  out << "step,L_flow,L_bal,L_total\n";
  char buf[128];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g\n", static_cast<long long>(r.step),
                  r.l_flow, r.l_bal, r.l_total);
    out << buf;
  }
  if (!out) throw IoError("write_loss_csv: write failed for " + path);
}

}  // namespace repflow::flow
