#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "repflow/adam.hpp"
#include "repflow/data.hpp"
#include "repflow/nets.hpp"
#include "repflow/rng.hpp"
#include "repflow/tensor.hpp"

namespace repflow::flow {

enum class BalanceKind { wasserstein, mmd, none };

struct FlowConfig {
  double sigma = 0.01;       // interpolant noise floor, > 0
  double lambda = 1.0;       // balance weight, >= 0
  int64_t batch_size = 256;
  int64_t steps = 5000;
  double lr = 1e-3;
  double sinkhorn_eps = 0.1;
  uint64_t seed = 0;

  void validate() const;
};

struct StepRecord {
  int64_t step;
  double l_flow;
  double l_bal;
  double l_total;
};

struct TrainState {
  nets::EncoderParams encoder;
  nets::VelocityParams velocity;
  ad::AdamState opt_encoder;
  ad::AdamState opt_velocity;
  int64_t step = 0;
  std::vector<StepRecord> history;
  int64_t balance_skipped_steps = 0;  // mini-batches with an empty treatment group
  int64_t balance_evaluations = 0;    // steps on which the balance term was computed
  int64_t stopped_at = 0;             // early-stopping step, 0 if it never fired
};

struct TrainSetup {
  nets::ModelDims dims;
  FlowConfig config;
  BalanceKind balance = BalanceKind::wasserstein;
  bool bypass_encoder = false;  // condition the velocity on standardized x directly
  bool early_stop = false;
  int64_t eval_interval = 100;
  int64_t patience = 20;
};

// psi_t = (1 - t) y0 + (t + sigma (1 - t)) y1, rowwise in t.
ad::Tensor interpolant(const ad::Tensor& y0, const ad::Tensor& y1, const std::vector<double>& t,
                       double sigma);

// u = (1 - sigma) y1 - y0; independent of t.
ad::Tensor target_velocity(const ad::Tensor& y0, const ad::Tensor& y1, double sigma);

// Mean over the batch of rowwise ||v - u||^2; the definitional core shared by
// the loss paths below.
ad::Tensor flow_residual_mean(const ad::Tensor& v, const ad::Tensor& u);

// Mean over the batch of ||v(psi_t, t, phi(x), a) - u_t||^2 with fresh
// t ~ U[0,1] and y1 ~ N(0,I) per row. Differentiates through both networks
// when their parameters are tracked.
ad::Tensor flow_loss(const nets::EncoderParams& enc, const nets::VelocityParams& vel,
                     const data::Batch& batch, double sigma, Rng& rng);

// Same loss with the conditioning matrix already computed (training loop
// reuses the encoded representations shared with the balance term).
ad::Tensor flow_loss_given_cond(const nets::VelocityParams& vel, const ad::Tensor& cond,
                                const data::Batch& batch, double sigma, Rng& rng);

// L_total = L_flow + lambda * L_bal.
ad::Tensor total_loss(const ad::Tensor& l_flow, const ad::Tensor& l_bal, double lambda);

// Joint mini-batch training of the encoder and velocity field. Both gradient
// sets come from one backward pass over L_total (the balance term does not
// touch the velocity parameters, so the velocity gradient equals the L_flow
// gradient exactly) and the two Adam updates apply simultaneously.
TrainState train(const data::Batch& train_split, const data::Batch* val_split,
                 const TrainSetup& setup);

// Per-step metrics stream with header step,L_flow,L_bal,L_total.
void write_loss_csv(const std::vector<StepRecord>& history, const std::string& path);

}  // namespace repflow::flow
