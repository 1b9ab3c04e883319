#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "repflow/adam.hpp"
#include "repflow/rng.hpp"
#include "repflow/tensor.hpp"

namespace repflow::nets {

// Number of sinusoidal time features fed to the time-embedding linear layer
// (16 frequencies 2^k * pi, k = 0..15, sin and cos each).
constexpr int64_t kTimeFeatures = 32;

struct ModelDims {
  int64_t d_x = 1;
  int64_t d_y = 1;
  int64_t d_z = 32;
  int64_t h = 128;
  int64_t h_t = 64;

  void validate() const;
};

// Representation encoder: projection, two ReLU residual blocks, final linear,
// then row-wise L2 normalization onto the unit hypersphere.
struct EncoderParams {
  ad::Tensor proj_w, proj_b;  // d_x x h, h
  ad::Tensor res1_w, res1_b;  // h x h, h
  ad::Tensor res2_w, res2_b;
  ad::Tensor out_w, out_b;  // h x d_z, d_z

  std::vector<ad::NamedParam> named();
  // Copy whose tensors are tracked leaves on the tape.
  EncoderParams tracked(ad::Tape& tape) const;
};

// Conditional velocity network: outcome embedding, sinusoidal time embedding,
// FiLM conditioning from [cond ; time-embedding], two gated SiLU residual
// blocks, weighted skip aggregation, and dual treatment-specific output heads.
// `cond_dim` is the width of the conditioning vector (d_z normally; d_x when
// the encoder is bypassed in the no-representation ablation).
struct VelocityParams {
  int64_t cond_dim = 0;
  ad::Tensor yemb_w, yemb_b;  // d_y x h, h
  ad::Tensor temb_w, temb_b;  // kTimeFeatures x h_t, h_t
  ad::Tensor film_w, film_b;  // (cond_dim + h_t) x 2h, 2h
  ad::Tensor res1_gate_w, res1_gate_b, res1_f_w, res1_f_b;  // h x h, h
  ad::Tensor res2_gate_w, res2_gate_b, res2_f_w, res2_f_b;
  ad::Tensor skip1, skip2;  // scalars, init 1
  ad::Tensor head0_w, head0_b, head1_w, head1_b;  // h x d_y, d_y

  std::vector<ad::NamedParam> named();
  VelocityParams tracked(ad::Tape& tape) const;
};

// Fan-in-scaled uniform weights, zero biases, deterministic per seed.
// `cond_dim < 0` means use dims.d_z for the velocity conditioning width.
std::pair<EncoderParams, VelocityParams> init_params(const ModelDims& dims, uint64_t seed,
                                                     int64_t cond_dim = -1);

// Z = normalize(phi(X)); every row has unit L2 norm.
ad::Tensor encoder_forward(const EncoderParams& params, const ad::Tensor& x);

// Sinusoidal features for t in [0,1]; untracked constants.
ad::Tensor time_features(const std::vector<double>& t);

// Velocity v(psi, t, cond, a); row i uses head a[i] on the shared trunk.
ad::Tensor velocity_forward(const VelocityParams& params, const ad::Tensor& psi,
                            const std::vector<double>& t, const ad::Tensor& cond,
                            const std::vector<int>& a);

}  // namespace repflow::nets
