#include "repflow/nets.hpp"

#include <cmath>
#include <string>

namespace repflow::nets {

using ad::shape_str;

namespace {

constexpr double kNormEps = 1e-12;
constexpr double kPi = 3.14159265358979323846;

ad::Tensor uniform_fan_in(Rng& rng, int64_t fan_in, int64_t fan_out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> w(static_cast<size_t>(fan_in * fan_out));
  for (auto& v : w) v = (2.0 * rng.uniform() - 1.0) * bound;
  return ad::Tensor({fan_in, fan_out}, std::move(w));
}

ad::Tensor zeros_vec(int64_t n) { return ad::Tensor::zeros({n}); }

ad::Tensor linear(const ad::Tensor& x, const ad::Tensor& w, const ad::Tensor& b) {
  return ad::add_rowvec(ad::matmul(x, w), b);
}

ad::Tensor leaf_copy(ad::Tape& tape, const ad::Tensor& t) { return tape.leaf(t.shape, t.values); }

}  // namespace

void ModelDims::validate() const {
  if (d_x < 1 || d_y < 1 || d_z < 1 || h < 1 || h_t < 1)
    throw PreconditionError("ModelDims: all dimensions must be >= 1");
}

std::vector<ad::NamedParam> EncoderParams::named() {
  return {
      {"encoder.proj.W", &proj_w}, {"encoder.proj.b", &proj_b},
      {"encoder.res1.W", &res1_w}, {"encoder.res1.b", &res1_b},
      {"encoder.res2.W", &res2_w}, {"encoder.res2.b", &res2_b},
      {"encoder.out.W", &out_w},   {"encoder.out.b", &out_b},
  };
}

EncoderParams EncoderParams::tracked(ad::Tape& tape) const {
  EncoderParams t;
  t.proj_w = leaf_copy(tape, proj_w);
  t.proj_b = leaf_copy(tape, proj_b);
  t.res1_w = leaf_copy(tape, res1_w);
  t.res1_b = leaf_copy(tape, res1_b);
  t.res2_w = leaf_copy(tape, res2_w);
  t.res2_b = leaf_copy(tape, res2_b);
  t.out_w = leaf_copy(tape, out_w);
  t.out_b = leaf_copy(tape, out_b);
  return t;
}

std::vector<ad::NamedParam> VelocityParams::named() {
  return {
      {"velocity.yemb.W", &yemb_w},           {"velocity.yemb.b", &yemb_b},
      {"velocity.temb.W", &temb_w},           {"velocity.temb.b", &temb_b},
      {"velocity.film.W", &film_w},           {"velocity.film.b", &film_b},
      {"velocity.res1.gate.W", &res1_gate_w}, {"velocity.res1.gate.b", &res1_gate_b},
      {"velocity.res1.f.W", &res1_f_w},       {"velocity.res1.f.b", &res1_f_b},
      {"velocity.res2.gate.W", &res2_gate_w}, {"velocity.res2.gate.b", &res2_gate_b},
      {"velocity.res2.f.W", &res2_f_w},       {"velocity.res2.f.b", &res2_f_b},
      {"velocity.skip.w1", &skip1},           {"velocity.skip.w2", &skip2},
      {"velocity.head0.W", &head0_w},         {"velocity.head0.b", &head0_b},
      {"velocity.head1.W", &head1_w},         {"velocity.head1.b", &head1_b},
  };
}

VelocityParams VelocityParams::tracked(ad::Tape& tape) const {
  VelocityParams t;
  t.cond_dim = cond_dim;
  t.yemb_w = leaf_copy(tape, yemb_w);
  t.yemb_b = leaf_copy(tape, yemb_b);
  t.temb_w = leaf_copy(tape, temb_w);
  t.temb_b = leaf_copy(tape, temb_b);
  t.film_w = leaf_copy(tape, film_w);
  t.film_b = leaf_copy(tape, film_b);
  t.res1_gate_w = leaf_copy(tape, res1_gate_w);
  t.res1_gate_b = leaf_copy(tape, res1_gate_b);
  t.res1_f_w = leaf_copy(tape, res1_f_w);
  t.res1_f_b = leaf_copy(tape, res1_f_b);
  t.res2_gate_w = leaf_copy(tape, res2_gate_w);
  t.res2_gate_b = leaf_copy(tape, res2_gate_b);
  t.res2_f_w = leaf_copy(tape, res2_f_w);
  t.res2_f_b = leaf_copy(tape, res2_f_b);
  t.skip1 = leaf_copy(tape, skip1);
  t.skip2 = leaf_copy(tape, skip2);
  t.head0_w = leaf_copy(tape, head0_w);
  t.head0_b = leaf_copy(tape, head0_b);
  t.head1_w = leaf_copy(tape, head1_w);
  t.head1_b = leaf_copy(tape, head1_b);
  return t;
}

std::pair<EncoderParams, VelocityParams> init_params(const ModelDims& dims, uint64_t seed,
                                                     int64_t cond_dim) {
  dims.validate();
  if (cond_dim < 0) cond_dim = dims.d_z;
  Rng rng = Rng(seed).derive("init");

  EncoderParams enc;
  enc.proj_w = uniform_fan_in(rng, dims.d_x, dims.h);
  enc.proj_b = zeros_vec(dims.h);
  enc.res1_w = uniform_fan_in(rng, dims.h, dims.h);
  enc.res1_b = zeros_vec(dims.h);
  enc.res2_w = uniform_fan_in(rng, dims.h, dims.h);
  enc.res2_b = zeros_vec(dims.h);
  enc.out_w = uniform_fan_in(rng, dims.h, dims.d_z);
  enc.out_b = zeros_vec(dims.d_z);

  VelocityParams vel;
  vel.cond_dim = cond_dim;
  vel.yemb_w = uniform_fan_in(rng, dims.d_y, dims.h);
  vel.yemb_b = zeros_vec(dims.h);
  vel.temb_w = uniform_fan_in(rng, kTimeFeatures, dims.h_t);
  vel.temb_b = zeros_vec(dims.h_t);
  vel.film_w = uniform_fan_in(rng, cond_dim + dims.h_t, 2 * dims.h);
  vel.film_b = zeros_vec(2 * dims.h);
  vel.res1_gate_w = uniform_fan_in(rng, dims.h, dims.h);
  vel.res1_gate_b = zeros_vec(dims.h);
  vel.res1_f_w = uniform_fan_in(rng, dims.h, dims.h);
  vel.res1_f_b = zeros_vec(dims.h);
  vel.res2_gate_w = uniform_fan_in(rng, dims.h, dims.h);
  vel.res2_gate_b = zeros_vec(dims.h);
  vel.res2_f_w = uniform_fan_in(rng, dims.h, dims.h);
  vel.res2_f_b = zeros_vec(dims.h);
  vel.skip1 = ad::Tensor::scalar(1.0);
  vel.skip2 = ad::Tensor::scalar(1.0);
  vel.head0_w = uniform_fan_in(rng, dims.h, dims.d_y);
  vel.head0_b = zeros_vec(dims.d_y);
  vel.head1_w = uniform_fan_in(rng, dims.h, dims.d_y);
  vel.head1_b = zeros_vec(dims.d_y);
  return {std::move(enc), std::move(vel)};
}

ad::Tensor encoder_forward(const EncoderParams& params, const ad::Tensor& x) {
  ad::Tensor u = linear(x, params.proj_w, params.proj_b);
  u = ad::add(u, ad::relu(linear(u, params.res1_w, params.res1_b)));
  u = ad::add(u, ad::relu(linear(u, params.res2_w, params.res2_b)));
  u = linear(u, params.out_w, params.out_b);
  return ad::l2_normalize_rows(u, kNormEps);
}

ad::Tensor time_features(const std::vector<double>& t) {
  const int64_t n = static_cast<int64_t>(t.size());
  ad::Tensor feat({n, kTimeFeatures}, std::vector<double>(static_cast<size_t>(n * kTimeFeatures)));
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t k = 0; k < kTimeFeatures / 2; ++k) {
      const double w = std::ldexp(kPi, static_cast<int>(k));  // 2^k * pi
      feat.values[static_cast<size_t>(i * kTimeFeatures + 2 * k)] = std::sin(w * t[static_cast<size_t>(i)]);
      feat.values[static_cast<size_t>(i * kTimeFeatures + 2 * k + 1)] = std::cos(w * t[static_cast<size_t>(i)]);
    }
  }
  return feat;
}

ad::Tensor velocity_forward(const VelocityParams& params, const ad::Tensor& psi,
                            const std::vector<double>& t, const ad::Tensor& cond,
                            const std::vector<int>& a) {
  const int64_t n = psi.rows();
  if (static_cast<int64_t>(t.size()) != n || cond.rows() != n ||
      static_cast<int64_t>(a.size()) != n)
    throw ShapeError("velocity_forward: row counts disagree, psi " + shape_str(psi.shape) +
                     " cond " + shape_str(cond.shape));
  if (cond.cols() != params.cond_dim)
    throw ShapeError("velocity_forward: conditioning width " + shape_str(cond.shape) +
                     " vs expected (" + std::to_string(params.cond_dim) + ")");
  for (double ti : t)
    if (!(ti >= 0.0 && ti <= 1.0))
      throw PreconditionError("velocity_forward: t=" + std::to_string(ti) + " outside [0,1]");

  const int64_t h = params.yemb_w.cols();
  ad::Tensor y = linear(psi, params.yemb_w, params.yemb_b);
  ad::Tensor te = linear(time_features(t), params.temb_w, params.temb_b);
  ad::Tensor film = linear(ad::concat_cols(cond, te), params.film_w, params.film_b);
  ad::Tensor gamma = ad::slice_cols(film, 0, h);
  ad::Tensor beta = ad::slice_cols(film, h, 2 * h);
  ad::Tensor x0 = ad::add(ad::mul(gamma, y), beta);

  ad::Tensor b1 = ad::add(
      x0, ad::mul(ad::sigmoid(linear(x0, params.res1_gate_w, params.res1_gate_b)),
                  ad::silu(linear(x0, params.res1_f_w, params.res1_f_b))));
  ad::Tensor b2 = ad::add(
      b1, ad::mul(ad::sigmoid(linear(b1, params.res2_gate_w, params.res2_gate_b)),
                  ad::silu(linear(b1, params.res2_f_w, params.res2_f_b))));
  ad::Tensor trunk = ad::add(ad::scalar_mul(b1, params.skip1), ad::scalar_mul(b2, params.skip2));

  ad::Tensor v0 = linear(trunk, params.head0_w, params.head0_b);
  ad::Tensor v1 = linear(trunk, params.head1_w, params.head1_b);
  return ad::select_rows(v0, v1, a);
}

}  // namespace repflow::nets
