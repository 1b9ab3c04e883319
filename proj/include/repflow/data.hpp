#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "repflow/rng.hpp"

namespace repflow::data {

// Mini-batch view handed to the training loop; outcomes are standardized.
struct Batch {
  int64_t n = 0;
  int64_t d_x = 0;
  int64_t d_y = 1;
  std::vector<double> x;  // n * d_x
  std::vector<double> y;  // n * d_y
  std::vector<int> a;
};

struct SyntheticDataset {
  int64_t n = 0;
  int64_t d = 0;
  std::vector<double> x;  // n * d
  std::vector<int> a;
  std::vector<double> y;     // factual
  std::vector<double> y0;    // potential outcome under control (with noise)
  std::vector<double> y1;    // potential outcome under treatment (with noise)
  std::vector<double> tau;   // noise-free effect tau(x_i)
  std::vector<double> propensity;  // strictly in (0,1); filled for propensity-based generation
};

struct IhdpDataset {
  static constexpr int64_t kCovariates = 25;
  int64_t n = 0;
  std::vector<double> x;  // n * 25
  std::vector<int> a;
  std::vector<double> y;     // factual
  std::vector<double> y_cf;  // counterfactual outcome
  std::vector<double> mu0;   // noise-free response surfaces
  std::vector<double> mu1;
};

struct SplitIndices {
  std::vector<int64_t> train, val, test;
};

// Train-split column statistics for covariates and outcome. Columns with zero
// variance get std = 1 and are listed in zero_variance_cols.
struct Standardizer {
  std::vector<double> x_mean, x_std;
  double y_mean = 0.0;
  double y_std = 1.0;
  std::vector<int64_t> zero_variance_cols;

  double apply_y(double y) const { return (y - y_mean) / y_std; }
  double invert_y(double y) const { return y * y_std + y_mean; }
  void apply_x_row(const double* in, double* out) const;
};

// Response surfaces shared by both synthetic settings (indices 1..5 of the
// formulas map to columns 0..4).
double baseline_f(const double* x, int64_t d);
double effect_tau(const double* x, int64_t d);
double propensity_logit(const double* x, int64_t d);

// Setting with propensity-based selection: X ~ N(0, I_d), logit of treatment
// probability 0.5 + 0.5 X1 - X2^2 + sin(X3).
SyntheticDataset gen_setting_a(int64_t n, int64_t d, uint64_t seed);

// Covariate-shift setting: balanced treatment, X | A=1 shifted by s in every
// coordinate.
SyntheticDataset gen_setting_b(int64_t n, int64_t d, double s, uint64_t seed);

// CSV with header treatment,y_factual,y_cfactual,mu0,mu1,x1..x25.
IhdpDataset load_ihdp(const std::string& path);

// Random disjoint partition; val/test sizes rounded, train takes the rest.
SplitIndices split(int64_t n, double f_train, double f_val, double f_test, uint64_t seed);

Standardizer fit_standardizer(const std::vector<double>& x, int64_t d,
                              const std::vector<double>& y, const std::vector<int64_t>& rows);

// Standardized batch assembled from the selected rows of a dataset.
Batch standardized_batch(const std::vector<double>& x, int64_t d, const std::vector<int>& a,
                         const std::vector<double>& y, const std::vector<int64_t>& rows,
                         const Standardizer& st);

// Synthetic dataset exchange format: header a,y,y0,y1,tau,x1..xd.
void write_synthetic_csv(const SyntheticDataset& ds, const std::string& path);
SyntheticDataset read_synthetic_csv(const std::string& path);

}  // namespace repflow::data
