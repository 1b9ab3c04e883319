#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "repflow/data.hpp"
#include "repflow/flow.hpp"
#include "repflow/nets.hpp"

namespace repflow::eval {

// sqrt(mean((tau_hat - tau)^2)).
double pehe_sqrt(const std::vector<double>& tau_hat, const std::vector<double>& tau);

// |mean(tau_hat) - mean(tau)|.
double ate_error(const std::vector<double>& tau_hat, const std::vector<double>& tau);

struct W1Result {
  double index_paired = 0.0;  // the reported metric: mean ||y_hat_i - y_i||
  double sorted_1d = 0.0;     // rank-paired diagnostic, d_y = 1 only
  bool has_sorted = false;
};

// Index-paired mean Euclidean distance between generated and true samples;
// for scalar outcomes a sorted-coupling variant (a true 1-D Wasserstein-1
// between the empirical laws) is reported alongside.
W1Result empirical_w1(const std::vector<double>& y_hat, const std::vector<double>& y_true,
                      int64_t d_y);

enum class Variant { full, no_rep, lambda_zero, mmd_balance };
std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct DataSource {
  enum class Kind { setting_a, setting_b, ihdp };
  Kind kind = Kind::setting_a;
  int64_t n = 4000;
  int64_t d = 10;
  double s = 0.5;
  std::string path;  // synthetic csv, ihdp file, or directory of ihdp files
};

struct ExperimentConfig {
  int64_t d_z = 32;
  int64_t h = 128;
  int64_t h_t = 64;
  flow::FlowConfig flow_cfg;  // per-replication seeds are derived, cfg.seed is ignored
  int64_t sample_m = 100;
  int64_t sample_n = 20;
  // Cap on units used for CATE metrics per split (0 = all units). Large runs
  // subsample deterministically to bound sampling cost.
  int64_t max_units_per_split = 0;
  // Per-group cap for the latent-distance diagnostic's Sinkhorn instance.
  int64_t latent_group_cap = 512;
  int64_t cate_chunk_units = 32;  // batching granularity for the ODE sampler
};

struct ReplicationMetrics {
  int64_t replication = 0;
  double pehe_in = 0.0, ate_in = 0.0;
  double pehe_out = 0.0, ate_out = 0.0;
  std::optional<double> w1_in, w1_out;
  std::optional<double> w1_in_sorted, w1_out_sorted;
  std::optional<double> latent_distance;
};

struct Aggregate {
  double mean = 0.0;
  std::optional<double> stderr_;  // absent with a single replication
};

Aggregate aggregate(const std::vector<double>& values);

struct MetricsReport {
  std::string variant;
  std::string dataset;
  std::vector<ReplicationMetrics> reps;
};

// Full protocol per replication: generate/load, 70/20/10 split, standardize,
// train the variant, estimate CATE in-sample (train+val) and out-of-sample
// (test), and compute metrics against ground truth. Synthetic sources also get
// the empirical-W1 metrics against fresh true-noise potential outcomes.
// Replications run in parallel across `jobs` threads with derived seeds.
MetricsReport run_experiment(const DataSource& src, Variant variant, const ExperimentConfig& cfg,
                             int64_t replications, uint64_t seed, int64_t jobs = 1);

// Schema: variant,dataset,replication,metric,value with trailing aggregate
// rows (replication = mean / stderr; stderr only for >= 2 replications).
void write_report_csv(const MetricsReport& report, const std::string& path);

struct SweepRow {
  std::string param;
  double value = 0.0;
  std::string metric;
  double mean = 0.0;
  std::optional<double> stderr_;
};

// One run_experiment per grid point with identical seeds across points.
// param is "lambda" or "latent_dim".
std::vector<SweepRow> sweep(const std::string& param, const std::vector<double>& grid,
                            const DataSource& src, Variant variant, const ExperimentConfig& cfg,
                            int64_t replications, uint64_t seed, int64_t jobs = 1);

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path);

// Terms of the distributional error bound: per-group factual distribution
// losses (sorted-coupling 1-D W1 between K generated and K true-noise draws
// per unit, averaged within the factual group) and the latent group distance.
// The bound constant is non-constructive, so no inequality is asserted.
struct BoundDiagnostic {
  double eps_f_control = 0.0;
  double eps_f_treated = 0.0;
  double latent_distance = 0.0;
  int64_t draws_per_unit = 64;
};

BoundDiagnostic bound_diagnostic(const flow::TrainState& state, bool bypass_encoder,
                                 const data::SyntheticDataset& ds,
                                 const std::vector<int64_t>& rows, const data::Standardizer& st,
                                 const ExperimentConfig& cfg, uint64_t seed);

}  // namespace repflow::eval
