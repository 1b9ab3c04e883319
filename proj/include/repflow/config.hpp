#pragma once

#include <cstdint>
#include <string>

#include "repflow/eval.hpp"

namespace repflow::cli {

// Declarative run configuration. JSON with strict key validation: unknown
// keys are rejected and defaults apply only to absent keys.
struct RunConfig {
  int schema_version = 1;
  uint64_t seed = 1;

  struct Dataset {
    std::string kind = "setting_a";  // setting_a | setting_b | ihdp
    int64_t n = 4000;
    int64_t d = 10;
    double s = 0.5;
    std::string path;
  } dataset;

  struct Model {
    int64_t d_z = 32;
    int64_t h = 128;
    int64_t h_t = 64;
  } model;

  struct Train {
    double sigma = 0.01;
    double lambda = 1.0;
    int64_t batch_size = 256;
    int64_t steps = 5000;
    double lr = 1e-3;
    double sinkhorn_eps = 0.1;
  } train;

  struct Sample {
    int64_t m = 100;
    int64_t n = 20;
  } sample;

  struct Eval {
    int64_t replications = 1;
    std::string variant = "full";
    int64_t max_units_per_split = 0;
  } eval;

  eval::DataSource data_source() const;
  eval::ExperimentConfig experiment_config() const;
};

RunConfig load_config(const std::string& path);

}  // namespace repflow::cli
