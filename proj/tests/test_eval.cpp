#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "repflow/balance.hpp"
#include "repflow/eval.hpp"
#include "repflow/rng.hpp"

using namespace repflow;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Small-but-real experiment configuration used by the pipeline tests.
eval::ExperimentConfig tiny_config() {
  eval::ExperimentConfig cfg;
  cfg.d_z = 4;
  cfg.h = 8;
  cfg.h_t = 8;
  cfg.flow_cfg.batch_size = 32;
  cfg.flow_cfg.steps = 40;
  cfg.flow_cfg.lr = 2e-3;
  cfg.sample_m = 4;
  cfg.sample_n = 4;
  cfg.latent_group_cap = 64;
  return cfg;
}

eval::DataSource tiny_source() {
  eval::DataSource src;
  src.kind = eval::DataSource::Kind::setting_a;
  src.n = 160;
  src.d = 5;
  return src;
}

}  // namespace

TEST_CASE("pehe closed forms") {
  CHECK(eval::pehe_sqrt({1.0, 2.0}, {1.0, 2.0}) == 0.0);
  CHECK(eval::pehe_sqrt({2.0, 3.0}, {1.0, 2.0}) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(eval::pehe_sqrt({0.0, 2.0}, {0.0, 0.0}) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
  CHECK_THROWS_AS(eval::pehe_sqrt({1.0}, {1.0, 2.0}), PreconditionError);
}

TEST_CASE("ate error closed forms") {
  CHECK(eval::ate_error({1.0, 2.0}, {1.0, 2.0}) == 0.0);
  CHECK(eval::ate_error({1.5, 1.5}, {1.0, 2.0}) == 0.0);  // symmetric errors cancel
  CHECK(eval::ate_error({1.3, 2.3}, {1.0, 2.0}) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK_THROWS_AS(eval::ate_error({1.0}, {1.0, 2.0}), PreconditionError);
}

TEST_CASE("rms dominates the absolute mean on random inputs") {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> tau_hat(20), tau(20);
    for (auto& v : tau_hat) v = 3.0 * rng.normal();
    for (auto& v : tau) v = 3.0 * rng.normal();
    double mean_diff = 0.0;
    for (size_t i = 0; i < tau.size(); ++i) mean_diff += tau_hat[i] - tau[i];
    mean_diff = std::abs(mean_diff) / static_cast<double>(tau.size());
    CHECK(eval::pehe_sqrt(tau_hat, tau) >= mean_diff - 1e-12);
  }
}

TEST_CASE("empirical W1 closed forms") {
  CHECK(eval::empirical_w1({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}, 1).index_paired == 0.0);

  const double c = 0.75;
  std::vector<double> y = {0.1, -0.4, 2.2};
  std::vector<double> shifted = y;
  for (auto& v : shifted) v += c;
  CHECK(eval::empirical_w1(shifted, y, 1).index_paired == doctest::Approx(c).epsilon(1e-12));

  // Row dimension 2: ||c * 1|| = |c| * sqrt(2) per pair.
  std::vector<double> y2 = {0.0, 0.0, 1.0, 1.0};
  std::vector<double> y2s = {c, c, 1.0 + c, 1.0 + c};
  CHECK(eval::empirical_w1(y2s, y2, 2).index_paired ==
        doctest::Approx(c * std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("sorted coupling never exceeds index pairing in 1-D") {
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    std::vector<double> a(30), b(30);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = 2.0 * rng.normal() + 0.3;
    const eval::W1Result r = eval::empirical_w1(a, b, 1);
    REQUIRE(r.has_sorted);
    CHECK(r.sorted_1d <= r.index_paired + 1e-12);
  }
}

TEST_CASE("sorted coupling is zero iff the sorted lists agree") {
  std::vector<double> a = {3.0, 1.0, 2.0};
  std::vector<double> b = {1.0, 2.0, 3.0};
  CHECK(eval::empirical_w1(a, b, 1).sorted_1d == 0.0);
  b[0] += 1e-6;
  CHECK(eval::empirical_w1(a, b, 1).sorted_1d > 0.0);
}

TEST_CASE("metrics are invariant under simultaneous permutation") {
  Rng rng(9);
  std::vector<double> tau_hat(15), tau(15);
  for (auto& v : tau_hat) v = rng.normal();
  for (auto& v : tau) v = rng.normal();
  std::vector<size_t> perm(15);
  for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::reverse(perm.begin(), perm.end());
  std::vector<double> ph(15), pt(15);
  for (size_t i = 0; i < perm.size(); ++i) {
    ph[i] = tau_hat[perm[i]];
    pt[i] = tau[perm[i]];
  }
  CHECK(eval::pehe_sqrt(tau_hat, tau) == doctest::Approx(eval::pehe_sqrt(ph, pt)).epsilon(1e-14));
  CHECK(eval::ate_error(tau_hat, tau) == doctest::Approx(eval::ate_error(ph, pt)).epsilon(1e-14));
}

TEST_CASE("aggregate drops the standard error for a single replication") {
  CHECK(!eval::aggregate({1.5}).stderr_.has_value());
  const eval::Aggregate a = eval::aggregate({1.0, 2.0, 3.0});
  CHECK(a.mean == doctest::Approx(2.0));
  CHECK(a.stderr_.has_value());
  CHECK(*a.stderr_ == doctest::Approx(1.0 / std::sqrt(3.0)).epsilon(1e-12));
}

TEST_CASE("variant names round trip and reject garbage") {
  for (auto v : {eval::Variant::full, eval::Variant::no_rep, eval::Variant::lambda_zero,
                 eval::Variant::mmd_balance})
    CHECK(eval::variant_from_name(eval::variant_name(v)) == v);
  CHECK_THROWS_AS(eval::variant_from_name("bogus"), PreconditionError);
}

TEST_CASE("tiny experiment produces finite metrics and a parseable report") {
  const eval::MetricsReport report =
      eval::run_experiment(tiny_source(), eval::Variant::full, tiny_config(), 2, 123, 2);
  REQUIRE(report.reps.size() == 2);
  for (const auto& r : report.reps) {
    CHECK(std::isfinite(r.pehe_in));
    CHECK(std::isfinite(r.ate_in));
    CHECK(std::isfinite(r.pehe_out));
    CHECK(std::isfinite(r.ate_out));
    REQUIRE(r.w1_in.has_value());
    CHECK(std::isfinite(*r.w1_in));
    REQUIRE(r.latent_distance.has_value());
    CHECK(*r.latent_distance >= 0.0);
  }
  const std::string path = temp_path("repflow_report_test.csv");
  eval::write_report_csv(report, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "variant,dataset,replication,metric,value");
  int mean_rows = 0, stderr_rows = 0, body_rows = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find(",mean,") != std::string::npos) ++mean_rows;
    if (line.find(",stderr,") != std::string::npos) ++stderr_rows;
    ++body_rows;
  }
  CHECK(mean_rows >= 4);
  CHECK(stderr_rows == mean_rows);  // two replications: stderr present
  CHECK(body_rows > 8);
  std::remove(path.c_str());
}

TEST_CASE("experiments are reproducible byte for byte") {
  const std::string p1 = temp_path("repflow_report_a.csv");
  const std::string p2 = temp_path("repflow_report_b.csv");
  eval::write_report_csv(
      eval::run_experiment(tiny_source(), eval::Variant::lambda_zero, tiny_config(), 2, 7, 2), p1);
  eval::write_report_csv(
      eval::run_experiment(tiny_source(), eval::Variant::lambda_zero, tiny_config(), 2, 7, 1), p2);
  CHECK(slurp(p1) == slurp(p2));  // jobs must not change results
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("all ablation variants run to completion") {
  for (auto v : {eval::Variant::no_rep, eval::Variant::mmd_balance}) {
    const eval::MetricsReport report =
        eval::run_experiment(tiny_source(), v, tiny_config(), 1, 33, 1);
    CHECK(std::isfinite(report.reps[0].pehe_out));
    CHECK(!report.reps[0].w1_in.has_value() == false);  // synthetic: W1 present
  }
}

TEST_CASE("single-replication report omits stderr rows") {
  const eval::MetricsReport report =
      eval::run_experiment(tiny_source(), eval::Variant::full, tiny_config(), 1, 5, 1);
  const std::string path = temp_path("repflow_report_single.csv");
  eval::write_report_csv(report, path);
  const std::string text = slurp(path);
  CHECK(text.find(",stderr,") == std::string::npos);
  CHECK(text.find(",mean,") != std::string::npos);
  std::remove(path.c_str());
}

TEST_CASE("sweep validates parameters and emits grouped rows") {
  CHECK_THROWS_AS(eval::sweep("bogus", {1.0}, tiny_source(), eval::Variant::full, tiny_config(),
                              1, 1, 1),
                  PreconditionError);
  CHECK_THROWS_AS(eval::sweep("lambda", {}, tiny_source(), eval::Variant::full, tiny_config(), 1,
                              1, 1),
                  PreconditionError);

  const auto rows = eval::sweep("lambda", {0.0, 1.0}, tiny_source(), eval::Variant::full,
                                tiny_config(), 1, 11, 1);
  int zero_rows = 0, one_rows = 0;
  for (const auto& r : rows) {
    CHECK(r.param == "lambda");
    if (r.value == 0.0) ++zero_rows;
    if (r.value == 1.0) ++one_rows;
    CHECK(std::isfinite(r.mean));
  }
  CHECK(zero_rows >= 4);
  CHECK(one_rows >= 4);
}

TEST_CASE("latent dimension sweep stays finite across the grid") {
  const auto rows = eval::sweep("latent_dim", {8.0, 16.0, 32.0, 64.0}, tiny_source(),
                                eval::Variant::full, tiny_config(), 1, 23, 1);
  int points = 0;
  for (const auto& r : rows) {
    CHECK(std::isfinite(r.mean));
    if (r.metric == "pehe_sqrt_out") ++points;
  }
  CHECK(points == 4);
}

TEST_CASE("grid of size one matches run_experiment") {
  const auto rows = eval::sweep("latent_dim", {4.0}, tiny_source(), eval::Variant::full,
                                tiny_config(), 1, 19, 1);
  const eval::MetricsReport direct =
      eval::run_experiment(tiny_source(), eval::Variant::full, tiny_config(), 1, 19, 1);
  for (const auto& r : rows) {
    if (r.metric == "pehe_sqrt_out") CHECK(r.mean == direct.reps[0].pehe_out);
    if (r.metric == "ate_err_out") CHECK(r.mean == direct.reps[0].ate_out);
  }
}

TEST_CASE("ihdp-format directory drives the full experiment protocol") {
  const fs::path dir = fs::temp_directory_path() / "repflow_ihdp_exp";
  fs::create_directories(dir);
  Rng rng(3);
  for (int rep = 0; rep < 2; ++rep) {
    std::ofstream out(dir / ("rep" + std::to_string(rep) + ".csv"));
    out << "treatment,y_factual,y_cfactual,mu0,mu1";
    for (int j = 1; j <= 25; ++j) out << ",x" << j;
    out << "\n";
    for (int i = 0; i < 60; ++i) {
      std::vector<double> x(25);
      for (auto& v : x) v = rng.normal();
      const double mu0 = x[0], mu1 = x[0] + 1.0 + 0.5 * x[1];
      const int a = rng.bernoulli(0.4) ? 1 : 0;
      const double y = (a ? mu1 : mu0) + 0.1 * rng.normal();
      const double ycf = (a ? mu0 : mu1) + 0.1 * rng.normal();
      out << a << ',' << y << ',' << ycf << ',' << mu0 << ',' << mu1;
      for (double v : x) out << ',' << v;
      out << "\n";
    }
  }
  eval::DataSource src;
  src.kind = eval::DataSource::Kind::ihdp;
  src.path = dir.string();
  const eval::MetricsReport report =
      eval::run_experiment(src, eval::Variant::full, tiny_config(), 2, 17, 1);
  REQUIRE(report.reps.size() == 2);
  for (const auto& r : report.reps) {
    CHECK(std::isfinite(r.pehe_out));
    CHECK(!r.w1_in.has_value());  // no noise model for semi-synthetic data
  }
  // Asking for more replications than files is an error.
  CHECK_THROWS_AS(eval::run_experiment(src, eval::Variant::full, tiny_config(), 3, 17, 1),
                  PreconditionError);
  fs::remove_all(dir);
}

TEST_CASE("bound diagnostic terms are finite and positive on an untrained model") {
  const data::SyntheticDataset ds = data::gen_setting_a(200, 5, 3);
  const data::SplitIndices s = data::split(ds.n, 0.7, 0.2, 0.1, 3);
  const data::Standardizer st = data::fit_standardizer(ds.x, ds.d, ds.y, s.train);
  eval::ExperimentConfig cfg = tiny_config();
  flow::TrainSetup setup;
  setup.dims = nets::ModelDims{5, 1, cfg.d_z, cfg.h, cfg.h_t};
  setup.config = cfg.flow_cfg;
  setup.config.steps = 0;
  setup.config.seed = 1;
  const flow::TrainState state =
      flow::train(data::standardized_batch(ds.x, ds.d, ds.a, ds.y, s.train, st), nullptr, setup);
  const eval::BoundDiagnostic diag = eval::bound_diagnostic(state, false, ds, s.test, st, cfg, 77);
  CHECK(std::isfinite(diag.eps_f_control));
  CHECK(std::isfinite(diag.eps_f_treated));
  CHECK(diag.eps_f_control > 0.0);
  CHECK(diag.eps_f_treated > 0.0);
  CHECK(diag.latent_distance >= 0.0);
}

TEST_CASE("constant encoder makes the latent bound term vanish") {
  const data::SyntheticDataset ds = data::gen_setting_a(150, 5, 13);
  const data::SplitIndices s = data::split(ds.n, 0.7, 0.2, 0.1, 13);
  const data::Standardizer st = data::fit_standardizer(ds.x, ds.d, ds.y, s.train);
  eval::ExperimentConfig cfg = tiny_config();
  flow::TrainSetup setup;
  setup.dims = nets::ModelDims{5, 1, cfg.d_z, cfg.h, cfg.h_t};
  setup.config = cfg.flow_cfg;
  setup.config.steps = 0;
  setup.config.seed = 2;
  flow::TrainState state =
      flow::train(data::standardized_batch(ds.x, ds.d, ds.a, ds.y, s.train, st), nullptr, setup);
  for (auto& p : state.encoder.named())
    for (auto& v : p.tensor->values) v = 0.0;
  const eval::BoundDiagnostic diag = eval::bound_diagnostic(state, false, ds, s.test, st, cfg, 5);
  CHECK(diag.latent_distance < 1e-9);
}

TEST_CASE("training with balance shrinks the latent bound term from initialization") {
  std::vector<double> init_latent, trained_latent;
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    const data::SyntheticDataset ds = data::gen_setting_a(300, 5, seed * 17);
    const data::SplitIndices s = data::split(ds.n, 0.7, 0.2, 0.1, seed);
    const data::Standardizer st = data::fit_standardizer(ds.x, ds.d, ds.y, s.train);
    const data::Batch tb = data::standardized_batch(ds.x, ds.d, ds.a, ds.y, s.train, st);
    eval::ExperimentConfig cfg = tiny_config();
    flow::TrainSetup setup;
    setup.dims = nets::ModelDims{5, 1, cfg.d_z, cfg.h, cfg.h_t};
    setup.config = cfg.flow_cfg;
    setup.config.lambda = 1.0;
    setup.config.seed = seed;

    flow::TrainSetup init_setup = setup;
    init_setup.config.steps = 0;
    const flow::TrainState init_state = flow::train(tb, nullptr, init_setup);
    setup.config.steps = 250;
    const flow::TrainState trained = flow::train(tb, nullptr, setup);

    init_latent.push_back(
        eval::bound_diagnostic(init_state, false, ds, s.test, st, cfg, 7).latent_distance);
    trained_latent.push_back(
        eval::bound_diagnostic(trained, false, ds, s.test, st, cfg, 7).latent_distance);
  }
  std::sort(init_latent.begin(), init_latent.end());
  std::sort(trained_latent.begin(), trained_latent.end());
  CHECK(trained_latent[2] <= init_latent[2]);  // 5-seed medians
}
