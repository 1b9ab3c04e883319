#include "repflow/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include "repflow/balance.hpp"
#include "repflow/sampler.hpp"

namespace repflow::eval {

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Dataset rows plus ground-truth effects, shared between synthetic and IHDP.
struct RepData {
  int64_t n = 0;
  int64_t d = 0;
  const std::vector<double>* x = nullptr;
  const std::vector<int>* a = nullptr;
  const std::vector<double>* y = nullptr;
  std::vector<double> tau_true;
  const data::SyntheticDataset* synth = nullptr;  // null for IHDP
};

std::vector<int64_t> merge_sorted(const std::vector<int64_t>& a, const std::vector<int64_t>& b) {
  std::vector<int64_t> out;
  out.reserve(a.size() + b.size());
  std::merge(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

std::vector<int64_t> subsample(const std::vector<int64_t>& rows, int64_t cap, Rng rng) {
  if (cap <= 0 || static_cast<int64_t>(rows.size()) <= cap) return rows;
  std::vector<int64_t> pool = rows;
  for (int64_t i = 0; i < cap; ++i) {
    const int64_t j =
        i + static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(pool.size() - i)));
    std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
  }
  pool.resize(static_cast<size_t>(cap));
  std::sort(pool.begin(), pool.end());
  return pool;
}

// Standardized covariates for the selected rows.
ad::Tensor standardized_x(const RepData& dat, const std::vector<int64_t>& rows,
                          const data::Standardizer& st) {
  const int64_t u = static_cast<int64_t>(rows.size());
  ad::Tensor xs({u, dat.d}, std::vector<double>(static_cast<size_t>(u * dat.d)));
  for (int64_t k = 0; k < u; ++k)
    st.apply_x_row(dat.x->data() + rows[static_cast<size_t>(k)] * dat.d,
                   xs.values.data() + k * dat.d);
  return xs;
}

ad::Tensor conditioning(const nets::EncoderParams* enc, const ad::Tensor& xs) {
  return enc ? nets::encoder_forward(*enc, xs) : xs;
}

struct SamplerHandles {
  const nets::EncoderParams* enc = nullptr;  // null when the encoder is bypassed
  const nets::VelocityParams* vel = nullptr;
  const data::Standardizer* st = nullptr;
  int64_t n_steps = 20;
  int64_t chunk_units = 32;
};

// Replicates each conditioning row `reps` times.
ad::Tensor expand_rows(const ad::Tensor& cond, int64_t reps) {
  const int64_t u = cond.rows(), cd = cond.cols();
  ad::Tensor out({u * reps, cd}, std::vector<double>(static_cast<size_t>(u * reps * cd)));
  for (int64_t i = 0; i < u; ++i)
    for (int64_t r = 0; r < reps; ++r)
      std::copy_n(cond.values.begin() + i * cd, cd, out.values.begin() + (i * reps + r) * cd);
  return out;
}

// CATE per unit via the reverse-time sampler, batched over chunks of units.
// Noise draw m comes from (sample_seed, m) exactly as in sample_po, so each
// unit's estimate matches estimate_cate(..., sample_seed, ...) bitwise.
std::vector<double> batched_cate(const SamplerHandles& h, const RepData& dat,
                                 const std::vector<int64_t>& rows, int64_t m_draws,
                                 uint64_t sample_seed, const data::Standardizer& st) {
  const int64_t total = static_cast<int64_t>(rows.size());
  std::vector<double> tau_hat(static_cast<size_t>(total));
  std::vector<double> noise(static_cast<size_t>(m_draws));
  const Rng base(sample_seed);
  for (int64_t m = 0; m < m_draws; ++m) noise[static_cast<size_t>(m)] = base.derive(static_cast<uint64_t>(m)).normal();

  for (int64_t k0 = 0; k0 < total; k0 += h.chunk_units) {
    const int64_t k1 = std::min(total, k0 + h.chunk_units);
    const std::vector<int64_t> chunk(rows.begin() + k0, rows.begin() + k1);
    const int64_t u = k1 - k0;
    const ad::Tensor cond_units = conditioning(h.enc, standardized_x(dat, chunk, st));
    const ad::Tensor cond = expand_rows(cond_units, m_draws);
    ad::Tensor y1({u * m_draws, 1}, std::vector<double>(static_cast<size_t>(u * m_draws)));
    for (int64_t i = 0; i < u; ++i)
      std::copy_n(noise.begin(), m_draws, y1.values.begin() + i * m_draws);
    const std::vector<int> ones(static_cast<size_t>(u * m_draws), 1);
    const std::vector<int> zeros(static_cast<size_t>(u * m_draws), 0);
    const ad::Tensor out1 = sampler::rk4_integrate_rows(*h.vel, y1, cond, ones, h.n_steps);
    const ad::Tensor out0 = sampler::rk4_integrate_rows(*h.vel, y1, cond, zeros, h.n_steps);
    for (int64_t i = 0; i < u; ++i) {
      double mu1 = 0.0, mu0 = 0.0;
      for (int64_t m = 0; m < m_draws; ++m) {
        mu1 += st.invert_y(out1.values[static_cast<size_t>(i * m_draws + m)]);
        mu0 += st.invert_y(out0.values[static_cast<size_t>(i * m_draws + m)]);
      }
      tau_hat[static_cast<size_t>(k0 + i)] = (mu1 - mu0) / static_cast<double>(m_draws);
    }
  }
  return tau_hat;
}

// One generated and one fresh true-noise potential outcome per unit per arm,
// index-paired; both arms pooled into a single W1 evaluation.
W1Result w1_against_truth(const SamplerHandles& h, const RepData& dat,
                          const std::vector<int64_t>& rows, const data::Standardizer& st,
                          Rng gen_root, Rng true_root) {
  const int64_t total = static_cast<int64_t>(rows.size());
  std::vector<double> y_hat, y_true;
  y_hat.reserve(static_cast<size_t>(2 * total));
  y_true.reserve(static_cast<size_t>(2 * total));

  for (int64_t k0 = 0; k0 < total; k0 += h.chunk_units) {
    const int64_t k1 = std::min(total, k0 + h.chunk_units);
    const std::vector<int64_t> chunk(rows.begin() + k0, rows.begin() + k1);
    const int64_t u = k1 - k0;
    const ad::Tensor cond = conditioning(h.enc, standardized_x(dat, chunk, st));
    ad::Tensor y1_a0({u, 1}, std::vector<double>(static_cast<size_t>(u)));
    ad::Tensor y1_a1({u, 1}, std::vector<double>(static_cast<size_t>(u)));
    for (int64_t i = 0; i < u; ++i) {
      Rng s = gen_root.derive(static_cast<uint64_t>(chunk[static_cast<size_t>(i)]));
      y1_a0.values[static_cast<size_t>(i)] = s.normal();
      y1_a1.values[static_cast<size_t>(i)] = s.normal();
    }
    const std::vector<int> zeros(static_cast<size_t>(u), 0), ones(static_cast<size_t>(u), 1);
    const ad::Tensor out0 = sampler::rk4_integrate_rows(*h.vel, y1_a0, cond, zeros, h.n_steps);
    const ad::Tensor out1 = sampler::rk4_integrate_rows(*h.vel, y1_a1, cond, ones, h.n_steps);
    for (int64_t i = 0; i < u; ++i) {
      const int64_t row = chunk[static_cast<size_t>(i)];
      const double* xr = dat.x->data() + row * dat.d;
      const double f = data::baseline_f(xr, dat.d);
      const double tau = data::effect_tau(xr, dat.d);
      Rng s = true_root.derive(static_cast<uint64_t>(row));
      y_hat.push_back(st.invert_y(out0.values[static_cast<size_t>(i)]));
      y_true.push_back(f + s.normal());
      y_hat.push_back(st.invert_y(out1.values[static_cast<size_t>(i)]));
      y_true.push_back(f + tau + s.normal());
    }
  }
  return empirical_w1(y_hat, y_true, 1);
}

// Sinkhorn distance between the conditioning clouds of the two treatment
// groups, each capped for tractability.
double latent_diagnostic(const SamplerHandles& h, const RepData& dat,
                         const std::vector<int64_t>& rows, const data::Standardizer& st,
                         double eps, int64_t group_cap, Rng rng) {
  std::vector<int64_t> g0, g1;
  for (int64_t i : rows) ((*dat.a)[static_cast<size_t>(i)] ? g1 : g0).push_back(i);
  if (g0.empty() || g1.empty())
    throw PreconditionError("latent diagnostic: a treatment group is empty");
  g0 = subsample(g0, group_cap, rng.derive("g0"));
  g1 = subsample(g1, group_cap, rng.derive("g1"));
  const ad::Tensor z0 = conditioning(h.enc, standardized_x(dat, g0, st));
  const ad::Tensor z1 = conditioning(h.enc, standardized_x(dat, g1, st));
  return balance::sharp_cost_between(z0, z1, eps);
}

struct VariantSetup {
  flow::BalanceKind balance = flow::BalanceKind::wasserstein;
  bool bypass = false;
  double lambda_override = -1.0;  // < 0 keeps the config value
};

VariantSetup variant_setup(Variant v) {
  switch (v) {
    case Variant::full:
      return {flow::BalanceKind::wasserstein, false, -1.0};
    case Variant::lambda_zero:
      return {flow::BalanceKind::wasserstein, false, 0.0};
    case Variant::mmd_balance:
      return {flow::BalanceKind::mmd, false, -1.0};
    case Variant::no_rep:
      return {flow::BalanceKind::none, true, 0.0};
  }
  throw PreconditionError("unknown variant");
}

std::string dataset_name(const DataSource& src) {
  switch (src.kind) {
    case DataSource::Kind::setting_a:
      return "setting_a";
    case DataSource::Kind::setting_b:
      return "setting_b";
    case DataSource::Kind::ihdp:
      return "ihdp";
  }
  return "unknown";
}

ReplicationMetrics run_replication(const DataSource& src, Variant variant,
                                   const ExperimentConfig& cfg, int64_t rep_index,
                                   uint64_t root_seed, const std::vector<std::string>& ihdp_files) {
  const Rng rep_rng = Rng(root_seed).derive("rep").derive(static_cast<uint64_t>(rep_index));

  data::SyntheticDataset synth;
  data::IhdpDataset ihdp;
  RepData dat;
  if (src.kind == DataSource::Kind::ihdp) {
    ihdp = data::load_ihdp(ihdp_files.at(static_cast<size_t>(rep_index)));
    dat.n = ihdp.n;
    dat.d = data::IhdpDataset::kCovariates;
    dat.x = &ihdp.x;
    dat.a = &ihdp.a;
    dat.y = &ihdp.y;
    dat.tau_true.resize(static_cast<size_t>(ihdp.n));
    for (int64_t i = 0; i < ihdp.n; ++i)
      dat.tau_true[static_cast<size_t>(i)] =
          ihdp.mu1[static_cast<size_t>(i)] - ihdp.mu0[static_cast<size_t>(i)];
  } else {
    if (!src.path.empty()) {
      synth = data::read_synthetic_csv(src.path);
    } else if (src.kind == DataSource::Kind::setting_a) {
      synth = data::gen_setting_a(src.n, src.d, rep_rng.derive("gen").seed());
    } else {
      synth = data::gen_setting_b(src.n, src.d, src.s, rep_rng.derive("gen").seed());
    }
    dat.n = synth.n;
    dat.d = synth.d;
    dat.x = &synth.x;
    dat.a = &synth.a;
    dat.y = &synth.y;
    dat.tau_true = synth.tau;
    dat.synth = &synth;
  }

  const data::SplitIndices splits =
      data::split(dat.n, 0.7, 0.2, 0.1, rep_rng.derive("split").seed());
  const data::Standardizer st = data::fit_standardizer(*dat.x, dat.d, *dat.y, splits.train);
  const data::Batch train_b = data::standardized_batch(*dat.x, dat.d, *dat.a, *dat.y, splits.train, st);
  const data::Batch val_b = data::standardized_batch(*dat.x, dat.d, *dat.a, *dat.y, splits.val, st);

  const VariantSetup vs = variant_setup(variant);
  flow::TrainSetup setup;
  setup.dims = nets::ModelDims{dat.d, 1, cfg.d_z, cfg.h, cfg.h_t};
  setup.config = cfg.flow_cfg;
  setup.config.seed = rep_rng.derive("train").seed();
  if (vs.lambda_override >= 0.0) setup.config.lambda = vs.lambda_override;
  setup.balance = vs.balance;
  setup.bypass_encoder = vs.bypass;
  const flow::TrainState state = flow::train(train_b, &val_b, setup);

  SamplerHandles h;
  h.enc = vs.bypass ? nullptr : &state.encoder;
  h.vel = &state.velocity;
  h.st = &st;
  h.n_steps = cfg.sample_n;
  h.chunk_units = cfg.cate_chunk_units;

  const std::vector<int64_t> in_rows_full = merge_sorted(splits.train, splits.val);
  const std::vector<int64_t> in_rows =
      subsample(in_rows_full, cfg.max_units_per_split, rep_rng.derive("subsample_in"));
  const std::vector<int64_t> out_rows =
      subsample(splits.test, cfg.max_units_per_split, rep_rng.derive("subsample_out"));

  const uint64_t sample_seed = rep_rng.derive("sample").seed();
  const std::vector<double> tau_in = batched_cate(h, dat, in_rows, cfg.sample_m, sample_seed, st);
  const std::vector<double> tau_out = batched_cate(h, dat, out_rows, cfg.sample_m, sample_seed, st);

  auto truth_of = [&](const std::vector<int64_t>& rows) {
    std::vector<double> out;
    out.reserve(rows.size());
    for (int64_t i : rows) out.push_back(dat.tau_true[static_cast<size_t>(i)]);
    return out;
  };

  ReplicationMetrics m;
  m.replication = rep_index;
  m.pehe_in = pehe_sqrt(tau_in, truth_of(in_rows));
  m.ate_in = ate_error(tau_in, truth_of(in_rows));
  m.pehe_out = pehe_sqrt(tau_out, truth_of(out_rows));
  m.ate_out = ate_error(tau_out, truth_of(out_rows));

  if (dat.synth) {
    const W1Result win = w1_against_truth(h, dat, in_rows_full, st, rep_rng.derive("w1gen_in"),
                                          rep_rng.derive("w1true_in"));
    const W1Result wout = w1_against_truth(h, dat, splits.test, st, rep_rng.derive("w1gen_out"),
                                           rep_rng.derive("w1true_out"));
    m.w1_in = win.index_paired;
    m.w1_in_sorted = win.sorted_1d;
    m.w1_out = wout.index_paired;
    m.w1_out_sorted = wout.sorted_1d;
  }

  m.latent_distance = latent_diagnostic(h, dat, in_rows_full, st, setup.config.sinkhorn_eps,
                                        cfg.latent_group_cap, rep_rng.derive("latent"));
  return m;
}

std::vector<std::string> resolve_ihdp_files(const DataSource& src, int64_t replications) {
  namespace fs = std::filesystem;
  if (src.path.empty()) throw PreconditionError("ihdp source requires a path");
  std::vector<std::string> files;
  if (fs::is_directory(src.path)) {
    for (const auto& e : fs::directory_iterator(src.path))
      if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    if (static_cast<int64_t>(files.size()) < replications)
      throw PreconditionError("ihdp directory has " + std::to_string(files.size()) +
                              " csv files, need " + std::to_string(replications));
    files.resize(static_cast<size_t>(replications));
  } else {
    // A single replication file reused across replications (splits differ).
    files.assign(static_cast<size_t>(replications), src.path);
  }
  return files;
}

}  // namespace

double pehe_sqrt(const std::vector<double>& tau_hat, const std::vector<double>& tau) {
  if (tau_hat.size() != tau.size() || tau.empty())
    throw PreconditionError("pehe_sqrt: length mismatch " + std::to_string(tau_hat.size()) +
                            " vs " + std::to_string(tau.size()));
  double acc = 0.0;
  for (size_t i = 0; i < tau.size(); ++i) {
    const double d = tau_hat[i] - tau[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(tau.size()));
}

double ate_error(const std::vector<double>& tau_hat, const std::vector<double>& tau) {
  if (tau_hat.size() != tau.size() || tau.empty())
    throw PreconditionError("ate_error: length mismatch " + std::to_string(tau_hat.size()) +
                            " vs " + std::to_string(tau.size()));
  double mh = 0.0, mt = 0.0;
  for (size_t i = 0; i < tau.size(); ++i) {
    mh += tau_hat[i];
    mt += tau[i];
  }
  return std::abs(mh - mt) / static_cast<double>(tau.size());
}

W1Result empirical_w1(const std::vector<double>& y_hat, const std::vector<double>& y_true,
                      int64_t d_y) {
  if (d_y < 1) throw PreconditionError("empirical_w1: d_y must be >= 1");
  if (y_hat.size() != y_true.size() || y_hat.empty() ||
      y_hat.size() % static_cast<size_t>(d_y) != 0)
    throw PreconditionError("empirical_w1: sample count mismatch " + std::to_string(y_hat.size()) +
                            " vs " + std::to_string(y_true.size()));
  const int64_t n = static_cast<int64_t>(y_hat.size()) / d_y;
  W1Result res;
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (int64_t j = 0; j < d_y; ++j) {
      const double diff = y_hat[static_cast<size_t>(i * d_y + j)] - y_true[static_cast<size_t>(i * d_y + j)];
      sq += diff * diff;
    }
    acc += std::sqrt(sq);
  }
  res.index_paired = acc / static_cast<double>(n);
  if (d_y == 1) {
    std::vector<double> a = y_hat, b = y_true;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    res.sorted_1d = s / static_cast<double>(n);
    res.has_sorted = true;
  }
  return res;
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::full:
      return "full";
    case Variant::no_rep:
      return "no_rep";
    case Variant::lambda_zero:
      return "lambda_zero";
    case Variant::mmd_balance:
      return "mmd_balance";
  }
  return "unknown";
}

Variant variant_from_name(const std::string& name) {
  if (name == "full") return Variant::full;
  if (name == "no_rep") return Variant::no_rep;
  if (name == "lambda_zero") return Variant::lambda_zero;
  if (name == "mmd_balance") return Variant::mmd_balance;
  throw PreconditionError("unknown variant '" + name +
                          "' (want full|no_rep|lambda_zero|mmd_balance)");
}

Aggregate aggregate(const std::vector<double>& values) {
  Aggregate agg;
  if (values.empty()) return agg;
  double acc = 0.0;
  for (double v : values) acc += v;
  agg.mean = acc / static_cast<double>(values.size());
  if (values.size() >= 2) {
    double sq = 0.0;
    for (double v : values) {
      const double c = v - agg.mean;
      sq += c * c;
    }
    const double sd = std::sqrt(sq / static_cast<double>(values.size() - 1));
    agg.stderr_ = sd / std::sqrt(static_cast<double>(values.size()));
  }
  return agg;
}

MetricsReport run_experiment(const DataSource& src, Variant variant, const ExperimentConfig& cfg,
                             int64_t replications, uint64_t seed, int64_t jobs) {
  if (replications < 1) throw PreconditionError("run_experiment: replications must be >= 1");
  std::vector<std::string> ihdp_files;
  if (src.kind == DataSource::Kind::ihdp) ihdp_files = resolve_ihdp_files(src, replications);

  MetricsReport report;
  report.variant = variant_name(variant);
  report.dataset = dataset_name(src);
  report.reps.resize(static_cast<size_t>(replications));

  const int64_t workers = std::max<int64_t>(1, std::min(jobs, replications));
  std::atomic<int64_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&]() {
    for (;;) {
      const int64_t r = next.fetch_add(1);
      if (r >= replications) return;
      try {
        report.reps[static_cast<size_t>(r)] =
            run_replication(src, variant, cfg, r, seed, ihdp_files);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int64_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  return report;
}

namespace {

struct MetricColumn {
  std::string name;
  std::vector<double> values;  // one per replication that has it
};

std::vector<MetricColumn> collect_columns(const MetricsReport& report) {
  std::vector<MetricColumn> cols = {
      {"pehe_sqrt_in", {}}, {"ate_err_in", {}}, {"pehe_sqrt_out", {}}, {"ate_err_out", {}},
  };
  for (const auto& r : report.reps) {
    cols[0].values.push_back(r.pehe_in);
    cols[1].values.push_back(r.ate_in);
    cols[2].values.push_back(r.pehe_out);
    cols[3].values.push_back(r.ate_out);
  }
  auto optional_col = [&](const std::string& name, auto getter) {
    MetricColumn c{name, {}};
    for (const auto& r : report.reps)
      if (getter(r)) c.values.push_back(*getter(r));
    if (!c.values.empty()) cols.push_back(std::move(c));
  };
  optional_col("w1_in", [](const ReplicationMetrics& r) { return r.w1_in; });
  optional_col("w1_out", [](const ReplicationMetrics& r) { return r.w1_out; });
  optional_col("w1_in_sorted", [](const ReplicationMetrics& r) { return r.w1_in_sorted; });
  optional_col("w1_out_sorted", [](const ReplicationMetrics& r) { return r.w1_out_sorted; });
  optional_col("latent_group_distance",
               [](const ReplicationMetrics& r) { return r.latent_distance; });
  return cols;
}

}  // namespace

void write_report_csv(const MetricsReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("write_report_csv: cannot open " + path);
  out << "variant,dataset,replication,metric,value\n";
  auto emit = [&](const std::string& rep, const std::string& metric, double value) {
    out << report.variant << ',' << report.dataset << ',' << rep << ',' << metric << ','
        << fmt_double(value) << "\n";
  };
  for (const auto& r : report.reps) {
    const std::string rep = std::to_string(r.replication);
    emit(rep, "pehe_sqrt_in", r.pehe_in);
    emit(rep, "ate_err_in", r.ate_in);
    emit(rep, "pehe_sqrt_out", r.pehe_out);
    emit(rep, "ate_err_out", r.ate_out);
    if (r.w1_in) emit(rep, "w1_in", *r.w1_in);
    if (r.w1_out) emit(rep, "w1_out", *r.w1_out);
    if (r.w1_in_sorted) emit(rep, "w1_in_sorted", *r.w1_in_sorted);
    if (r.w1_out_sorted) emit(rep, "w1_out_sorted", *r.w1_out_sorted);
    if (r.latent_distance) emit(rep, "latent_group_distance", *r.latent_distance);
  }
  for (const auto& col : collect_columns(report)) {
    const Aggregate agg = aggregate(col.values);
    emit("mean", col.name, agg.mean);
    if (agg.stderr_) emit("stderr", col.name, *agg.stderr_);
  }
  if (!out) throw IoError("write_report_csv: write failed for " + path);
}

std::vector<SweepRow> sweep(const std::string& param, const std::vector<double>& grid,
                            const DataSource& src, Variant variant, const ExperimentConfig& cfg,
                            int64_t replications, uint64_t seed, int64_t jobs) {
  if (grid.empty()) throw PreconditionError("sweep: empty grid");
  if (param != "lambda" && param != "latent_dim")
    throw PreconditionError("sweep: unknown parameter '" + param + "' (want lambda|latent_dim)");
  std::vector<SweepRow> rows;
  for (double value : grid) {
    ExperimentConfig point = cfg;
    if (param == "lambda") {
      if (value < 0) throw PreconditionError("sweep: lambda must be >= 0");
      point.flow_cfg.lambda = value;
    } else {
      if (value < 1 || value != std::floor(value))
        throw PreconditionError("sweep: latent_dim must be a positive integer");
      point.d_z = static_cast<int64_t>(value);
    }
    const MetricsReport report = run_experiment(src, variant, point, replications, seed, jobs);
    for (const auto& col : collect_columns(report)) {
      const Aggregate agg = aggregate(col.values);
      rows.push_back({param, value, col.name, agg.mean, agg.stderr_});
    }
  }
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("write_sweep_csv: cannot open " + path);
  out << "param,value,metric,mean,stderr\n";
  for (const auto& r : rows) {
    out << r.param << ',' << fmt_double(r.value) << ',' << r.metric << ',' << fmt_double(r.mean)
        << ',' << (r.stderr_ ? fmt_double(*r.stderr_) : "") << "\n";
  }
  if (!out) throw IoError("write_sweep_csv: write failed for " + path);
}

BoundDiagnostic bound_diagnostic(const flow::TrainState& state, bool bypass_encoder,
                                 const data::SyntheticDataset& ds,
                                 const std::vector<int64_t>& rows, const data::Standardizer& st,
                                 const ExperimentConfig& cfg, uint64_t seed) {
  if (rows.empty()) throw PreconditionError("bound_diagnostic: no rows");
  const Rng root(seed);
  RepData dat;
  dat.n = ds.n;
  dat.d = ds.d;
  dat.x = &ds.x;
  dat.a = &ds.a;
  dat.y = &ds.y;
  dat.synth = &ds;

  SamplerHandles h;
  h.enc = bypass_encoder ? nullptr : &state.encoder;
  h.vel = &state.velocity;
  h.st = &st;
  h.n_steps = cfg.sample_n;
  h.chunk_units = cfg.cate_chunk_units;

  BoundDiagnostic diag;
  const int64_t k_draws = diag.draws_per_unit;

  for (int arm = 0; arm <= 1; ++arm) {
    std::vector<int64_t> group;
    for (int64_t i : rows)
      if (ds.a[static_cast<size_t>(i)] == arm) group.push_back(i);
    if (group.empty())
      throw PreconditionError("bound_diagnostic: factual group " + std::to_string(arm) +
                              " is empty");
    double acc = 0.0;
    const Rng gen_root = root.derive(arm ? "bdgen1" : "bdgen0");
    const Rng true_root = root.derive(arm ? "bdtrue1" : "bdtrue0");
    for (int64_t k0 = 0; k0 < static_cast<int64_t>(group.size()); k0 += h.chunk_units) {
      const int64_t k1 = std::min<int64_t>(static_cast<int64_t>(group.size()), k0 + h.chunk_units);
      const std::vector<int64_t> chunk(group.begin() + k0, group.begin() + k1);
      const int64_t u = k1 - k0;
      const ad::Tensor cond = expand_rows(conditioning(h.enc, standardized_x(dat, chunk, st)), k_draws);
      ad::Tensor y1({u * k_draws, 1}, std::vector<double>(static_cast<size_t>(u * k_draws)));
      for (int64_t i = 0; i < u; ++i) {
        Rng s = gen_root.derive(static_cast<uint64_t>(chunk[static_cast<size_t>(i)]));
        for (int64_t m = 0; m < k_draws; ++m)
          y1.values[static_cast<size_t>(i * k_draws + m)] = s.normal();
      }
      const std::vector<int> flags(static_cast<size_t>(u * k_draws), arm);
      const ad::Tensor out = sampler::rk4_integrate_rows(*h.vel, y1, cond, flags, h.n_steps);
      for (int64_t i = 0; i < u; ++i) {
        const int64_t row = chunk[static_cast<size_t>(i)];
        const double* xr = ds.x.data() + row * ds.d;
        const double mu = data::baseline_f(xr, ds.d) +
                          (arm ? data::effect_tau(xr, ds.d) : 0.0);
        std::vector<double> gen(static_cast<size_t>(k_draws)), truth(static_cast<size_t>(k_draws));
        for (int64_t m = 0; m < k_draws; ++m)
          gen[static_cast<size_t>(m)] = st.invert_y(out.values[static_cast<size_t>(i * k_draws + m)]);
        Rng s = true_root.derive(static_cast<uint64_t>(row));
        for (int64_t m = 0; m < k_draws; ++m) truth[static_cast<size_t>(m)] = mu + s.normal();
        std::sort(gen.begin(), gen.end());
        std::sort(truth.begin(), truth.end());
        double w = 0.0;
        for (int64_t m = 0; m < k_draws; ++m)
          w += std::abs(gen[static_cast<size_t>(m)] - truth[static_cast<size_t>(m)]);
        acc += w / static_cast<double>(k_draws);
      }
    }
    const double eps_f = acc / static_cast<double>(group.size());
    if (arm) {
      diag.eps_f_treated = eps_f;
    } else {
      diag.eps_f_control = eps_f;
    }
  }

  SamplerHandles hl = h;
  diag.latent_distance = latent_diagnostic(hl, dat, rows, st, cfg.flow_cfg.sinkhorn_eps,
                                           cfg.latent_group_cap, root.derive("latent"));
  return diag;
}

}  // namespace repflow::eval
