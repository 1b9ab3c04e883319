#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "repflow/checkpoint.hpp"
#include "repflow/config.hpp"
#include "repflow/data.hpp"
#include "repflow/errors.hpp"
#include "repflow/eval.hpp"
#include "repflow/flow.hpp"
#include "repflow/sampler.hpp"

namespace {

using namespace repflow;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitNumerical = 2;
constexpr int kExitIo = 3;

struct LoadedData {
  int64_t n = 0;
  int64_t d = 0;
  std::vector<double> x;
  std::vector<int> a;
  std::vector<double> y;
};

// Resolves the dataset a command operates on: synthetic kinds generate with
// the derived gen stream unless a path is given; ihdp always loads the file.
LoadedData resolve_dataset(const cli::RunConfig& cfg) {
  const eval::DataSource src = cfg.data_source();
  LoadedData out;
  if (src.kind == eval::DataSource::Kind::ihdp) {
    const data::IhdpDataset ds = data::load_ihdp(src.path);
    out.n = ds.n;
    out.d = data::IhdpDataset::kCovariates;
    out.x = ds.x;
    out.a = ds.a;
    out.y = ds.y;
    return out;
  }
  data::SyntheticDataset ds;
  if (!src.path.empty()) {
    ds = data::read_synthetic_csv(src.path);
  } else if (src.kind == eval::DataSource::Kind::setting_a) {
    ds = data::gen_setting_a(src.n, src.d, Rng(cfg.seed).derive("gen").seed());
  } else {
    ds = data::gen_setting_b(src.n, src.d, src.s, Rng(cfg.seed).derive("gen").seed());
  }
  out.n = ds.n;
  out.d = ds.d;
  out.x = std::move(ds.x);
  out.a = std::move(ds.a);
  out.y = std::move(ds.y);
  return out;
}

int cmd_gen(const cli::RunConfig& cfg, const std::string& out_path) {
  const eval::DataSource src = cfg.data_source();
  if (src.kind == eval::DataSource::Kind::ihdp)
    throw PreconditionError("gen: dataset.kind must be setting_a or setting_b");
  data::SyntheticDataset ds;
  if (src.kind == eval::DataSource::Kind::setting_a)
    ds = data::gen_setting_a(src.n, src.d, Rng(cfg.seed).derive("gen").seed());
  else
    ds = data::gen_setting_b(src.n, src.d, src.s, Rng(cfg.seed).derive("gen").seed());
  data::write_synthetic_csv(ds, out_path);
  int64_t treated = 0;
  for (int a : ds.a) treated += a;
  std::cout << "wrote " << out_path << ": n=" << ds.n << " d=" << ds.d << " treated=" << treated
            << "\n";
  return kExitOk;
}

int cmd_train(const cli::RunConfig& cfg, const std::string& out_path,
              const std::string& variant_name) {
  const LoadedData ld = resolve_dataset(cfg);
  const data::SplitIndices splits =
      data::split(ld.n, 0.7, 0.2, 0.1, Rng(cfg.seed).derive("split").seed());
  const data::Standardizer st = data::fit_standardizer(ld.x, ld.d, ld.y, splits.train);
  const data::Batch train_b = data::standardized_batch(ld.x, ld.d, ld.a, ld.y, splits.train, st);
  const data::Batch val_b = data::standardized_batch(ld.x, ld.d, ld.a, ld.y, splits.val, st);

  const eval::Variant variant = eval::variant_from_name(variant_name);
  flow::TrainSetup setup;
  setup.dims = nets::ModelDims{ld.d, 1, cfg.model.d_z, cfg.model.h, cfg.model.h_t};
  setup.config.sigma = cfg.train.sigma;
  setup.config.lambda = cfg.train.lambda;
  setup.config.batch_size = cfg.train.batch_size;
  setup.config.steps = cfg.train.steps;
  setup.config.lr = cfg.train.lr;
  setup.config.sinkhorn_eps = cfg.train.sinkhorn_eps;
  setup.config.seed = Rng(cfg.seed).derive("train").seed();
  switch (variant) {
    case eval::Variant::full:
      break;
    case eval::Variant::lambda_zero:
      setup.config.lambda = 0.0;
      break;
    case eval::Variant::mmd_balance:
      setup.balance = flow::BalanceKind::mmd;
      break;
    case eval::Variant::no_rep:
      setup.bypass_encoder = true;
      setup.config.lambda = 0.0;
      setup.balance = flow::BalanceKind::none;
      break;
  }
  const flow::TrainState state = flow::train(train_b, &val_b, setup);

  Checkpoint ckpt;
  ckpt.dims = setup.dims;
  ckpt.bypass_encoder = setup.bypass_encoder;
  ckpt.encoder = state.encoder;
  ckpt.velocity = state.velocity;
  ckpt.standardizer = st;
  save_checkpoint(ckpt, out_path);
  flow::write_loss_csv(state.history, out_path + ".loss.csv");
  std::cout << "wrote " << out_path << " after " << state.step << " steps (balance skipped on "
            << state.balance_skipped_steps << " steps)\n";
  return kExitOk;
}

int cmd_sample(const cli::RunConfig& cfg, const std::string& checkpoint_path,
               const std::string& out_path) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  if (ckpt.dims.d_y != 1)
    throw PreconditionError("sample: only scalar outcomes are supported by the CSV schema");
  const LoadedData ld = resolve_dataset(cfg);
  if (ld.d != ckpt.dims.d_x)
    throw PreconditionError("sample: dataset has d=" + std::to_string(ld.d) +
                            " but checkpoint expects d_x=" + std::to_string(ckpt.dims.d_x));
  const uint64_t sample_seed = Rng(cfg.seed).derive("sample").seed();
  const nets::EncoderParams* enc = ckpt.bypass_encoder ? nullptr : &ckpt.encoder;

  std::ofstream out(out_path);
  if (!out) throw IoError("sample: cannot open " + out_path);
  out << "unit_id,a,m,y_hat\n";
  char buf[96];
  std::vector<double> x_row(static_cast<size_t>(ld.d));
  for (int64_t i = 0; i < ld.n; ++i) {
    std::copy_n(ld.x.begin() + i * ld.d, ld.d, x_row.begin());
    const int a = ld.a[static_cast<size_t>(i)];
    const sampler::PosteriorDraws draws = sampler::sample_po(
        enc, ckpt.velocity, x_row, a, cfg.sample.m, cfg.sample.n, sample_seed, ckpt.standardizer);
    for (int64_t m = 0; m < draws.m; ++m) {
      std::snprintf(buf, sizeof(buf), "%lld,%d,%lld,%.17g\n", static_cast<long long>(i), a,
                    static_cast<long long>(m), draws.draws[static_cast<size_t>(m)]);
      out << buf;
    }
  }
  if (!out) throw IoError("sample: write failed for " + out_path);
  std::cout << "wrote " << out_path << ": " << ld.n * cfg.sample.m << " rows\n";
  return kExitOk;
}

int cmd_eval(const cli::RunConfig& cfg, const std::string& out_path,
             const std::string& variant_name, int64_t jobs) {
  const eval::MetricsReport report =
      eval::run_experiment(cfg.data_source(), eval::variant_from_name(variant_name),
                           cfg.experiment_config(), cfg.eval.replications, cfg.seed, jobs);
  eval::write_report_csv(report, out_path);
  std::cout << "wrote " << out_path << ": " << report.reps.size() << " replication(s)\n";
  return kExitOk;
}

int cmd_sweep(const cli::RunConfig& cfg, const std::string& out_path,
              const std::string& variant_name, const std::string& param,
              const std::vector<double>& grid, int64_t jobs) {
  const std::vector<eval::SweepRow> rows =
      eval::sweep(param, grid, cfg.data_source(), eval::variant_from_name(variant_name),
                  cfg.experiment_config(), cfg.eval.replications, cfg.seed, jobs);
  eval::write_sweep_csv(rows, out_path);
  std::cout << "wrote " << out_path << ": " << grid.size() << " grid point(s)\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RepFlow: balanced-representation conditional flow matching for causal effects"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_path;
  std::string checkpoint_path;
  std::string variant;
  std::string param;
  std::string grid_csv;
  std::optional<uint64_t> seed_override;
  int64_t jobs = 1;

  auto add_common = [&](CLI::App* cmd, bool needs_out) {
    cmd->add_option("--config", config_path, "JSON run configuration")->required();
    auto* out = cmd->add_option("--out", out_path, "output path");
    if (needs_out) out->required();
    cmd->add_option("--seed", seed_override, "override the config seed");
    return cmd;
  };

  CLI::App* gen = add_common(app.add_subcommand("gen", "generate a synthetic dataset CSV"), true);
  CLI::App* train = add_common(app.add_subcommand("train", "train and write a checkpoint"), true);
  train->add_option("--variant", variant, "training variant (full|no_rep|lambda_zero|mmd_balance)");
  CLI::App* sample =
      add_common(app.add_subcommand("sample", "draw potential outcomes per unit"), true);
  sample->add_option("--checkpoint", checkpoint_path, "trained checkpoint path")->required();
  CLI::App* eval_cmd = add_common(app.add_subcommand("eval", "run the experiment protocol"), true);
  eval_cmd->add_option("--variant", variant, "ablation variant");
  eval_cmd->add_option("--jobs", jobs, "parallel replications");
  CLI::App* sweep_cmd = add_common(app.add_subcommand("sweep", "hyperparameter sweep"), true);
  sweep_cmd->add_option("--variant", variant, "ablation variant");
  sweep_cmd->add_option("--jobs", jobs, "parallel replications");
  sweep_cmd->add_option("--param", param, "swept parameter (lambda|latent_dim)")->required();
  sweep_cmd->add_option("--grid", grid_csv, "comma-separated grid values")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? kExitOk : kExitValidation;
  }

  try {
    cli::RunConfig cfg = cli::load_config(config_path);
    if (seed_override) cfg.seed = *seed_override;
    const std::string v = variant.empty() ? cfg.eval.variant : variant;

    if (gen->parsed()) return cmd_gen(cfg, out_path);
    if (train->parsed()) return cmd_train(cfg, out_path, v);
    if (sample->parsed()) return cmd_sample(cfg, checkpoint_path, out_path);
    if (eval_cmd->parsed()) return cmd_eval(cfg, out_path, v, jobs);
    if (sweep_cmd->parsed()) {
      std::vector<double> grid;
      std::string cur;
      for (char c : grid_csv + ",") {
        if (c == ',') {
          if (!cur.empty()) grid.push_back(std::stod(cur));
          cur.clear();
        } else {
          cur.push_back(c);
        }
      }
      return cmd_sweep(cfg, out_path, v, param, grid, jobs);
    }
    return kExitValidation;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
}
