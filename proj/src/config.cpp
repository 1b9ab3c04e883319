#include "repflow/config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

#include "repflow/errors.hpp"

namespace repflow::cli {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& allowed,
                    const std::string& section) {
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key))
      throw PreconditionError("config: unknown key '" + (section.empty() ? key : section + "." + key) +
                              "'");
}

template <typename T>
void read_field(const json& j, const std::string& key, const std::string& section, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw PreconditionError("config: bad value for key '" +
                            (section.empty() ? key : section + "." + key) + "'");
  }
}

}  // namespace

eval::DataSource RunConfig::data_source() const {
  eval::DataSource src;
  if (dataset.kind == "setting_a") {
    src.kind = eval::DataSource::Kind::setting_a;
  } else if (dataset.kind == "setting_b") {
    src.kind = eval::DataSource::Kind::setting_b;
  } else if (dataset.kind == "ihdp") {
    src.kind = eval::DataSource::Kind::ihdp;
  } else {
    throw PreconditionError("config: dataset.kind must be setting_a|setting_b|ihdp, got '" +
                            dataset.kind + "'");
  }
  src.n = dataset.n;
  src.d = dataset.d;
  src.s = dataset.s;
  src.path = dataset.path;
  return src;
}

eval::ExperimentConfig RunConfig::experiment_config() const {
  eval::ExperimentConfig cfg;
  cfg.d_z = model.d_z;
  cfg.h = model.h;
  cfg.h_t = model.h_t;
  cfg.flow_cfg.sigma = train.sigma;
  cfg.flow_cfg.lambda = train.lambda;
  cfg.flow_cfg.batch_size = train.batch_size;
  cfg.flow_cfg.steps = train.steps;
  cfg.flow_cfg.lr = train.lr;
  cfg.flow_cfg.sinkhorn_eps = train.sinkhorn_eps;
  cfg.sample_m = sample.m;
  cfg.sample_n = sample.n;
  cfg.max_units_per_split = eval.max_units_per_split;
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_config: cannot open " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ParseError("load_config: bad JSON in " + path + ": " + e.what());
  }
  if (!doc.is_object()) throw PreconditionError("config: top level must be an object");

  RunConfig cfg;
  reject_unknown(doc, {"schema_version", "seed", "dataset", "model", "train", "sample", "eval"}, "");
  read_field(doc, "schema_version", "", cfg.schema_version);
  if (cfg.schema_version != 1)
    throw PreconditionError("config: unsupported schema_version " +
                            std::to_string(cfg.schema_version));
  read_field(doc, "seed", "", cfg.seed);

  if (doc.contains("dataset")) {
    const json& d = doc.at("dataset");
    reject_unknown(d, {"kind", "n", "d", "s", "path"}, "dataset");
    read_field(d, "kind", "dataset", cfg.dataset.kind);
    read_field(d, "n", "dataset", cfg.dataset.n);
    read_field(d, "d", "dataset", cfg.dataset.d);
    read_field(d, "s", "dataset", cfg.dataset.s);
    read_field(d, "path", "dataset", cfg.dataset.path);
  }
  if (doc.contains("model")) {
    const json& m = doc.at("model");
    reject_unknown(m, {"d_z", "h", "h_t"}, "model");
    read_field(m, "d_z", "model", cfg.model.d_z);
    read_field(m, "h", "model", cfg.model.h);
    read_field(m, "h_t", "model", cfg.model.h_t);
  }
  if (doc.contains("train")) {
    const json& t = doc.at("train");
    reject_unknown(t, {"sigma", "lambda", "batch_size", "steps", "lr", "sinkhorn_eps"}, "train");
    read_field(t, "sigma", "train", cfg.train.sigma);
    read_field(t, "lambda", "train", cfg.train.lambda);
    read_field(t, "batch_size", "train", cfg.train.batch_size);
    read_field(t, "steps", "train", cfg.train.steps);
    read_field(t, "lr", "train", cfg.train.lr);
    read_field(t, "sinkhorn_eps", "train", cfg.train.sinkhorn_eps);
  }
  if (doc.contains("sample")) {
    const json& s = doc.at("sample");
    reject_unknown(s, {"M", "N"}, "sample");
    read_field(s, "M", "sample", cfg.sample.m);
    read_field(s, "N", "sample", cfg.sample.n);
  }
  if (doc.contains("eval")) {
    const json& e = doc.at("eval");
    reject_unknown(e, {"replications", "variant", "max_units_per_split"}, "eval");
    read_field(e, "replications", "eval", cfg.eval.replications);
    read_field(e, "variant", "eval", cfg.eval.variant);
    read_field(e, "max_units_per_split", "eval", cfg.eval.max_units_per_split);
  }

  // Cross-field validation before anything executes.
  cfg.data_source();
  eval::variant_from_name(cfg.eval.variant);
  if (cfg.dataset.n < 1) throw PreconditionError("config: dataset.n must be >= 1");
  if (cfg.model.d_z < 1 || cfg.model.h < 1 || cfg.model.h_t < 1)
    throw PreconditionError("config: model dimensions must be >= 1");
  if (cfg.sample.m < 1 || cfg.sample.n < 1)
    throw PreconditionError("config: sample.M and sample.N must be >= 1");
  if (cfg.eval.replications < 1) throw PreconditionError("config: eval.replications must be >= 1");
  eval::ExperimentConfig ec = cfg.experiment_config();
  ec.flow_cfg.validate();
  return cfg;
}

}  // namespace repflow::cli
