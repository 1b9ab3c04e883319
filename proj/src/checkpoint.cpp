#include "repflow/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

#include "repflow/errors.hpp"

namespace repflow {

namespace {

using nlohmann::json;

json tensor_to_json(const ad::Tensor& t) {
  return json{{"shape", t.shape}, {"data", t.values}};
}

ad::Tensor tensor_from_json(const json& j, const std::string& name) {
  if (!j.contains("shape") || !j.contains("data"))
    throw ParseError("checkpoint: parameter " + name + " missing shape/data");
  std::vector<int64_t> shape = j.at("shape").get<std::vector<int64_t>>();
  std::vector<double> data = j.at("data").get<std::vector<double>>();
  try {
    return ad::Tensor(std::move(shape), std::move(data));
  } catch (const ShapeError& e) {
    throw ParseError("checkpoint: parameter " + name + ": " + e.what());
  }
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  json params;
  Checkpoint& mut = const_cast<Checkpoint&>(ckpt);
  for (auto& p : mut.encoder.named()) params[p.name] = tensor_to_json(*p.tensor);
  for (auto& p : mut.velocity.named()) params[p.name] = tensor_to_json(*p.tensor);

  const json doc = {
      {"format_version", ckpt.format_version},
      {"dims",
       {{"d_x", ckpt.dims.d_x},
        {"d_y", ckpt.dims.d_y},
        {"d_z", ckpt.dims.d_z},
        {"h", ckpt.dims.h},
        {"h_t", ckpt.dims.h_t}}},
      {"bypass_encoder", ckpt.bypass_encoder},
      {"cond_dim", ckpt.velocity.cond_dim},
      {"params", params},
      {"standardizer",
       {{"x_mean", ckpt.standardizer.x_mean},
        {"x_std", ckpt.standardizer.x_std},
        {"y_mean", ckpt.standardizer.y_mean},
        {"y_std", ckpt.standardizer.y_std}}},
  };
  std::ofstream out(path);
  if (!out) throw IoError("save_checkpoint: cannot open " + path);
  out << doc.dump(2) << "\n";
  if (!out) throw IoError("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_checkpoint: cannot open " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ParseError("load_checkpoint: bad JSON in " + path + ": " + e.what());
  }
  Checkpoint ckpt;
  try {
    ckpt.format_version = doc.at("format_version").get<int>();
    if (ckpt.format_version != 1)
      throw ParseError("load_checkpoint: unsupported format_version " +
                       std::to_string(ckpt.format_version));
    const json& d = doc.at("dims");
    ckpt.dims = nets::ModelDims{d.at("d_x").get<int64_t>(), d.at("d_y").get<int64_t>(),
                                d.at("d_z").get<int64_t>(), d.at("h").get<int64_t>(),
                                d.at("h_t").get<int64_t>()};
    ckpt.bypass_encoder = doc.at("bypass_encoder").get<bool>();
    ckpt.velocity.cond_dim = doc.at("cond_dim").get<int64_t>();
    const json& params = doc.at("params");
    for (auto& p : ckpt.encoder.named()) *p.tensor = tensor_from_json(params.at(p.name), p.name);
    for (auto& p : ckpt.velocity.named()) *p.tensor = tensor_from_json(params.at(p.name), p.name);
    const json& st = doc.at("standardizer");
    ckpt.standardizer.x_mean = st.at("x_mean").get<std::vector<double>>();
    ckpt.standardizer.x_std = st.at("x_std").get<std::vector<double>>();
    ckpt.standardizer.y_mean = st.at("y_mean").get<double>();
    ckpt.standardizer.y_std = st.at("y_std").get<double>();
  } catch (const json::exception& e) {
    throw ParseError("load_checkpoint: missing field in " + path + ": " + e.what());
  }
  return ckpt;
}

}  // namespace repflow
