#pragma once

#include <string>

#include "repflow/data.hpp"
#include "repflow/nets.hpp"

namespace repflow {

// Trained-model artifact: parameters under their canonical names, the model
// dimensions, and the train-split standardizer needed to map covariates in
// and outcomes back out.
struct Checkpoint {
  int format_version = 1;
  nets::ModelDims dims;
  bool bypass_encoder = false;
  nets::EncoderParams encoder;
  nets::VelocityParams velocity;
  data::Standardizer standardizer;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace repflow
