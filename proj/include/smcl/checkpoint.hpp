#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "smcl/model.hpp"

namespace smcl {

struct CheckpointMeta {
  std::string architecture;
  ModelOptions options;
  std::string config_fingerprint;
  int epoch = 0;  // completed epochs
  nlohmann::json extra = nlohmann::json::object();
};

using NamedTensors = std::vector<std::pair<std::string, torch::Tensor>>;

struct Checkpoint {
  CheckpointMeta meta;
  NamedTensors tensors;

  const torch::Tensor* find(const std::string& name) const;
};

// Binary layout, little-endian:
//   "SMCLCKPT" | u32 version | u64 header length | JSON header | tensor bytes
// The header carries the meta block and a table of {name, dtype, shape,
// offset, nbytes}. Model tensors are stored as "model/<name>" (parameters
// and buffers); callers may append extra named tensors (optimizer state).
// The file is written to a temporary name and renamed into place.
void save_checkpoint(const std::filesystem::path& path, SmclNet& model, const CheckpointMeta& meta,
                     const NamedTensors& extra_tensors = {});

Checkpoint read_checkpoint(const std::filesystem::path& path);

// Copies "model/*" tensors into an existing model; throws on any
// missing/mismatched entry.
void restore_model(SmclNet& model, const Checkpoint& checkpoint);

SmclNet load_model(const Checkpoint& checkpoint);

}  // namespace smcl
