#include "smcl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "smcl/error.hpp"

namespace fs = std::filesystem;

namespace smcl {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'M', 'C', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "float32";
    case torch::kFloat64: return "float64";
    case torch::kInt64: return "int64";
    case torch::kInt32: return "int32";
    case torch::kUInt8: return "uint8";
    default: throw ContractViolation(std::string("checkpoint cannot store dtype ") + c10::toString(t));
  }
}

torch::ScalarType dtype_from(const std::string& name) {
  if (name == "float32") return torch::kFloat32;
  if (name == "float64") return torch::kFloat64;
  if (name == "int64") return torch::kInt64;
  if (name == "int32") return torch::kInt32;
  if (name == "uint8") return torch::kUInt8;
  throw DataError("checkpoint has unknown dtype '" + name + "'");
}

NamedTensors model_tensors(SmclNet& model) {
  NamedTensors out;
  for (const auto& p : model->named_parameters()) out.emplace_back("model/" + p.key(), p.value());
  for (const auto& b : model->named_buffers()) out.emplace_back("model/" + b.key(), b.value());
  return out;
}

nlohmann::json meta_to_json(const CheckpointMeta& meta) {
  return {{"architecture", meta.architecture},
          {"backbone", to_string(meta.options.backbone)},
          {"num_classes", meta.options.num_classes},
          {"in_channels", meta.options.in_channels},
          {"projection_dim", meta.options.projection_dim},
          {"config_fingerprint", meta.config_fingerprint},
          {"epoch", meta.epoch},
          {"extra", meta.extra}};
}

CheckpointMeta meta_from_json(const nlohmann::json& j) {
  CheckpointMeta meta;
  meta.architecture = j.at("architecture");
  meta.options.backbone = parse_backbone(j.at("backbone").get<std::string>());
  meta.options.num_classes = j.at("num_classes");
  meta.options.in_channels = j.at("in_channels");
  meta.options.projection_dim = j.at("projection_dim");
  meta.config_fingerprint = j.at("config_fingerprint");
  meta.epoch = j.at("epoch");
  meta.extra = j.value("extra", nlohmann::json::object());
  return meta;
}

}  // namespace

const torch::Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const fs::path& path, SmclNet& model, const CheckpointMeta& meta, const NamedTensors& extra) {
  auto tensors = model_tensors(model);
  tensors.insert(tensors.end(), extra.begin(), extra.end());

  nlohmann::json table = nlohmann::json::array();
  std::vector<torch::Tensor> blobs;
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    auto c = t.detach().to(torch::kCPU).contiguous();
    const auto nbytes = static_cast<std::uint64_t>(c.nbytes());
    table.push_back({{"name", name}, {"dtype", dtype_name(c.scalar_type())}, {"shape", c.sizes().vec()},
                     {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
    blobs.push_back(std::move(c));
  }
  const std::string header = nlohmann::json{{"meta", meta_to_json(meta)}, {"tensors", table}}.dump();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + tmp.string());
    out.write(kMagic, sizeof(kMagic));
    out.write(reinterpret_cast<const char*>(&kVersion), sizeof(kVersion));
    const std::uint64_t header_len = header.size();
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& b : blobs) {
      out.write(static_cast<const char*>(b.data_ptr()), static_cast<std::streamsize>(b.nbytes()));
    }
    if (!out) throw DataError("failed writing checkpoint " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint read_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint not found: " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw DataError(path.string() + " is not a checkpoint");
  if (version != kVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  const auto j = nlohmann::json::parse(header);
  const std::streamoff data_start = in.tellg();

  Checkpoint ck;
  ck.meta = meta_from_json(j.at("meta"));
  for (const auto& entry : j.at("tensors")) {
    const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
    auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype_from(entry.at("dtype"))));
    const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
    if (nbytes != static_cast<std::uint64_t>(t.nbytes())) throw DataError("checkpoint tensor size mismatch");
    in.seekg(data_start + static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
    in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
    if (!in) throw DataError("truncated checkpoint " + path.string());
    ck.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
  }
  return ck;
}

void restore_model(SmclNet& model, const Checkpoint& checkpoint) {
  if (checkpoint.meta.architecture != model->architecture_id()) {
    throw DataError("checkpoint architecture '" + checkpoint.meta.architecture + "' does not match model '" +
                    model->architecture_id() + "'");
  }
  torch::NoGradGuard guard;
  for (auto& [name, target] : model_tensors(model)) {
    const auto* src = checkpoint.find(name);
    if (src == nullptr) throw DataError("checkpoint is missing tensor " + name);
    if (src->sizes() != target.sizes() || src->scalar_type() != target.scalar_type()) {
      throw DataError("checkpoint tensor " + name + " has the wrong shape or dtype");
    }
    target.copy_(*src);
  }
}

SmclNet load_model(const Checkpoint& checkpoint) {
  SmclNet model(checkpoint.meta.options);
  restore_model(model, checkpoint);
  return model;
}

}  // namespace smcl
