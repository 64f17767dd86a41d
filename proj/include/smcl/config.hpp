#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace smcl {

enum class LrSchedule { step, cosine };

// Resolved training configuration. The JSON form is a flat object whose keys
// are exactly these field names; unknown keys are rejected.
struct TrainConfig {
  int epochs = 200;
  int batch_size = 256;
  double lr_initial = 0.1;
  LrSchedule lr_schedule = LrSchedule::step;
  std::vector<int> lr_milestones = {160, 180};
  double lr_decay_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 2e-4;

  bool use_drw = true;
  int drw_start_epoch = 160;
  double drw_beta = 0.9999;

  int mask_start_epoch = 160;
  double mask_probability = 0.2;
  double alpha = 1.0;
  double mask_area_cap = 0.9;
  std::string mask_mode = "saliency";  // saliency | center | random
  std::string fill = "mean";           // mean | zero

  double tau = 0.1;
  double lambda = 1.0;
  double mu = 0.3;
  bool strict_mixed_ce = true;

  std::uint64_t seed = 0;
  std::string backbone = "resnet32";   // resnet32 | small_cnn
  int projection_dim = 128;
  std::string augment_policy = "cifar";  // none | crop_flip | cifar

  int eval_every = 10;        // 0: evaluate only after the last epoch
  int checkpoint_every = 10;  // 0: checkpoint only after the last epoch
  bool log_steps = true;

  // Throws ConfigError on any broken invariant.
  void validate() const;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig load(const std::filesystem::path& path);

  // Applies "key=value" (value parsed as JSON when possible, else string;
  // lists may be given comma-separated).
  void apply_override(std::string_view assignment);
  // Applies all assignments, then validates once.
  void apply_overrides(const std::vector<std::string>& assignments);

  // Stable hash of the canonical JSON form.
  std::string fingerprint() const;
};

// Named presets. CIFAR recipes: 200 epochs, batch 256, SGD momentum 0.9,
// weight decay 2e-4, lr 0.1 decayed by 0.1 at 160/180, masking p=0.2 from
// epoch 160, lambda=1, mu=0.3.
TrainConfig preset(std::string_view name);
std::vector<std::string> preset_names();

}  // namespace smcl
