#include "smcl/config.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "smcl/error.hpp"
#include "smcl/rng.hpp"

namespace smcl {

namespace {

std::string schedule_name(LrSchedule s) { return s == LrSchedule::step ? "step" : "cosine"; }

LrSchedule parse_schedule(const std::string& s) {
  if (s == "step") return LrSchedule::step;
  if (s == "cosine") return LrSchedule::cosine;
  throw ConfigError("lr_schedule must be 'step' or 'cosine', got '" + s + "'");
}

template <typename T>
T get_as(const nlohmann::json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type: " + j.dump());
  }
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("invalid config: " + msg); };
  if (epochs < 0) fail("epochs must be >= 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(lr_initial > 0.0)) fail("lr_initial must be > 0");
  if (!(lr_decay_factor > 0.0)) fail("lr_decay_factor must be > 0");
  for (std::size_t i = 0; i < lr_milestones.size(); ++i) {
    if (lr_milestones[i] < 0 || (i > 0 && lr_milestones[i] <= lr_milestones[i - 1])) {
      fail("lr_milestones must be non-negative and strictly increasing");
    }
  }
  if (momentum < 0.0 || momentum >= 1.0) fail("momentum must lie in [0, 1)");
  if (weight_decay < 0.0) fail("weight_decay must be >= 0");
  if (drw_start_epoch < 0 || drw_start_epoch > epochs) fail("drw_start_epoch must lie in [0, epochs]");
  if (!(drw_beta >= 0.0 && drw_beta < 1.0)) fail("drw_beta must lie in [0, 1)");
  if (mask_start_epoch < 0 || mask_start_epoch > epochs) fail("mask_start_epoch must lie in [0, epochs]");
  if (!(mask_probability >= 0.0 && mask_probability <= 1.0)) fail("mask_probability must lie in [0, 1]");
  if (!(alpha > 0.0)) fail("alpha must be > 0");
  if (!(mask_area_cap > 0.0 && mask_area_cap <= 0.9)) fail("mask_area_cap must lie in (0, 0.9]");
  if (mask_mode != "saliency" && mask_mode != "center" && mask_mode != "random") {
    fail("mask_mode must be saliency|center|random");
  }
  if (fill != "mean" && fill != "zero") fail("fill must be mean|zero");
  if (!(tau > 0.0)) fail("tau must be > 0");
  if (!(lambda >= 0.0) || !(mu >= 0.0)) fail("lambda and mu must be >= 0");
  if (backbone != "resnet32" && backbone != "small_cnn") fail("backbone must be resnet32|small_cnn");
  if (projection_dim < 1) fail("projection_dim must be >= 1");
  if (augment_policy != "none" && augment_policy != "crop_flip" && augment_policy != "cifar") {
    fail("augment_policy must be none|crop_flip|cifar");
  }
  if (eval_every < 0 || checkpoint_every < 0) fail("eval_every and checkpoint_every must be >= 0");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"lr_initial", lr_initial},
          {"lr_schedule", schedule_name(lr_schedule)},
          {"lr_milestones", lr_milestones},
          {"lr_decay_factor", lr_decay_factor},
          {"momentum", momentum},
          {"weight_decay", weight_decay},
          {"use_drw", use_drw},
          {"drw_start_epoch", drw_start_epoch},
          {"drw_beta", drw_beta},
          {"mask_start_epoch", mask_start_epoch},
          {"mask_probability", mask_probability},
          {"alpha", alpha},
          {"mask_area_cap", mask_area_cap},
          {"mask_mode", mask_mode},
          {"fill", fill},
          {"tau", tau},
          {"lambda", lambda},
          {"mu", mu},
          {"strict_mixed_ce", strict_mixed_ce},
          {"seed", seed},
          {"backbone", backbone},
          {"projection_dim", projection_dim},
          {"augment_policy", augment_policy},
          {"eval_every", eval_every},
          {"checkpoint_every", checkpoint_every},
          {"log_steps", log_steps}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a flat JSON object");
  TrainConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "epochs") c.epochs = get_as<int>(v, key);
    else if (key == "batch_size") c.batch_size = get_as<int>(v, key);
    else if (key == "lr_initial") c.lr_initial = get_as<double>(v, key);
    else if (key == "lr_schedule") c.lr_schedule = parse_schedule(get_as<std::string>(v, key));
    else if (key == "lr_milestones") c.lr_milestones = get_as<std::vector<int>>(v, key);
    else if (key == "lr_decay_factor") c.lr_decay_factor = get_as<double>(v, key);
    else if (key == "momentum") c.momentum = get_as<double>(v, key);
    else if (key == "weight_decay") c.weight_decay = get_as<double>(v, key);
    else if (key == "use_drw") c.use_drw = get_as<bool>(v, key);
    else if (key == "drw_start_epoch") c.drw_start_epoch = get_as<int>(v, key);
    else if (key == "drw_beta") c.drw_beta = get_as<double>(v, key);
    else if (key == "mask_start_epoch") c.mask_start_epoch = get_as<int>(v, key);
    else if (key == "mask_probability") c.mask_probability = get_as<double>(v, key);
    else if (key == "alpha") c.alpha = get_as<double>(v, key);
    else if (key == "mask_area_cap") c.mask_area_cap = get_as<double>(v, key);
    else if (key == "mask_mode") c.mask_mode = get_as<std::string>(v, key);
    else if (key == "fill") c.fill = get_as<std::string>(v, key);
    else if (key == "tau") c.tau = get_as<double>(v, key);
    else if (key == "lambda") c.lambda = get_as<double>(v, key);
    else if (key == "mu") c.mu = get_as<double>(v, key);
    else if (key == "strict_mixed_ce") c.strict_mixed_ce = get_as<bool>(v, key);
    else if (key == "seed") c.seed = get_as<std::uint64_t>(v, key);
    else if (key == "backbone") c.backbone = get_as<std::string>(v, key);
    else if (key == "projection_dim") c.projection_dim = get_as<int>(v, key);
    else if (key == "augment_policy") c.augment_policy = get_as<std::string>(v, key);
    else if (key == "eval_every") c.eval_every = get_as<int>(v, key);
    else if (key == "checkpoint_every") c.checkpoint_every = get_as<int>(v, key);
    else if (key == "log_steps") c.log_steps = get_as<bool>(v, key);
    else throw ConfigError("unknown config key '" + key + "'");
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

void TrainConfig::apply_override(std::string_view assignment) {
  const std::vector<std::string> one = {std::string(assignment)};
  apply_overrides(one);
}

void TrainConfig::apply_overrides(const std::vector<std::string>& assignments) {
  auto j = to_json();
  for (const auto& assignment : assignments) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("override must look like key=value, got '" + assignment + "'");
    }
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    nlohmann::json value;
    if (key == "lr_milestones") {
      value = nlohmann::json::array();
      std::stringstream ss(raw);
      for (std::string item; std::getline(ss, item, ',');) {
        if (item.empty()) continue;
        try {
          value.push_back(std::stoi(item));
        } catch (const std::exception&) {
          throw ConfigError("lr_milestones must be integers, got '" + item + "'");
        }
      }
    } else {
      try {
        value = nlohmann::json::parse(raw);
      } catch (const nlohmann::json::parse_error&) {
        value = raw;
      }
    }
    if (!j.contains(key)) throw ConfigError("unknown config key '" + key + "'");
    j[key] = value;
  }
  *this = from_json(j);
}

std::string TrainConfig::fingerprint() const { return hex64(fnv1a64(to_json().dump())); }

namespace {

TrainConfig cifar_recipe() {
  TrainConfig c;  // defaults are the CIFAR DRW+SMCL recipe
  return c;
}

// 60-epoch small-backbone schedule with decay/DRW/mask start scaled from
// 160/180 of 200 to 48/54 of 60.
TrainConfig desk_recipe() {
  TrainConfig c;
  c.epochs = 60;
  c.batch_size = 128;
  c.lr_milestones = {48, 54};
  c.drw_start_epoch = 48;
  c.mask_start_epoch = 48;
  c.backbone = "small_cnn";
  c.eval_every = 5;
  c.checkpoint_every = 5;
  c.log_steps = false;
  return c;
}

void make_erm(TrainConfig& c) {
  c.mask_probability = 0.0;
  c.mu = 0.0;
  c.use_drw = false;
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"cifar100lt-smcl-drw", "cifar100lt-smcl",    "cifar100lt-smcl-drw-ce", "cifar100lt-erm",
          "cifar100lt-drw",      "cifar10lt-smcl-drw", "cifar10lt-smcl",         "cifar10lt-erm",
          "cifar10lt-drw",       "desk-cifar10lt-smcl-drw", "desk-cifar10lt-drw-ce", "desk-cifar10lt-erm",
          "smoke"};
}

TrainConfig preset(std::string_view name) {
  TrainConfig c;
  const std::string n(name);
  if (n == "cifar100lt-smcl-drw" || n == "cifar10lt-smcl-drw") {
    c = cifar_recipe();
  } else if (n == "cifar100lt-smcl" || n == "cifar10lt-smcl") {
    c = cifar_recipe();
    c.use_drw = false;
  } else if (n == "cifar100lt-smcl-drw-ce") {
    c = cifar_recipe();
    c.mu = 0.0;
  } else if (n == "cifar100lt-erm" || n == "cifar10lt-erm") {
    c = cifar_recipe();
    make_erm(c);
  } else if (n == "cifar100lt-drw" || n == "cifar10lt-drw") {
    c = cifar_recipe();
    make_erm(c);
    c.use_drw = true;
  } else if (n == "desk-cifar10lt-smcl-drw") {
    c = desk_recipe();
  } else if (n == "desk-cifar10lt-drw-ce") {
    c = desk_recipe();
    c.mu = 0.0;
  } else if (n == "desk-cifar10lt-erm") {
    c = desk_recipe();
    make_erm(c);
  } else if (n == "smoke") {
    c = desk_recipe();
    c.epochs = 4;
    c.batch_size = 32;
    c.lr_milestones = {3};
    c.drw_start_epoch = 2;
    c.mask_start_epoch = 2;
    c.mask_probability = 0.5;
    c.augment_policy = "crop_flip";
    c.eval_every = 2;
    c.checkpoint_every = 2;
  } else {
    throw ConfigError("unknown preset '" + n + "'");
  }
  c.validate();
  return c;
}

}  // namespace smcl
