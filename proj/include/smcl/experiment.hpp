#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "smcl/config.hpp"
#include "smcl/eval.hpp"

namespace smcl {

// Build-time `git rev-parse --short HEAD`, or "unknown".
std::string code_revision();

struct ExperimentRecord {
  std::string name;
  std::string config_fingerprint;
  std::string dataset_fingerprint;
  std::string code_revision;
  std::filesystem::path metrics_path;
  std::filesystem::path checkpoint_path;
  TrainConfig config;
  int epochs_completed = 0;
  std::string status = "complete";  // complete | aborted
  std::string abort_reason;
  std::optional<EvalReport> final_eval;

  nlohmann::json to_json() const;
  static ExperimentRecord from_json(const nlohmann::json& j);

  void save(const std::filesystem::path& path) const;
  static ExperimentRecord load(const std::filesystem::path& path);
};

// Content address of a run: config and dataset fingerprints combined.
std::string run_id(const std::string& config_fingerprint, const std::string& dataset_fingerprint);

struct LossPoint {
  int epoch = 0;
  double loss = 0.0;
  double mce = 0.0;
  double msc = 0.0;
};

// Epoch rows of a metrics log, in file order.
std::vector<LossPoint> read_loss_curve(const std::filesystem::path& metrics);

// Line plot of total/mce/msc against epoch as a standalone SVG document.
std::string loss_plot_svg(const std::vector<LossPoint>& curve, const std::string& title);

}  // namespace smcl
