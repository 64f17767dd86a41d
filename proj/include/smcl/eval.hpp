#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "smcl/augment.hpp"
#include "smcl/data.hpp"
#include "smcl/model.hpp"

namespace smcl {

enum class ShotGroup { many = 0, med = 1, few = 2 };

// Groups by training-set class size: many n > 100, med 20 <= n <= 100,
// few n < 20.
struct GroupThresholds {
  std::int64_t many_above = 100;
  std::int64_t few_below = 20;

  ShotGroup classify(std::int64_t train_count) const;
};

// All accuracies are percentages. A group with no member classes is absent
// (nullopt), never zero; so is a class with no test samples.
struct EvalReport {
  double overall_acc = 0.0;
  std::optional<double> many_acc;
  std::optional<double> med_acc;
  std::optional<double> few_acc;
  std::vector<std::optional<double>> per_class_acc;
  std::vector<std::vector<std::int64_t>> confusion;  // [true][predicted]
  std::vector<ShotGroup> class_group;
  GroupThresholds group_def;

  std::optional<double> group_acc(ShotGroup g) const;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

EvalReport report_from_confusion(std::vector<std::vector<std::int64_t>> confusion, const ClassHistogram& train_hist,
                                 const GroupThresholds& groups = {});

EvalReport evaluate_predictions(std::span<const std::int64_t> truth, std::span<const std::int64_t> predicted,
                                const ClassHistogram& train_hist, const GroupThresholds& groups = {});

// Evaluation-mode accuracy of `model` on a uint8 test set normalized with
// `stats`; groups follow the TRAINING histogram.
EvalReport evaluate(SmclNet& model, const LabeledImages& test, const ChannelStats& stats,
                    const ClassHistogram& train_hist, const GroupThresholds& groups = {});

struct ReportRow {
  std::string name;
  EvalReport report;
};

// "Method | All | Many | Med | Few" table; absent groups print "-".
std::string format_table(const std::vector<ReportRow>& rows);

// Gradient-weighted class activation map from the last conv block for
// `class_index`, on one normalized [C, H, W] image. Bilinearly upsampled to
// H x W and min-max scaled to [0, 1]; a flat map is returned as all zeros.
torch::Tensor cam(SmclNet& model, const torch::Tensor& image, std::int64_t class_index);

// Writes a JET heat-map blended over the uint8 [C, H, W] image, scaled up by
// `upscale` for viewing.
void save_cam_overlay(const torch::Tensor& image_u8, const torch::Tensor& heat, const std::filesystem::path& path,
                      int upscale = 4);

}  // namespace smcl
