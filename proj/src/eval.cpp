#include "smcl/eval.hpp"

#include <cstdio>
#include <numeric>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "smcl/error.hpp"

namespace smcl {

ShotGroup GroupThresholds::classify(std::int64_t train_count) const {
  if (train_count > many_above) return ShotGroup::many;
  if (train_count < few_below) return ShotGroup::few;
  return ShotGroup::med;
}

std::optional<double> EvalReport::group_acc(ShotGroup g) const {
  switch (g) {
    case ShotGroup::many: return many_acc;
    case ShotGroup::med: return med_acc;
    case ShotGroup::few: return few_acc;
  }
  return std::nullopt;
}

namespace {

const char* group_name(ShotGroup g) {
  switch (g) {
    case ShotGroup::many: return "many";
    case ShotGroup::med: return "med";
    case ShotGroup::few: return "few";
  }
  return "many";
}

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::optional<double> opt_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

nlohmann::json EvalReport::to_json() const {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& a : per_class_acc) per_class.push_back(opt_json(a));
  nlohmann::json groups = nlohmann::json::array();
  for (auto g : class_group) groups.push_back(group_name(g));
  return {{"overall_acc", overall_acc},
          {"group_acc", {{"many", opt_json(many_acc)}, {"med", opt_json(med_acc)}, {"few", opt_json(few_acc)}}},
          {"per_class_acc", per_class},
          {"confusion", confusion},
          {"class_group", groups},
          {"group_def", {{"many_above", group_def.many_above}, {"few_below", group_def.few_below}}}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  r.overall_acc = j.at("overall_acc");
  r.many_acc = opt_from(j.at("group_acc").at("many"));
  r.med_acc = opt_from(j.at("group_acc").at("med"));
  r.few_acc = opt_from(j.at("group_acc").at("few"));
  for (const auto& a : j.at("per_class_acc")) r.per_class_acc.push_back(opt_from(a));
  r.confusion = j.at("confusion").get<std::vector<std::vector<std::int64_t>>>();
  for (const auto& g : j.at("class_group")) {
    const auto s = g.get<std::string>();
    r.class_group.push_back(s == "many" ? ShotGroup::many : s == "med" ? ShotGroup::med : ShotGroup::few);
  }
  r.group_def.many_above = j.at("group_def").at("many_above");
  r.group_def.few_below = j.at("group_def").at("few_below");
  return r;
}

EvalReport report_from_confusion(std::vector<std::vector<std::int64_t>> confusion, const ClassHistogram& train_hist,
                                 const GroupThresholds& groups) {
  const auto K = static_cast<std::size_t>(train_hist.num_classes());
  if (confusion.size() != K) throw ContractViolation("confusion matrix and training histogram disagree on K");
  EvalReport r;
  r.group_def = groups;
  std::int64_t correct = 0;
  std::int64_t total = 0;
  double group_sum[3] = {0, 0, 0};
  int group_n[3] = {0, 0, 0};
  for (std::size_t k = 0; k < K; ++k) {
    if (confusion[k].size() != K) throw ContractViolation("confusion matrix must be K x K");
    const auto row_total = std::accumulate(confusion[k].begin(), confusion[k].end(), std::int64_t{0});
    correct += confusion[k][k];
    total += row_total;
    const auto g = groups.classify(train_hist.count(static_cast<int>(k)));
    r.class_group.push_back(g);
    if (row_total == 0) {
      r.per_class_acc.emplace_back(std::nullopt);
      continue;
    }
    const double acc = 100.0 * static_cast<double>(confusion[k][k]) / static_cast<double>(row_total);
    r.per_class_acc.emplace_back(acc);
    group_sum[static_cast<int>(g)] += acc;
    ++group_n[static_cast<int>(g)];
  }
  r.overall_acc = total > 0 ? 100.0 * static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  auto mean_of = [&](ShotGroup g) -> std::optional<double> {
    const int i = static_cast<int>(g);
    if (group_n[i] == 0) return std::nullopt;
    return group_sum[i] / group_n[i];
  };
  r.many_acc = mean_of(ShotGroup::many);
  r.med_acc = mean_of(ShotGroup::med);
  r.few_acc = mean_of(ShotGroup::few);
  r.confusion = std::move(confusion);
  return r;
}

EvalReport evaluate_predictions(std::span<const std::int64_t> truth, std::span<const std::int64_t> predicted,
                                const ClassHistogram& train_hist, const GroupThresholds& groups) {
  if (truth.size() != predicted.size()) throw ContractViolation("one prediction per test sample");
  const auto K = static_cast<std::size_t>(train_hist.num_classes());
  std::vector<std::vector<std::int64_t>> confusion(K, std::vector<std::int64_t>(K, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ++confusion.at(static_cast<std::size_t>(truth[i])).at(static_cast<std::size_t>(predicted[i]));
  }
  return report_from_confusion(std::move(confusion), train_hist, groups);
}

EvalReport evaluate(SmclNet& model, const LabeledImages& test, const ChannelStats& stats,
                    const ClassHistogram& train_hist, const GroupThresholds& groups) {
  if (test.num_classes != train_hist.num_classes()) {
    throw ContractViolation("test set and training histogram disagree on the number of classes");
  }
  std::vector<std::int64_t> predicted;
  predicted.reserve(test.labels.size());
  constexpr std::int64_t chunk = 1000;
  for (std::int64_t start = 0; start < test.size(); start += chunk) {
    const auto n = std::min(chunk, test.size() - start);
    auto images = stats.normalize(to_float_image(test.images.narrow(0, start, n)));
    auto pred = predict(model, images);
    predicted.insert(predicted.end(), pred.labels.begin(), pred.labels.end());
  }
  return evaluate_predictions(test.labels, predicted, train_hist, groups);
}

std::string format_table(const std::vector<ReportRow>& rows) {
  std::size_t name_width = 6;
  for (const auto& r : rows) name_width = std::max(name_width, r.name.size());
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string("-");
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", *v);
    return std::string(buf);
  };
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof(line), "%-*s | %7s %7s %7s %7s\n", static_cast<int>(name_width), "Method", "All", "Many",
                "Med", "Few");
  os << line << std::string(name_width, '-') << "-+-" << std::string(31, '-') << "\n";
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%-*s | %7s %7s %7s %7s\n", static_cast<int>(name_width), r.name.c_str(),
                  cell(r.report.overall_acc).c_str(), cell(r.report.many_acc).c_str(), cell(r.report.med_acc).c_str(),
                  cell(r.report.few_acc).c_str());
    os << line;
  }
  return os.str();
}

torch::Tensor cam(SmclNet& model, const torch::Tensor& image, std::int64_t class_index) {
  if (image.dim() != 3) throw ContractViolation("cam expects one [C, H, W] image");
  if (class_index < 0 || class_index >= model->options().num_classes) {
    throw ContractViolation("cam class index out of range");
  }
  const bool was_training = model->is_training();
  model->eval();
  torch::AutoGradMode grad_on(true);
  auto out = model->forward_all(image.unsqueeze(0));
  auto score = out.logits[0][class_index];
  auto grads = torch::autograd::grad({score}, {out.feature_map}, /*grad_outputs=*/{}, /*retain_graph=*/false,
                                     /*create_graph=*/false, /*allow_unused=*/true)[0];
  model->train(was_training);

  torch::NoGradGuard guard;
  auto fmap = out.feature_map.detach()[0];
  if (!grads.defined()) grads = torch::zeros_like(out.feature_map);
  auto weights = grads[0].mean({1, 2}, /*keepdim=*/true);
  auto heat = torch::relu((weights * fmap).sum(0)).to(torch::kFloat64);
  heat = torch::nn::functional::interpolate(
             heat.unsqueeze(0).unsqueeze(0),
             torch::nn::functional::InterpolateFuncOptions()
                 .size(std::vector<std::int64_t>{image.size(1), image.size(2)})
                 .mode(torch::kBilinear)
                 .align_corners(false))
             .squeeze(0)
             .squeeze(0);
  const double lo = heat.min().item<double>();
  const double hi = heat.max().item<double>();
  if (!(hi - lo > 1e-12)) return torch::zeros_like(heat);
  return ((heat - lo) / (hi - lo)).clamp(0.0, 1.0);
}

void save_cam_overlay(const torch::Tensor& image_u8, const torch::Tensor& heat, const std::filesystem::path& path,
                      int upscale) {
  const int H = static_cast<int>(image_u8.size(1));
  const int W = static_cast<int>(image_u8.size(2));
  auto hwc = image_u8.permute({1, 2, 0}).contiguous();
  cv::Mat rgb(H, W, image_u8.size(0) == 3 ? CV_8UC3 : CV_8UC1, hwc.data_ptr<std::uint8_t>());
  cv::Mat bgr;
  if (rgb.channels() == 3) {
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  } else {
    cv::cvtColor(rgb, bgr, cv::COLOR_GRAY2BGR);
  }
  auto h8 = (heat.to(torch::kFloat64) * 255.0).round().clamp(0, 255).to(torch::kUInt8).contiguous();
  cv::Mat heat_mat(H, W, CV_8UC1, h8.data_ptr<std::uint8_t>());
  cv::Mat colored;
  cv::applyColorMap(heat_mat, colored, cv::COLORMAP_JET);
  cv::Mat blended;
  cv::addWeighted(bgr, 0.5, colored, 0.5, 0.0, blended);
  cv::Mat big;
  cv::resize(blended, big, cv::Size(W * upscale, H * upscale), 0, 0, cv::INTER_NEAREST);
  if (!cv::imwrite(path.string(), big)) throw DataError("cannot write " + path.string());
}

}  // namespace smcl
