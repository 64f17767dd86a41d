#include "smcl/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "smcl/error.hpp"
#include "smcl/rng.hpp"

#ifndef SMCL_CODE_REVISION
#define SMCL_CODE_REVISION "unknown"
#endif

namespace fs = std::filesystem;

namespace smcl {

std::string code_revision() { return SMCL_CODE_REVISION; }

nlohmann::json ExperimentRecord::to_json() const {
  return {{"name", name},
          {"config_fingerprint", config_fingerprint},
          {"dataset_fingerprint", dataset_fingerprint},
          {"code_revision", code_revision},
          {"metrics_path", metrics_path.string()},
          {"checkpoint_path", checkpoint_path.string()},
          {"config", config.to_json()},
          {"epochs_completed", epochs_completed},
          {"status", status},
          {"abort_reason", abort_reason},
          {"final_eval", final_eval ? final_eval->to_json() : nlohmann::json(nullptr)}};
}

ExperimentRecord ExperimentRecord::from_json(const nlohmann::json& j) {
  ExperimentRecord r;
  r.name = j.at("name");
  r.config_fingerprint = j.at("config_fingerprint");
  r.dataset_fingerprint = j.at("dataset_fingerprint");
  r.code_revision = j.at("code_revision");
  r.metrics_path = j.at("metrics_path").get<std::string>();
  r.checkpoint_path = j.at("checkpoint_path").get<std::string>();
  r.config = TrainConfig::from_json(j.at("config"));
  r.epochs_completed = j.at("epochs_completed");
  r.status = j.at("status");
  r.abort_reason = j.value("abort_reason", "");
  if (!j.at("final_eval").is_null()) r.final_eval = EvalReport::from_json(j.at("final_eval"));
  return r;
}

void ExperimentRecord::save(const fs::path& path) const {
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << to_json().dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

ExperimentRecord ExperimentRecord::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("experiment record not found: " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed experiment record " + path.string() + ": " + e.what());
  }
}

std::string run_id(const std::string& config_fingerprint, const std::string& dataset_fingerprint) {
  return hex64(fnv1a64(config_fingerprint + "/" + dataset_fingerprint));
}

std::vector<LossPoint> read_loss_curve(const fs::path& metrics) {
  std::ifstream in(metrics);
  if (!in) throw DataError("metrics log not found: " + metrics.string());
  std::vector<LossPoint> curve;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    const auto row = nlohmann::json::parse(line);
    if (row.value("kind", "") != "epoch") continue;
    curve.push_back({row.at("epoch"), row.at("loss"), row.at("mce"), row.at("msc")});
  }
  return curve;
}

std::string loss_plot_svg(const std::vector<LossPoint>& curve, const std::string& title) {
  constexpr double W = 640, H = 400, left = 60, right = 20, top = 40, bottom = 50;
  double y_max = 0.0;
  int x_max = 1;
  for (const auto& p : curve) {
    y_max = std::max({y_max, p.loss, p.mce, p.msc});
    x_max = std::max(x_max, p.epoch + 1);
  }
  if (!(y_max > 0.0)) y_max = 1.0;
  auto sx = [&](double e) { return left + (W - left - right) * (e + 1) / x_max; };
  auto sy = [&](double v) { return top + (H - top - bottom) * (1.0 - v / y_max); };

  std::ostringstream os;
  char buf[160];
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
  std::snprintf(buf, sizeof(buf), "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n", left,
                H - bottom, W - right, H - bottom);
  os << buf;
  std::snprintf(buf, sizeof(buf), "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n", left, top,
                left, H - bottom);
  os << buf;
  for (int t = 0; t <= 4; ++t) {
    const double v = y_max * t / 4.0;
    std::snprintf(buf, sizeof(buf), "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\">%.3g</text>\n", left - 6, sy(v) + 4, v);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">epoch (1..%d)</text>\n",
                (left + W - right) / 2, H - 15, x_max);
  os << buf;

  struct Series {
    const char* name;
    const char* colour;
    double LossPoint::*field;
  };
  const Series series[] = {{"loss", "#1f77b4", &LossPoint::loss},
                           {"mce", "#d62728", &LossPoint::mce},
                           {"msc", "#2ca02c", &LossPoint::msc}};
  int legend = 0;
  for (const auto& s : series) {
    if (!curve.empty()) {
      os << "<polyline fill=\"none\" stroke=\"" << s.colour << "\" stroke-width=\"2\" points=\"";
      for (const auto& p : curve) {
        std::snprintf(buf, sizeof(buf), "%.1f,%.1f ", sx(p.epoch), sy(p.*s.field));
        os << buf;
      }
      os << "\"/>\n";
    }
    const double ly = top + 14.0 * legend++;
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"%s\" stroke-width=\"2\"/>"
                  "<text x=\"%.1f\" y=\"%.1f\">%s</text>\n",
                  W - right - 70, ly, W - right - 50, ly, s.colour, W - right - 45, ly + 4, s.name);
    os << buf;
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace smcl
