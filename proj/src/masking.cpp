#include "smcl/masking.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "smcl/error.hpp"

namespace smcl {

namespace {

constexpr int kMaxAnalysisSide = 64;

cv::Mat luminance(const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(1) < 1 || image.size(2) < 1) {
    throw ContractViolation("saliency expects a [C, H, W] image with positive spatial extent");
  }
  auto x = image.to(torch::kFloat32).contiguous();
  const int C = static_cast<int>(x.size(0));
  const int H = static_cast<int>(x.size(1));
  const int W = static_cast<int>(x.size(2));
  cv::Mat gray(H, W, CV_32F);
  const float* p = x.data_ptr<float>();
  const std::size_t plane = static_cast<std::size_t>(H * W);
  for (int y = 0; y < H; ++y) {
    auto* row = gray.ptr<float>(y);
    for (int c = 0; c < W; ++c) {
      const std::size_t i = static_cast<std::size_t>(y * W + c);
      row[c] = C >= 3 ? 0.299f * p[i] + 0.587f * p[plane + i] + 0.114f * p[2 * plane + i] : p[i];
    }
  }
  return gray;
}

}  // namespace

SaliencyMap spectral_residual_saliency(const torch::Tensor& image) {
  const cv::Mat gray = luminance(image);
  const int H = gray.rows;
  const int W = gray.cols;
  SaliencyMap map{H, W, std::vector<float>(static_cast<std::size_t>(H * W), 0.0f)};

  double lo = 0.0, hi = 0.0;
  cv::minMaxLoc(gray, &lo, &hi);
  if (hi - lo <= 1e-7) return map;

  cv::Mat work;
  if (std::max(H, W) > kMaxAnalysisSide) {
    cv::resize(gray, work, cv::Size(kMaxAnalysisSide, kMaxAnalysisSide), 0, 0, cv::INTER_AREA);
  } else {
    work = gray;
  }

  cv::Mat spectrum;
  cv::dft(work, spectrum, cv::DFT_COMPLEX_OUTPUT);
  cv::Mat planes[2];
  cv::split(spectrum, planes);
  cv::Mat amplitude, phase;
  cv::cartToPolar(planes[0], planes[1], amplitude, phase);

  cv::Mat log_amplitude;
  cv::log(amplitude + 1e-8f, log_amplitude);
  cv::Mat local_mean;
  cv::blur(log_amplitude, local_mean, cv::Size(3, 3), cv::Point(-1, -1), cv::BORDER_REFLECT);
  cv::Mat residual_amplitude;
  cv::exp(log_amplitude - local_mean, residual_amplitude);

  cv::polarToCart(residual_amplitude, phase, planes[0], planes[1]);
  cv::merge(planes, 2, spectrum);
  cv::Mat recon;
  cv::idft(spectrum, recon, cv::DFT_SCALE | cv::DFT_COMPLEX_OUTPUT);
  cv::split(recon, planes);
  cv::Mat energy;
  cv::magnitude(planes[0], planes[1], energy);
  energy = energy.mul(energy);

  const double sigma = std::max(1.0, std::max(work.rows, work.cols) / 16.0);
  cv::GaussianBlur(energy, energy, cv::Size(0, 0), sigma, sigma, cv::BORDER_REFLECT);
  if (energy.rows != H || energy.cols != W) cv::resize(energy, energy, cv::Size(W, H), 0, 0, cv::INTER_LINEAR);

  for (int y = 0; y < H; ++y) {
    const auto* row = energy.ptr<float>(y);
    for (int x = 0; x < W; ++x) map.values[static_cast<std::size_t>(y * W + x)] = std::max(0.0f, row[x]);
  }
  return map;
}

void save_saliency_png(const SaliencyMap& map, const std::filesystem::path& path) {
  cv::Mat m(map.height, map.width, CV_32F, const_cast<float*>(map.values.data()));
  cv::Mat out;
  cv::normalize(m, out, 0, 255, cv::NORM_MINMAX, CV_8U);
  if (!cv::imwrite(path.string(), out)) throw DataError("cannot write " + path.string());
}

SaliencyPeak saliency_peak(const SaliencyMap& map) {
  if (map.height < 1 || map.width < 1) throw ContractViolation("saliency map has no pixels");
  SaliencyPeak peak;
  float best = map.values.front();
  float worst = best;
  for (int r = 0; r < map.height; ++r) {
    for (int c = 0; c < map.width; ++c) {
      const float v = map.at(r, c);
      worst = std::min(worst, v);
      if (v > best) {  // strict: earlier (row, col) wins ties
        best = v;
        peak.pixel = {r, c};
      }
    }
  }
  peak.degenerate = !(best > worst);
  return peak;
}

SaliencyPeak saliency_peak(const torch::Tensor& image) { return saliency_peak(spectral_residual_saliency(image)); }

MaskMode parse_mask_mode(std::string_view id) {
  if (id == "saliency") return MaskMode::saliency;
  if (id == "center") return MaskMode::center;
  if (id == "random") return MaskMode::random;
  throw ConfigError("unknown mask mode '" + std::string(id) + "' (expected saliency|center|random)");
}

std::string to_string(MaskMode mode) {
  switch (mode) {
    case MaskMode::saliency: return "saliency";
    case MaskMode::center: return "center";
    case MaskMode::random: return "random";
  }
  return "saliency";
}

Pixel image_center(int height, int width) { return {height / 2, width / 2}; }

namespace {

MaskSpec box_with_sides(int height, int width, Pixel center, int box_h, int box_w) {
  MaskSpec spec;
  spec.height = height;
  spec.width = width;
  spec.center = center;
  const int r0 = center.row - box_h / 2;
  const int c0 = center.col - box_w / 2;
  spec.row_lo = std::clamp(r0, 0, height);
  spec.row_hi = std::clamp(r0 + box_h, 0, height);
  spec.col_lo = std::clamp(c0, 0, width);
  spec.col_hi = std::clamp(c0 + box_w, 0, width);
  if (spec.row_hi <= spec.row_lo || spec.col_hi <= spec.col_lo) {
    spec.row_lo = spec.row_hi = std::clamp(center.row, 0, height);
    spec.col_lo = spec.col_hi = std::clamp(center.col, 0, width);
  }
  spec.area_fraction = static_cast<double>(spec.masked_pixels()) / (static_cast<double>(height) * width);
  return spec;
}

void check_geometry(int height, int width, Pixel center) {
  if (height < 1 || width < 1) throw InvalidParameter("mask needs an image of positive size");
  if (center.row < 0 || center.row >= height || center.col < 0 || center.col >= width) {
    throw InvalidParameter("mask centre (" + std::to_string(center.row) + ", " + std::to_string(center.col) +
                           ") lies outside the image");
  }
}

}  // namespace

MaskSpec box_for_draw(int height, int width, Pixel center, double a) {
  check_geometry(height, width, center);
  if (!(a >= 0.0 && a <= 1.0)) throw InvalidParameter("mask area draw must lie in [0, 1]");
  const double side = std::sqrt(a);
  const int box_h = static_cast<int>(std::lround(height * side));
  const int box_w = static_cast<int>(std::lround(width * side));
  return box_with_sides(height, width, center, box_h, box_w);
}

MaskSpec shrink_to_cap(const MaskSpec& spec, double cap) {
  if (spec.area_fraction <= cap) return spec;
  const double total = static_cast<double>(spec.height) * spec.width;
  const double scale = std::sqrt(cap / spec.area_fraction);
  int box_h = static_cast<int>(std::floor((spec.row_hi - spec.row_lo) * scale));
  int box_w = static_cast<int>(std::floor((spec.col_hi - spec.col_lo) * scale));
  MaskSpec out = box_with_sides(spec.height, spec.width, spec.center, box_h, box_w);
  while (static_cast<double>(out.masked_pixels()) > cap * total) {
    if (box_h >= box_w) {
      --box_h;
    } else {
      --box_w;
    }
    out = box_with_sides(spec.height, spec.width, spec.center, box_h, box_w);
  }
  return out;
}

MaskSpec make_mask(int height, int width, Pixel center, const MaskOptions& options,
                   const std::function<double()>& draw_area, Rng& rng) {
  if (!(options.alpha > 0.0)) throw InvalidParameter("mask alpha must be > 0");
  if (!(options.area_cap > 0.0 && options.area_cap <= 1.0)) throw InvalidParameter("mask area cap must lie in (0, 1]");
  if (height < 1 || width < 1) throw InvalidParameter("mask needs an image of positive size");

  const double a = draw_area();
  switch (options.mode) {
    case MaskMode::saliency: break;
    case MaskMode::center: center = image_center(height, width); break;
    case MaskMode::random:
      center = {std::uniform_int_distribution<int>(0, height - 1)(rng),
                std::uniform_int_distribution<int>(0, width - 1)(rng)};
      break;
  }
  MaskSpec spec = box_for_draw(height, width, center, a);
  if (options.area_cap < 1.0 && spec.area_fraction >= options.area_cap) {
    spec = box_for_draw(height, width, center, draw_area());
    if (spec.area_fraction >= options.area_cap) spec = shrink_to_cap(spec, options.area_cap);
  }
  return spec;
}

MaskSpec make_mask(int height, int width, Pixel center, const MaskOptions& options, Rng& rng) {
  if (!(options.alpha > 0.0)) throw InvalidParameter("mask alpha must be > 0");
  return make_mask(height, width, center, options, [&] { return sample_symmetric_beta(options.alpha, rng); }, rng);
}

torch::Tensor apply_mask(const torch::Tensor& image, const MaskSpec& spec, const std::vector<float>& fill) {
  if (image.dim() != 3 || image.size(1) != spec.height || image.size(2) != spec.width) {
    throw ContractViolation("mask geometry does not match the image");
  }
  auto out = image.clone();
  if (spec.empty()) return out;
  const auto C = image.size(0);
  if (static_cast<std::int64_t>(fill.size()) < C) throw ContractViolation("fill needs one value per channel");
  for (std::int64_t c = 0; c < C; ++c) {
    out[c]
        .narrow(0, spec.row_lo, spec.row_hi - spec.row_lo)
        .narrow(1, spec.col_lo, spec.col_hi - spec.col_lo)
        .fill_(fill[static_cast<std::size_t>(c)]);
  }
  return out;
}

MaskedImage mask_image(const torch::Tensor& image, const MaskOptions& options, const std::vector<float>& fill,
                       Rng& rng) {
  const int H = static_cast<int>(image.size(1));
  const int W = static_cast<int>(image.size(2));
  MaskedImage result;
  MaskOptions effective = options;
  Pixel center = image_center(H, W);
  if (options.mode == MaskMode::saliency) {
    const auto peak = saliency_peak(image);
    if (peak.degenerate) {
      effective.mode = MaskMode::center;
      result.used_center_fallback = true;
    } else {
      center = peak.pixel;
    }
  }
  result.spec = make_mask(H, W, center, effective, rng);
  result.image = apply_mask(image, result.spec, fill);
  return result;
}

}  // namespace smcl
