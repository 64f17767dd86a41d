#include "smcl/augment.hpp"

#include <algorithm>
#include <cmath>

#include "smcl/error.hpp"

namespace smcl {

AugmentPolicy parse_augment_policy(std::string_view id) {
  if (id == "none") return AugmentPolicy::none;
  if (id == "crop_flip") return AugmentPolicy::crop_flip;
  if (id == "cifar") return AugmentPolicy::cifar;
  throw ConfigError("unknown augmentation policy '" + std::string(id) + "' (expected none|crop_flip|cifar)");
}

std::string to_string(AugmentPolicy policy) {
  switch (policy) {
    case AugmentPolicy::none: return "none";
    case AugmentPolicy::crop_flip: return "crop_flip";
    case AugmentPolicy::cifar: return "cifar";
  }
  return "none";
}

ChannelStats ChannelStats::fit(const LabeledImages& data) {
  auto x = data.images.to(torch::kFloat64).div_(255.0);
  auto mean = x.mean({0, 2, 3});
  auto stddev = x.std({0, 2, 3}, /*unbiased=*/false).clamp_min(1e-6);
  ChannelStats stats;
  for (int c = 0; c < data.channels(); ++c) {
    stats.mean.push_back(static_cast<float>(mean[c].item<double>()));
    stats.stddev.push_back(static_cast<float>(stddev[c].item<double>()));
  }
  return stats;
}

torch::Tensor ChannelStats::normalize(const torch::Tensor& images) const {
  const auto C = static_cast<std::int64_t>(mean.size());
  std::vector<std::int64_t> shape(static_cast<std::size_t>(images.dim()), 1);
  shape[shape.size() - 3] = C;
  auto m = torch::tensor(mean, images.options()).view(shape);
  auto s = torch::tensor(stddev, images.options()).view(shape);
  return (images - m) / s;
}

torch::Tensor to_float_image(const torch::Tensor& image_u8) { return image_u8.to(torch::kFloat32).div(255.0f); }

namespace {

struct Image {
  int channels;
  int height;
  int width;
  float* data;

  float& at(int c, int y, int x) { return data[(c * height + y) * width + x]; }
};

void random_crop_flip(Image img, Rng& rng) {
  constexpr int pad = 4;
  std::uniform_int_distribution<int> offset(0, 2 * pad);
  const int oy = offset(rng) - pad;
  const int ox = offset(rng) - pad;
  const bool flip = std::bernoulli_distribution(0.5)(rng);
  std::vector<float> src(img.data, img.data + img.channels * img.height * img.width);
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        const int sy = y + oy;
        const int sx0 = x + ox;
        const int sx = flip ? img.width - 1 - sx0 : sx0;
        const bool inside = sy >= 0 && sy < img.height && sx0 >= 0 && sx0 < img.width;
        img.at(c, y, x) = inside ? src[static_cast<std::size_t>((c * img.height + sy) * img.width + sx)] : 0.0f;
      }
    }
  }
}

float luma(Image& img, int y, int x) {
  return 0.299f * img.at(0, y, x) + 0.587f * img.at(1, y, x) + 0.114f * img.at(2, y, x);
}

// Colour jitter with strengths (0.4, 0.4, 0.4, 0.1) and random grayscale;
// only defined for RGB input.
void sim_augment(Image img, Rng& rng) {
  if (img.channels != 3) return;
  std::uniform_real_distribution<float> u01(0.0f, 1.0f);
  const int n = img.height * img.width;
  if (u01(rng) < 0.8f) {
    const float brightness = 0.6f + 0.8f * u01(rng);
    const float contrast = 0.6f + 0.8f * u01(rng);
    const float saturation = 0.6f + 0.8f * u01(rng);
    const float hue = -0.1f + 0.2f * u01(rng);
    for (int i = 0; i < 3 * n; ++i) img.data[i] = std::clamp(img.data[i] * brightness, 0.0f, 1.0f);

    double mean_luma = 0.0;
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) mean_luma += luma(img, y, x);
    const auto m = static_cast<float>(mean_luma / n);
    for (int i = 0; i < 3 * n; ++i) img.data[i] = std::clamp((img.data[i] - m) * contrast + m, 0.0f, 1.0f);

    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        const float g = luma(img, y, x);
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = std::clamp((img.at(c, y, x) - g) * saturation + g, 0.0f, 1.0f);
      }
    }

    // Hue rotation in YIQ space.
    const float theta = hue * 2.0f * static_cast<float>(M_PI);
    const float cs = std::cos(theta);
    const float sn = std::sin(theta);
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        const float r = img.at(0, y, x), g = img.at(1, y, x), b = img.at(2, y, x);
        const float Y = 0.299f * r + 0.587f * g + 0.114f * b;
        const float I = 0.596f * r - 0.274f * g - 0.322f * b;
        const float Q = 0.211f * r - 0.523f * g + 0.312f * b;
        const float I2 = I * cs - Q * sn;
        const float Q2 = I * sn + Q * cs;
        img.at(0, y, x) = std::clamp(Y + 0.956f * I2 + 0.621f * Q2, 0.0f, 1.0f);
        img.at(1, y, x) = std::clamp(Y - 0.272f * I2 - 0.647f * Q2, 0.0f, 1.0f);
        img.at(2, y, x) = std::clamp(Y - 1.106f * I2 + 1.703f * Q2, 0.0f, 1.0f);
      }
    }
  }
  if (u01(rng) < 0.2f) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        const float g = luma(img, y, x);
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = g;
      }
    }
  }
}

void cutout(Image img, const std::vector<float>& fill, Rng& rng) {
  const int side = std::max(1, std::min(img.height, img.width) / 2);
  const int cy = std::uniform_int_distribution<int>(0, img.height - 1)(rng);
  const int cx = std::uniform_int_distribution<int>(0, img.width - 1)(rng);
  const int y0 = std::max(0, cy - side / 2), y1 = std::min(img.height, cy - side / 2 + side);
  const int x0 = std::max(0, cx - side / 2), x1 = std::min(img.width, cx - side / 2 + side);
  for (int c = 0; c < img.channels; ++c) {
    const float v = c < static_cast<int>(fill.size()) ? fill[static_cast<std::size_t>(c)] : 0.0f;
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) img.at(c, y, x) = v;
  }
}

}  // namespace

torch::Tensor Augmenter::operator()(const torch::Tensor& image_u8, Rng& rng) const {
  auto out = to_float_image(image_u8).contiguous();
  if (policy_ == AugmentPolicy::none) return out;
  Image img{static_cast<int>(out.size(0)), static_cast<int>(out.size(1)), static_cast<int>(out.size(2)),
            out.data_ptr<float>()};
  random_crop_flip(img, rng);
  if (policy_ == AugmentPolicy::cifar) {
    sim_augment(img, rng);
    cutout(img, fill_, rng);
  }
  return out;
}

}  // namespace smcl
