#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <torch/torch.h>

#include "smcl/rng.hpp"

namespace smcl {

// Non-negative saliency scores on the image grid, row-major.
struct SaliencyMap {
  int height = 0;
  int width = 0;
  std::vector<float> values;

  float at(int row, int col) const { return values[static_cast<std::size_t>(row * width + col)]; }
};

// Spectral-residual saliency on the luminance of a [C, H, W] float image:
// log-amplitude minus its 3x3 local mean, recombined with the phase,
// squared magnitude of the inverse transform, Gaussian-smoothed. Images
// larger than 64 px are analysed at 64x64 and the map resized back. A
// constant image yields an all-zero map.
SaliencyMap spectral_residual_saliency(const torch::Tensor& image);

// Writes the map as an 8-bit grayscale PNG (min-max scaled).
void save_saliency_png(const SaliencyMap& map, const std::filesystem::path& path);

struct Pixel {
  int row = 0;
  int col = 0;
  bool operator==(const Pixel&) const = default;
};

struct SaliencyPeak {
  Pixel pixel;
  // The map is constant; callers fall back to center masking.
  bool degenerate = false;
};

// Argmax with ties broken by smallest row, then smallest column.
SaliencyPeak saliency_peak(const SaliencyMap& map);
SaliencyPeak saliency_peak(const torch::Tensor& image);

enum class MaskMode { saliency, center, random };

MaskMode parse_mask_mode(std::string_view id);
std::string to_string(MaskMode mode);

// Half-open pixel rectangle [row_lo, row_hi) x [col_lo, col_hi), already
// clipped to the image. `area_fraction` is the clipped area over H*W.
struct MaskSpec {
  int height = 0;
  int width = 0;
  Pixel center;
  int row_lo = 0;
  int row_hi = 0;
  int col_lo = 0;
  int col_hi = 0;
  double area_fraction = 0.0;

  std::int64_t masked_pixels() const {
    return static_cast<std::int64_t>(row_hi - row_lo) * static_cast<std::int64_t>(col_hi - col_lo);
  }
  bool empty() const { return masked_pixels() == 0; }
};

struct MaskOptions {
  MaskMode mode = MaskMode::saliency;
  double alpha = 1.0;
  // Draws whose clipped area fraction reaches the cap are re-drawn once,
  // then shrunk until they fall under it.
  double area_cap = 0.9;
};

Pixel image_center(int height, int width);

// Box of nominal size round(H*sqrt(a)) x round(W*sqrt(a)) centred on
// `center`, clipped to the image.
MaskSpec box_for_draw(int height, int width, Pixel center, double a);

// Largest box around spec.center, scaled down from `spec`, whose area
// fraction stays <= cap.
MaskSpec shrink_to_cap(const MaskSpec& spec, double cap);

// Full mask construction with an injectable area draw (used for boundary
// tests); `rng` supplies random-mode centres.
MaskSpec make_mask(int height, int width, Pixel center, const MaskOptions& options,
                   const std::function<double()>& draw_area, Rng& rng);

// a ~ Beta(alpha, alpha).
MaskSpec make_mask(int height, int width, Pixel center, const MaskOptions& options, Rng& rng);

// Pixels inside the box become `fill` (one value per channel); every other
// pixel is copied bit-for-bit.
torch::Tensor apply_mask(const torch::Tensor& image, const MaskSpec& spec, const std::vector<float>& fill);

struct MaskedImage {
  torch::Tensor image;
  MaskSpec spec;
  bool used_center_fallback = false;
};

// Picks the mask centre per options.mode (saliency peak of `image`, image
// centre, or a uniform pixel), builds the mask and applies it. A degenerate
// saliency map falls back to center masking.
MaskedImage mask_image(const torch::Tensor& image, const MaskOptions& options, const std::vector<float>& fill,
                       Rng& rng);

}  // namespace smcl
