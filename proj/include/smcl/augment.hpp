#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <torch/torch.h>

#include "smcl/data.hpp"
#include "smcl/rng.hpp"

namespace smcl {

// Augmentation recipes, selected by id so tests can pin a deterministic one.
//   none      : uint8 -> float only
//   crop_flip : zero-pad 4 + random crop, horizontal flip
//   cifar     : crop_flip, SimAugment colour stack (jitter p=0.8, grayscale p=0.2),
//               CutOut with a side of half the image
enum class AugmentPolicy { none, crop_flip, cifar };

AugmentPolicy parse_augment_policy(std::string_view id);
std::string to_string(AugmentPolicy policy);

// Per-channel statistics of the raw [0,1] images. Masks and CutOut fill with
// `mean`, which maps to zero after normalization.
struct ChannelStats {
  std::vector<float> mean;
  std::vector<float> stddev;

  static ChannelStats fit(const LabeledImages& data);

  // (x - mean) / stddev over a [.., C, H, W] float tensor.
  torch::Tensor normalize(const torch::Tensor& images) const;
};

torch::Tensor to_float_image(const torch::Tensor& image_u8);

class Augmenter {
 public:
  Augmenter(AugmentPolicy policy, std::vector<float> fill) : policy_(policy), fill_(std::move(fill)) {}

  // [C, H, W] uint8 in, [C, H, W] float in [0, 1] out.
  torch::Tensor operator()(const torch::Tensor& image_u8, Rng& rng) const;

  AugmentPolicy policy() const { return policy_; }

 private:
  AugmentPolicy policy_;
  std::vector<float> fill_;
};

}  // namespace smcl
