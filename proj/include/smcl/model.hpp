#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <torch/torch.h>

namespace smcl {

enum class BackboneKind { resnet32, small_cnn };

BackboneKind parse_backbone(std::string_view id);
std::string to_string(BackboneKind kind);

struct ModelOptions {
  BackboneKind backbone = BackboneKind::small_cnn;
  int num_classes = 10;
  int in_channels = 3;
  int projection_dim = 128;
};

// CIFAR ResNet-32: 3 stages x 5 basic blocks (16/32/64 channels),
// parameter-free zero-padding shortcuts between stages.
class ResNet32Impl : public torch::nn::Module {
 public:
  explicit ResNet32Impl(int in_channels);
  // Returns the last convolutional block's activation map.
  torch::Tensor forward(torch::Tensor x);
  int out_channels() const { return 64; }

 private:
  torch::nn::Conv2d stem_{nullptr};
  torch::nn::BatchNorm2d stem_bn_{nullptr};
  torch::nn::Sequential stages_{nullptr};
};
TORCH_MODULE(ResNet32);

// Four conv-BN-ReLU blocks, 16/32/64/128 channels, stride 2 from block 2.
class SmallCnnImpl : public torch::nn::Module {
 public:
  explicit SmallCnnImpl(int in_channels);
  torch::Tensor forward(torch::Tensor x);
  int out_channels() const { return 128; }

 private:
  torch::nn::Sequential blocks_{nullptr};
};
TORCH_MODULE(SmallCnn);

struct NetOutputs {
  torch::Tensor logits;       // [M, K]
  torch::Tensor features;     // [M, d], unit L2 norm
  torch::Tensor feature_map;  // [M, C', h, w] from the last conv block
};

// Backbone + linear classifier on the pooled feature + 2-layer projection
// MLP (hidden = backbone width) whose output is L2-normalized.
class SmclNetImpl : public torch::nn::Module {
 public:
  explicit SmclNetImpl(const ModelOptions& options);

  NetOutputs forward_all(const torch::Tensor& images);
  // Classification logits only; the projection head is not evaluated.
  torch::Tensor forward(const torch::Tensor& images);
  // Logits from a last-block activation map (used by Grad-CAM).
  torch::Tensor logits_from_map(const torch::Tensor& feature_map);

  const ModelOptions& options() const { return options_; }
  std::string architecture_id() const;

  // The last conv block, for CAM diagnostics and tests that zero it.
  torch::nn::Module& last_block();

 private:
  torch::Tensor backbone_map(const torch::Tensor& images);

  ModelOptions options_;
  ResNet32 resnet_{nullptr};
  SmallCnn small_{nullptr};
  torch::nn::Linear classifier_{nullptr};
  torch::nn::Sequential projector_{nullptr};
};
TORCH_MODULE(SmclNet);

// Builds a model whose initial weights depend only on `seed`.
SmclNet make_model(const ModelOptions& options, std::uint64_t seed);

// Order of the views of one source inside a ViewBatch.
enum class View : int { source1 = 0, source2 = 1, target1 = 2, target2 = 3, masked = 4 };

// Either the two-view form (x1, x2) or the five-view form
// (x1, x2, x~1, x~2, x_m). `views` is [V, B, C, H, W]; rows of the model
// output are view-major: row v*B + b.
struct ViewBatch {
  torch::Tensor views;
  torch::Tensor source_labels;  // [B] int64
  torch::Tensor target_labels;  // [B] int64, undefined in the two-view form
  torch::Tensor area;           // [B] float64, masked-area fraction A

  std::int64_t num_views() const { return views.size(0); }
  std::int64_t batch_size() const { return views.size(1); }
  bool has_targets() const { return num_views() == 5; }

  // Stacks per-view [B, C, H, W] tensors; throws ContractViolation on
  // shape mismatch.
  static ViewBatch from_views(const std::vector<torch::Tensor>& views, torch::Tensor source_labels,
                              torch::Tensor target_labels = {}, torch::Tensor area = {});
};

struct ModelOutput {
  torch::Tensor logits;    // [V*B, K]
  torch::Tensor features;  // [V*B, d]
  std::int64_t num_views = 0;
  std::int64_t batch_size = 0;

  torch::Tensor view_logits(View v) const;
  torch::Tensor view_features(View v) const;
};

// One backbone pass over every view of every source. Training vs
// evaluation mode follows model->is_training().
ModelOutput forward(SmclNet& model, const ViewBatch& batch);

struct Prediction {
  std::vector<std::int64_t> labels;
  std::vector<double> confidence;  // softmax probability of the predicted class
};

// Row-wise argmax; ties go to the lowest class index.
std::vector<std::int64_t> argmax_rows(const torch::Tensor& logits);

// Evaluation-mode prediction on normalized images, in chunks of `chunk`.
Prediction predict(SmclNet& model, const torch::Tensor& images, std::int64_t chunk = 512);

}  // namespace smcl
