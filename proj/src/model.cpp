#include "smcl/model.hpp"

#include "smcl/error.hpp"

namespace smcl {

BackboneKind parse_backbone(std::string_view id) {
  if (id == "resnet32") return BackboneKind::resnet32;
  if (id == "small_cnn") return BackboneKind::small_cnn;
  throw ConfigError("unknown backbone '" + std::string(id) + "' (expected resnet32|small_cnn)");
}

std::string to_string(BackboneKind kind) { return kind == BackboneKind::resnet32 ? "resnet32" : "small_cnn"; }

namespace {

torch::nn::Conv2d conv3x3(int in, int out, int stride) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1).bias(false));
}

class BasicBlockImpl : public torch::nn::Module {
 public:
  BasicBlockImpl(int in_planes, int planes, int stride)
      : conv1_(register_module("conv1", conv3x3(in_planes, planes, stride))),
        bn1_(register_module("bn1", torch::nn::BatchNorm2d(planes))),
        conv2_(register_module("conv2", conv3x3(planes, planes, 1))),
        bn2_(register_module("bn2", torch::nn::BatchNorm2d(planes))),
        downsample_(stride != 1 || in_planes != planes),
        pad_((planes - in_planes) / 2) {}

  torch::Tensor forward(torch::Tensor x) {
    auto out = torch::relu(bn1_(conv1_(x)));
    out = bn2_(conv2_(out));
    torch::Tensor shortcut = x;
    if (downsample_) {
      using torch::indexing::None;
      using torch::indexing::Slice;
      shortcut = x.index({Slice(), Slice(), Slice(None, None, 2), Slice(None, None, 2)});
      shortcut = torch::constant_pad_nd(shortcut, {0, 0, 0, 0, pad_, pad_}, 0.0);
    }
    return torch::relu(out + shortcut);
  }

 private:
  torch::nn::Conv2d conv1_;
  torch::nn::BatchNorm2d bn1_;
  torch::nn::Conv2d conv2_;
  torch::nn::BatchNorm2d bn2_;
  bool downsample_;
  int pad_;
};
TORCH_MODULE(BasicBlock);

class ConvBlockImpl : public torch::nn::Module {
 public:
  ConvBlockImpl(int in, int out, int stride)
      : conv_(register_module("conv", conv3x3(in, out, stride))),
        bn_(register_module("bn", torch::nn::BatchNorm2d(out))) {}
  torch::Tensor forward(torch::Tensor x) { return torch::relu(bn_(conv_(x))); }

 private:
  torch::nn::Conv2d conv_;
  torch::nn::BatchNorm2d bn_;
};
TORCH_MODULE(ConvBlock);

void init_weights(torch::nn::Module& module) {
  torch::NoGradGuard guard;
  for (auto& m : module.modules(/*include_self=*/false)) {
    if (auto* conv = m->as<torch::nn::Conv2d>()) {
      torch::nn::init::kaiming_normal_(conv->weight, 0.0, torch::kFanOut, torch::kReLU);
    } else if (auto* linear = m->as<torch::nn::Linear>()) {
      torch::nn::init::kaiming_normal_(linear->weight, 0.0, torch::kFanIn, torch::kReLU);
      if (linear->bias.defined()) linear->bias.zero_();
    } else if (auto* bn = m->as<torch::nn::BatchNorm2d>()) {
      bn->weight.fill_(1.0);
      bn->bias.zero_();
    }
  }
}

}  // namespace

ResNet32Impl::ResNet32Impl(int in_channels) {
  stem_ = register_module("stem", conv3x3(in_channels, 16, 1));
  stem_bn_ = register_module("stem_bn", torch::nn::BatchNorm2d(16));
  torch::nn::Sequential stages;
  int in_planes = 16;
  for (int planes : {16, 32, 64}) {
    for (int i = 0; i < 5; ++i) {
      const int stride = (i == 0 && planes != 16) ? 2 : 1;
      stages->push_back(BasicBlock(in_planes, planes, stride));
      in_planes = planes;
    }
  }
  stages_ = register_module("stages", stages);
}

torch::Tensor ResNet32Impl::forward(torch::Tensor x) { return stages_->forward(torch::relu(stem_bn_(stem_(x)))); }

SmallCnnImpl::SmallCnnImpl(int in_channels) {
  blocks_ = register_module("blocks", torch::nn::Sequential(ConvBlock(in_channels, 16, 1), ConvBlock(16, 32, 2),
                                                            ConvBlock(32, 64, 2), ConvBlock(64, 128, 2)));
}

torch::Tensor SmallCnnImpl::forward(torch::Tensor x) { return blocks_->forward(x); }

SmclNetImpl::SmclNetImpl(const ModelOptions& options) : options_(options) {
  if (options.num_classes < 1 || options.projection_dim < 1 || options.in_channels < 1) {
    throw InvalidParameter("model needs positive class count, projection size and input channels");
  }
  int width = 0;
  if (options.backbone == BackboneKind::resnet32) {
    resnet_ = register_module("backbone", ResNet32(options.in_channels));
    width = resnet_->out_channels();
  } else {
    small_ = register_module("backbone", SmallCnn(options.in_channels));
    width = small_->out_channels();
  }
  classifier_ = register_module("classifier", torch::nn::Linear(width, options.num_classes));
  projector_ = register_module(
      "projector", torch::nn::Sequential(torch::nn::Linear(width, width), torch::nn::ReLU(),
                                         torch::nn::Linear(width, options.projection_dim)));
}

std::string SmclNetImpl::architecture_id() const {
  return to_string(options_.backbone) + "/k" + std::to_string(options_.num_classes) + "/c" +
         std::to_string(options_.in_channels) + "/d" + std::to_string(options_.projection_dim);
}

torch::nn::Module& SmclNetImpl::last_block() {
  if (resnet_) return *resnet_->named_children()["stages"]->children().back();
  return *small_->named_children()["blocks"]->children().back();
}

torch::Tensor SmclNetImpl::backbone_map(const torch::Tensor& images) {
  return resnet_ ? resnet_->forward(images) : small_->forward(images);
}

torch::Tensor SmclNetImpl::logits_from_map(const torch::Tensor& feature_map) {
  return classifier_(feature_map.mean({2, 3}));
}

NetOutputs SmclNetImpl::forward_all(const torch::Tensor& images) {
  NetOutputs out;
  out.feature_map = backbone_map(images);
  auto pooled = out.feature_map.mean({2, 3});
  out.logits = classifier_(pooled);
  out.features = torch::nn::functional::normalize(
      projector_->forward(pooled), torch::nn::functional::NormalizeFuncOptions().p(2).dim(1).eps(1e-12));
  return out;
}

torch::Tensor SmclNetImpl::forward(const torch::Tensor& images) { return classifier_(backbone_map(images).mean({2, 3})); }

SmclNet make_model(const ModelOptions& options, std::uint64_t seed) {
  torch::manual_seed(seed);
  SmclNet model(options);
  init_weights(*model);
  return model;
}

ViewBatch ViewBatch::from_views(const std::vector<torch::Tensor>& views, torch::Tensor source_labels,
                                torch::Tensor target_labels, torch::Tensor area) {
  if (views.size() != 2 && views.size() != 5) throw ContractViolation("a view batch holds 2 or 5 views");
  for (const auto& v : views) {
    if (v.sizes() != views.front().sizes()) {
      throw ContractViolation("all views must share one tensor shape");
    }
  }
  ViewBatch batch;
  batch.views = torch::stack(views);
  batch.source_labels = std::move(source_labels);
  batch.target_labels = std::move(target_labels);
  batch.area = area.defined() ? std::move(area) : torch::zeros({batch.batch_size()}, torch::kFloat64);
  if (batch.source_labels.size(0) != batch.batch_size()) throw ContractViolation("one source label per source");
  if (batch.has_targets() && (!batch.target_labels.defined() || batch.target_labels.size(0) != batch.batch_size())) {
    throw ContractViolation("five-view batches need one target label per source");
  }
  return batch;
}

torch::Tensor ModelOutput::view_logits(View v) const {
  return logits.narrow(0, static_cast<std::int64_t>(v) * batch_size, batch_size);
}

torch::Tensor ModelOutput::view_features(View v) const {
  return features.narrow(0, static_cast<std::int64_t>(v) * batch_size, batch_size);
}

ModelOutput forward(SmclNet& model, const ViewBatch& batch) {
  if (batch.views.dim() != 5 || batch.batch_size() < 1) {
    throw ContractViolation("forward expects a non-empty [V, B, C, H, W] view batch");
  }
  const auto V = batch.num_views();
  const auto B = batch.batch_size();
  auto flat = batch.views.reshape({V * B, batch.views.size(2), batch.views.size(3), batch.views.size(4)});
  auto net = model->forward_all(flat);
  return {net.logits, net.features, V, B};
}

std::vector<std::int64_t> argmax_rows(const torch::Tensor& logits) {
  auto l = logits.to(torch::kFloat64).contiguous();
  const auto rows = l.size(0);
  const auto cols = l.size(1);
  const double* p = l.data_ptr<double>();
  std::vector<std::int64_t> out(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    std::int64_t best = 0;
    for (std::int64_t c = 1; c < cols; ++c) {
      if (p[r * cols + c] > p[r * cols + best]) best = c;
    }
    out[static_cast<std::size_t>(r)] = best;
  }
  return out;
}

Prediction predict(SmclNet& model, const torch::Tensor& images, std::int64_t chunk) {
  const bool was_training = model->is_training();
  model->eval();
  torch::NoGradGuard guard;
  Prediction pred;
  for (std::int64_t start = 0; start < images.size(0); start += chunk) {
    const auto n = std::min(chunk, images.size(0) - start);
    auto logits = model->forward(images.narrow(0, start, n));
    auto probs = torch::softmax(logits.to(torch::kFloat64), 1);
    const auto labels = argmax_rows(logits);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      pred.labels.push_back(labels[i]);
      pred.confidence.push_back(probs[static_cast<std::int64_t>(i)][labels[i]].item<double>());
    }
  }
  model->train(was_training);
  return pred;
}

}  // namespace smcl
