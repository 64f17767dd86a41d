#include "smcl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "smcl/checkpoint.hpp"
#include "smcl/error.hpp"

namespace fs = std::filesystem;

namespace smcl {

TrainStreams TrainStreams::from_seed(std::uint64_t seed) {
  return {make_stream(seed, "data"), make_stream(seed, "augment"), make_stream(seed, "sampler"),
          make_stream(seed, "masking"), make_stream(seed, "gate")};
}

nlohmann::json TrainStreams::to_json() const {
  return {{"data", serialize_rng(data)},
          {"augment", serialize_rng(augment)},
          {"sampler", serialize_rng(sampler)},
          {"masking", serialize_rng(masking)},
          {"gate", serialize_rng(gate)}};
}

TrainStreams TrainStreams::from_json(const nlohmann::json& j) {
  return {deserialize_rng(j.at("data")), deserialize_rng(j.at("augment")), deserialize_rng(j.at("sampler")),
          deserialize_rng(j.at("masking")), deserialize_rng(j.at("gate"))};
}

bool masking_gate(int epoch, const TrainConfig& cfg, Rng& rng) {
  if (epoch < cfg.mask_start_epoch) return false;
  return std::bernoulli_distribution(cfg.mask_probability)(rng);
}

double learning_rate(const TrainConfig& cfg, int epoch) {
  if (cfg.lr_schedule == LrSchedule::cosine) {
    if (cfg.epochs <= 0) return cfg.lr_initial;
    return 0.5 * cfg.lr_initial * (1.0 + std::cos(std::numbers::pi * epoch / cfg.epochs));
  }
  double lr = cfg.lr_initial;
  for (int m : cfg.lr_milestones) {
    if (epoch >= m) lr *= cfg.lr_decay_factor;
  }
  return lr;
}

DrwWeights drw_for_epoch(const TrainConfig& cfg, const ClassHistogram& hist, int epoch) {
  if (!cfg.use_drw || epoch < cfg.drw_start_epoch) return DrwWeights::inactive(hist.num_classes());
  return drw_weights(hist, cfg.drw_beta);
}

bool smcl_phase(const TrainConfig& cfg, int epoch) {
  return cfg.mask_probability > 0.0 && epoch >= cfg.mask_start_epoch;
}

namespace {

std::vector<float> fill_for(const TrainConfig& cfg, const ChannelStats& stats) {
  if (cfg.fill == "zero") return std::vector<float>(stats.mean.size(), 0.0f);
  return stats.mean;
}

torch::Tensor labels_tensor(const std::vector<std::int64_t>& v) { return torch::tensor(v, torch::kInt64); }

}  // namespace

BatchAssembler::BatchAssembler(const LabeledImages& train, const TrainConfig& cfg, ChannelStats stats)
    : train_(train),
      stats_(std::move(stats)),
      fill_(fill_for(cfg, stats_)),
      augmenter_(parse_augment_policy(cfg.augment_policy), fill_),
      mask_options_{parse_mask_mode(cfg.mask_mode), cfg.alpha, cfg.mask_area_cap},
      dist_(effective_numbers(train.histogram())),
      sampler_(dist_, train) {}

AssembledBatch BatchAssembler::assemble(std::span<const std::int64_t> sources, bool with_targets, bool gate,
                                        TrainStreams& streams) const {
  if (sources.empty()) throw ContractViolation("a batch needs at least one source");
  const std::size_t V = with_targets ? 5 : 2;
  std::vector<std::vector<torch::Tensor>> views(V);
  std::vector<std::int64_t> y;
  std::vector<std::int64_t> y_tilde;
  std::vector<double> area;
  AssembledBatch out;
  for (auto idx : sources) {
    const auto image = train_.images[idx];
    y.push_back(train_.labels.at(static_cast<std::size_t>(idx)));
    views[0].push_back(augmenter_(image, streams.augment));
    views[1].push_back(augmenter_(image, streams.augment));
    if (!with_targets) continue;
    const auto draw = sampler_.sample(streams.sampler);
    const auto target = train_.images[draw.index];
    y_tilde.push_back(draw.label);
    views[2].push_back(augmenter_(target, streams.augment));
    views[3].push_back(augmenter_(target, streams.augment));
    auto third = augmenter_(image, streams.augment);
    if (gate) {
      auto masked = mask_image(third, mask_options_, fill_, streams.masking);
      views[4].push_back(masked.image);
      area.push_back(masked.spec.area_fraction);
      ++out.masked_sources;
      if (masked.used_center_fallback) ++out.center_fallbacks;
    } else {
      views[4].push_back(third);
      area.push_back(0.0);
    }
  }
  std::vector<torch::Tensor> stacked;
  for (auto& v : views) stacked.push_back(stats_.normalize(torch::stack(v)));
  out.batch = ViewBatch::from_views(stacked, labels_tensor(y), with_targets ? labels_tensor(y_tilde) : torch::Tensor(),
                                    with_targets ? torch::tensor(area, torch::kFloat64) : torch::Tensor());
  return out;
}

Trainer::Trainer(TrainConfig cfg, const LabeledImages& train)
    : cfg_(std::move(cfg)),
      train_(train),
      hist_(train.histogram()),
      model_(make_model({parse_backbone(cfg_.backbone), train.num_classes, train.channels(), cfg_.projection_dim},
                        derive_seed(cfg_.seed, "model-init"))),
      streams_(TrainStreams::from_seed(cfg_.seed)),
      assembler_(train, cfg_, ChannelStats::fit(train)) {
  cfg_.validate();
  optimizer_ = std::make_unique<torch::optim::SGD>(
      model_->parameters(),
      torch::optim::SGDOptions(learning_rate(cfg_, 0)).momentum(cfg_.momentum).weight_decay(cfg_.weight_decay));
}

void Trainer::set_learning_rate(double lr) {
  for (auto& group : optimizer_->param_groups()) {
    static_cast<torch::optim::SGDOptions&>(group.options()).lr(lr);
  }
}

std::vector<std::int64_t> Trainer::epoch_order() {
  std::vector<std::int64_t> order(static_cast<std::size_t>(train_.size()));
  std::iota(order.begin(), order.end(), std::int64_t{0});
  std::shuffle(order.begin(), order.end(), streams_.data);
  return order;
}

StepResult Trainer::train_step(std::span<const std::int64_t> sources, int epoch) {
  StepResult r;
  r.five_view = smcl_phase(cfg_, epoch);
  r.gate = r.five_view && masking_gate(epoch, cfg_, streams_.gate);
  auto assembled = assembler_.assemble(sources, r.five_view, r.gate, streams_);
  const auto& batch = assembled.batch;
  r.sources = batch.batch_size();
  r.masked_sources = assembled.masked_sources;
  const auto drw = drw_for_epoch(cfg_, hist_, epoch);

  model_->train();
  auto out = forward(model_, batch);
  if (!torch::isfinite(out.logits).all().item<bool>() || !torch::isfinite(out.features).all().item<bool>()) {
    throw NonFiniteLoss("non-finite model outputs");
  }
  const auto B = batch.batch_size();
  const auto K = out.logits.size(1);
  const auto d = out.features.size(1);
  auto logits = out.logits.view({batch.num_views(), B, K});
  auto features = out.features.view({batch.num_views(), B, d});
  const auto& y = batch.source_labels;

  auto contrastive = [&](SupConStats* stats) {
    if (r.five_view) return mixed_supcon(features, y, batch.target_labels, batch.area, cfg_.tau, stats);
    return supcon(out.features, torch::cat({y, y}), torch::ones({2 * B}, torch::kBool), cfg_.tau, stats);
  };

  torch::Tensor mce;
  if (r.five_view) {
    auto src = torch::stack({logits[0], logits[1], logits[4]});
    auto tgt = torch::stack({logits[2], logits[3], logits[4]});
    mce = mixed_cross_entropy(src, tgt, y, batch.target_labels, batch.area, drw, cfg_.strict_mixed_ce);
  } else {
    mce = multi_view_cross_entropy(logits, y, drw);
  }
  SupConStats stats;
  torch::Tensor msc;
  if (cfg_.mu > 0.0) {
    msc = contrastive(&stats);
  } else {
    torch::NoGradGuard guard;
    msc = contrastive(&stats);
  }
  r.anchors_without_positives = stats.anchors_without_positives;
  r.loss = combined(mce, msc, cfg_.lambda, cfg_.mu, cfg_.tau);

  {
    torch::NoGradGuard guard;
    r.correct = logits[0].argmax(1).eq(y).sum().item<std::int64_t>();
  }
  optimizer_->zero_grad();
  r.loss.total.backward();
  optimizer_->step();
  return r;
}

void Trainer::save(const fs::path& path, int epochs_done) const {
  CheckpointMeta meta;
  meta.architecture = model_->architecture_id();
  meta.options = model_->options();
  meta.config_fingerprint = cfg_.fingerprint();
  meta.epoch = epochs_done;
  meta.extra = {{"config", cfg_.to_json()},
                {"streams", streams_.to_json()},
                {"channel_mean", assembler_.stats().mean},
                {"channel_std", assembler_.stats().stddev},
                {"train_histogram", hist_.to_json()}};

  std::ostringstream bytes;
  torch::serialize::OutputArchive archive;
  optimizer_->save(archive);
  archive.save_to(bytes);
  const auto blob = bytes.str();
  auto state = torch::empty({static_cast<std::int64_t>(blob.size())}, torch::kUInt8);
  std::copy(blob.begin(), blob.end(), reinterpret_cast<char*>(state.data_ptr<std::uint8_t>()));
  auto model = model_;
  save_checkpoint(path, model, meta, {{"optim/state", state}});
}

int Trainer::restore(const fs::path& path) {
  const auto ck = read_checkpoint(path);
  if (ck.meta.config_fingerprint != cfg_.fingerprint()) {
    throw ConfigError("checkpoint " + path.string() + " was written under a different config");
  }
  restore_model(model_, ck);
  streams_ = TrainStreams::from_json(ck.meta.extra.at("streams"));
  if (const auto* state = ck.find("optim/state")) {
    auto contiguous = state->contiguous();
    std::string blob(reinterpret_cast<const char*>(contiguous.data_ptr<std::uint8_t>()),
                     static_cast<std::size_t>(contiguous.numel()));
    std::istringstream in(blob);
    torch::serialize::InputArchive archive;
    archive.load_from(in);
    optimizer_->load(archive);
  }
  return ck.meta.epoch;
}

ChannelStats stats_from_checkpoint(const nlohmann::json& extra) {
  return {extra.at("channel_mean").get<std::vector<float>>(), extra.at("channel_std").get<std::vector<float>>()};
}

namespace {

nlohmann::json eval_summary(const EvalReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"overall", r.overall_acc}, {"many", opt(r.many_acc)}, {"med", opt(r.med_acc)}, {"few", opt(r.few_acc)}};
}

// Drops every row belonging to epochs >= `keep_before`.
void truncate_metrics(const fs::path& path, int keep_before) {
  if (!fs::exists(path)) return;
  std::vector<std::string> kept;
  {
    std::ifstream in(path);
    for (std::string line; std::getline(in, line);) {
      if (line.empty()) continue;
      const auto row = nlohmann::json::parse(line);
      if (row.at("epoch").get<int>() < keep_before) kept.push_back(line);
    }
  }
  std::ofstream out(path, std::ios::trunc);
  for (const auto& line : kept) out << line << '\n';
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const LabeledImages& train_data, const TrainOptions& options) {
  cfg.validate();
  if (train_data.size() == 0) throw DataError("training set is empty");
  fs::create_directories(options.run_dir);
  TrainResult result;
  result.checkpoint = options.run_dir / "checkpoint.smcl";
  result.metrics = options.run_dir / "metrics.jsonl";

  Trainer trainer(cfg, train_data);
  int start_epoch = 0;
  if (options.resume && fs::exists(result.checkpoint)) {
    start_epoch = trainer.restore(result.checkpoint);
    truncate_metrics(result.metrics, start_epoch);
  } else {
    std::ofstream(result.metrics, std::ios::trunc);
    trainer.save(result.checkpoint, 0);
  }
  std::ofstream log(result.metrics, std::ios::app);
  result.stats = trainer.assembler().stats();
  result.train_histogram = trainer.histogram();
  result.epochs_completed = start_epoch;

  const auto B = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const double lr = learning_rate(cfg, epoch);
    trainer.set_learning_rate(lr);
    const auto order = trainer.epoch_order();
    double sum_total = 0.0, sum_mce = 0.0, sum_msc = 0.0;
    std::int64_t correct = 0, seen = 0, masked = 0, no_positive = 0;
    int steps = 0, gated_steps = 0;
    try {
      for (std::size_t start = 0; start < order.size(); start += B) {
        const auto n = std::min(B, order.size() - start);
        const auto step = trainer.train_step(std::span(order).subspan(start, n), epoch);
        sum_total += step.loss.total_value;
        sum_mce += step.loss.mce;
        sum_msc += step.loss.msc;
        correct += step.correct;
        seen += step.sources;
        masked += step.masked_sources;
        no_positive += step.anchors_without_positives;
        gated_steps += step.gate ? 1 : 0;
        if (cfg.log_steps) {
          log << nlohmann::json{{"kind", "step"},      {"epoch", epoch},           {"step", steps},
                                {"lr", lr},            {"loss", step.loss.total_value}, {"mce", step.loss.mce},
                                {"msc", step.loss.msc}, {"gate", step.gate}}
                     .dump()
              << '\n';
        }
        ++steps;
      }
    } catch (const NonFiniteLoss& e) {
      log.flush();
      result.aborted = true;
      result.abort_reason = "epoch " + std::to_string(epoch) + ": " + e.what();
      break;
    }

    nlohmann::json row = {{"kind", "epoch"},
                          {"epoch", epoch},
                          {"lr", lr},
                          {"drw_active", cfg.use_drw && epoch >= cfg.drw_start_epoch},
                          {"smcl_phase", smcl_phase(cfg, epoch)},
                          {"steps", steps},
                          {"gated_steps", gated_steps},
                          {"masked_sources", masked},
                          {"anchors_without_positives", no_positive},
                          {"loss", sum_total / steps},
                          {"mce", sum_mce / steps},
                          {"msc", sum_msc / steps},
                          {"train_acc", 100.0 * static_cast<double>(correct) / static_cast<double>(seen)}};
    const bool last = epoch + 1 == cfg.epochs;
    const bool eval_now = options.test != nullptr && (last || (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0));
    if (eval_now) {
      auto report = evaluate(trainer.model(), *options.test, result.stats, result.train_histogram);
      row["eval"] = eval_summary(report);
      if (last) result.final_eval = std::move(report);
    }
    log << row.dump() << '\n';
    log.flush();
    result.epoch_rows.push_back(row);
    result.epochs_completed = epoch + 1;
    if (last || (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0)) {
      trainer.save(result.checkpoint, epoch + 1);
    }
    if (options.on_epoch) options.on_epoch(row);
  }
  result.model = trainer.model();
  if (!result.final_eval && !result.aborted && options.test != nullptr && cfg.epochs == start_epoch) {
    result.final_eval = evaluate(result.model, *options.test, result.stats, result.train_histogram);
  }
  return result;
}

}  // namespace smcl
