#include "criteria.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>

#include <torch/torch.h>

#include "generators.hpp"
#include "oracles.hpp"
#include "smcl/data.hpp"
#include "smcl/datasets.hpp"
#include "smcl/eval.hpp"
#include "smcl/losses.hpp"
#include "smcl/masking.hpp"
#include "smcl/trainer.hpp"
#include "stats.hpp"

namespace criteria {

namespace {

torch::Tensor to_tensor(const oracle::Matrix& m) {
  const auto rows = static_cast<std::int64_t>(m.size());
  const auto cols = static_cast<std::int64_t>(m.front().size());
  auto t = torch::empty({rows, cols}, torch::kFloat64);
  auto acc = t.accessor<double, 2>();
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t c = 0; c < cols; ++c) acc[r][c] = m[r][c];
  }
  return t;
}

torch::Tensor stack_views(const std::vector<oracle::Matrix>& views) {
  std::vector<torch::Tensor> ts;
  for (const auto& v : views) ts.push_back(to_tensor(v));
  return torch::stack(ts);
}

torch::Tensor labels_tensor(const std::vector<std::int64_t>& v) { return torch::tensor(v, torch::kInt64); }

double rel_err(double got, double want) { return std::fabs(got - want) / std::max(std::fabs(want), 1e-12); }

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c);
  return buf;
}

}  // namespace

Result loss_oracles(std::uint64_t seed) {
  gen::Engine g(seed);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto B = static_cast<std::size_t>(gen::integer(g, 1, 16));
    const int K = gen::integer(g, 2, 5);
    const auto d = static_cast<std::size_t>(gen::integer(g, 2, 8));
    const double tau = gen::real(g, 0.05, 1.0);
    const bool strict = gen::integer(g, 0, 1) == 1;
    const auto y = gen::labels(g, B, K);
    const auto yt = gen::labels(g, B, K);
    std::vector<double> area(B);
    for (auto& a : area) a = gen::area(g);
    std::vector<double> w;
    smcl::DrwWeights drw = smcl::DrwWeights::inactive(K);
    if (gen::integer(g, 0, 1) == 1) {
      std::vector<std::int64_t> h = gen::histogram(g, K, 500);
      drw = smcl::drw_weights(smcl::ClassHistogram(h), 0.9999);
      w = drw.weights;
    }

    std::vector<oracle::Matrix> src;
    std::vector<oracle::Matrix> tgt;
    for (int v = 0; v < 3; ++v) src.push_back(gen::logits(g, B, static_cast<std::size_t>(K)));
    for (int v = 0; v < 2; ++v) tgt.push_back(gen::logits(g, B, static_cast<std::size_t>(K)));
    tgt.push_back(src[2]);
    const double mce_want = oracle::mixed_cross_entropy(src, tgt, y, yt, area, w, strict);
    const double mce_got = smcl::mixed_cross_entropy(stack_views(src), stack_views(tgt), labels_tensor(y),
                                                     labels_tensor(yt), torch::tensor(area, torch::kFloat64), drw,
                                                     strict)
                               .item<double>();
    worst = std::max(worst, rel_err(mce_got, mce_want));

    std::vector<oracle::Matrix> views;
    for (int v = 0; v < 5; ++v) views.push_back(gen::unit_rows(g, B, d));
    const double msc_want = oracle::mixed_supcon(views, y, yt, area, tau);
    const double msc_got = smcl::mixed_supcon(stack_views(views), labels_tensor(y), labels_tensor(yt),
                                              torch::tensor(area, torch::kFloat64), tau)
                               .item<double>();
    worst = std::max(worst, rel_err(msc_got, msc_want));

    const auto M = std::max<std::size_t>(2, 2 * B);
    const auto pool = gen::unit_rows(g, M, d);
    const auto pool_labels = gen::labels(g, M, K);
    std::vector<bool> anchors(M);
    std::vector<std::int64_t> anchor_bits(M);
    for (std::size_t i = 0; i < M; ++i) {
      anchors[i] = gen::integer(g, 0, 3) != 0;
      anchor_bits[i] = anchors[i] ? 1 : 0;
    }
    const double sc_want = oracle::supcon(pool, pool_labels, anchors, tau);
    const double sc_got =
        smcl::supcon(to_tensor(pool), labels_tensor(pool_labels), labels_tensor(anchor_bits).to(torch::kBool), tau)
            .item<double>();
    worst = std::max(worst, rel_err(sc_got, sc_want));
  }
  return {worst <= 1e-5, fmt("max relative error %.3g over 100 batches (tol 1e-5)", worst)};
}

namespace {

struct ToyConfig {
  std::int64_t B, K, d, in, hidden;
  double tau, lambda, mu;
  bool strict;
  smcl::DrwWeights drw;
  torch::Tensor y, yt, area;
};

// Combined loss on given logits [5B, K] and raw projections [5B, d].
torch::Tensor loss_from_outputs(const ToyConfig& c, const torch::Tensor& logits, const torch::Tensor& raw) {
  auto l = logits.view({5, c.B, c.K});
  auto features = raw / raw.norm(2, 1, true);
  auto mce = smcl::mixed_cross_entropy(torch::stack({l[0], l[1], l[4]}), torch::stack({l[2], l[3], l[4]}), c.y, c.yt,
                                       c.area, c.drw, c.strict);
  auto msc = smcl::mixed_supcon(features.view({5, c.B, c.d}), c.y, c.yt, c.area, c.tau);
  return smcl::combined(mce, msc, c.lambda, c.mu, c.tau).total;
}

double grad_error(const std::function<torch::Tensor()>& f, torch::Tensor& x, const torch::Tensor& analytic) {
  const double h = 1e-4;
  auto flat = x.view({-1});
  auto numeric = torch::zeros_like(flat);
  torch::NoGradGuard guard;
  for (std::int64_t i = 0; i < flat.numel(); ++i) {
    const double orig = flat[i].item<double>();
    flat[i] = orig + h;
    const double up = f().item<double>();
    flat[i] = orig - h;
    const double down = f().item<double>();
    flat[i] = orig;
    numeric[i] = (up - down) / (2 * h);
  }
  const double denom = std::max(numeric.norm().item<double>(), 1e-8);
  return (analytic.reshape({-1}) - numeric).norm().item<double>() / denom;
}

}  // namespace

Result gradient_check(std::uint64_t seed) {
  gen::Engine g(seed);
  torch::manual_seed(static_cast<std::uint64_t>(seed));
  double worst = 0.0;
  bool seen[3] = {false, false, false};
  for (int trial = 0; trial < 20; ++trial) {
    ToyConfig c;
    c.B = gen::integer(g, 2, 5);
    c.K = gen::integer(g, 2, 5);
    c.d = gen::integer(g, 3, 6);
    c.in = gen::integer(g, 3, 6);
    c.hidden = gen::integer(g, 4, 8);
    c.tau = gen::real(g, 0.1, 1.0);
    c.lambda = gen::real(g, 0.2, 2.0);
    c.mu = gen::real(g, 0.0, 1.0);
    c.strict = trial % 2 == 0;
    c.y = labels_tensor(gen::labels(g, static_cast<std::size_t>(c.B), static_cast<int>(c.K)));
    c.yt = labels_tensor(gen::labels(g, static_cast<std::size_t>(c.B), static_cast<int>(c.K)));
    std::vector<double> area(static_cast<std::size_t>(c.B));
    for (std::size_t i = 0; i < area.size(); ++i) {
      area[i] = i < 3 ? std::vector<double>{0.0, 0.37, 0.9}[(i + static_cast<std::size_t>(trial)) % 3] : gen::area(g);
    }
    for (double a : area) {
      if (a == 0.0) seen[0] = true;
      if (a == 0.37) seen[1] = true;
      if (a == 0.9) seen[2] = true;
    }
    c.area = torch::tensor(area, torch::kFloat64);
    c.drw = trial % 3 == 0
                ? smcl::drw_weights(smcl::ClassHistogram(gen::histogram(g, static_cast<int>(c.K), 300)), 0.999)
                : smcl::DrwWeights::inactive(static_cast<int>(c.K));

    auto opts = torch::TensorOptions().dtype(torch::kFloat64);
    auto x = torch::randn({5 * c.B, c.in}, opts);
    auto w1 = torch::randn({c.in, c.hidden}, opts).requires_grad_(true);
    auto w2 = torch::randn({c.hidden, c.K}, opts).requires_grad_(true);
    auto w3 = torch::randn({c.hidden, c.d}, opts).requires_grad_(true);
    auto net_loss = [&] {
      auto h = torch::tanh(torch::matmul(x, w1));
      return loss_from_outputs(c, torch::matmul(h, w2), torch::matmul(h, w3));
    };

    auto h = torch::tanh(torch::matmul(x, w1));
    auto logits = torch::matmul(h, w2);
    auto raw = torch::matmul(h, w3);
    logits.retain_grad();
    raw.retain_grad();
    loss_from_outputs(c, logits, raw).backward();

    auto logits_leaf = logits.detach().clone();
    auto raw_leaf = raw.detach().clone();
    auto out_loss = [&] { return loss_from_outputs(c, logits_leaf, raw_leaf); };
    worst = std::max(worst, grad_error(out_loss, logits_leaf, logits.grad()));
    worst = std::max(worst, grad_error(out_loss, raw_leaf, raw.grad()));
    for (auto* p : {&w1, &w2, &w3}) {
      auto data = p->detach();
      worst = std::max(worst, grad_error(net_loss, data, p->grad()));
    }
  }
  const bool covered = seen[0] && seen[1] && seen[2];
  return {worst <= 1e-4 && covered,
          fmt("max relative gradient error %.3g over 20 configurations (tol 1e-4)", worst) +
              (covered ? "" : "; boundary areas not covered")};
}

namespace {

smcl::TargetSampler sampler_for(const std::vector<std::int64_t>& counts) {
  std::vector<std::vector<std::int64_t>> idx(counts.size());
  std::int64_t next = 0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    for (std::int64_t i = 0; i < counts[k]; ++i) idx[k].push_back(next++);
  }
  return smcl::TargetSampler(smcl::effective_numbers(smcl::ClassHistogram(counts)).probs, idx);
}

}  // namespace

Result sampler_statistics(std::uint64_t seed) {
  smcl::Rng rng(seed);
  const std::vector<double> derived = {0.98453428898302605, 0.015465711016973948};
  auto two = sampler_for({1, 100});
  std::vector<std::int64_t> hits(2, 0);
  constexpr int draws = 100000;
  for (int i = 0; i < draws; ++i) ++hits[static_cast<std::size_t>(two.sample(rng).label)];
  const double dev = std::max(std::fabs(hits[0] / static_cast<double>(draws) - derived[0]),
                              std::fabs(hits[1] / static_cast<double>(draws) - derived[1]));
  double min_p = 1.0;
  gen::Engine g(seed + 1);
  for (int t = 0; t < 10; ++t) {
    const auto counts = gen::histogram(g, gen::integer(g, 2, 20), 500);
    auto s = sampler_for(counts);
    std::vector<std::int64_t> obs(counts.size(), 0);
    for (int i = 0; i < 20000; ++i) ++obs[static_cast<std::size_t>(s.sample(rng).label)];
    min_p = std::min(min_p, teststats::chi_square_pvalue(obs, s.probs()));
  }
  return {dev <= 0.005 && min_p >= 0.01,
          fmt("n=[1,100]: p_hat=[%.4f, %.4f]", hits[0] / static_cast<double>(draws), hits[1] / static_cast<double>(draws)) +
              fmt(", max abs dev %.4f (tol 0.005); min chi-square p %.3g over 10 histograms (>= 0.01)", dev, min_p)};
}

Result mask_area(std::uint64_t seed) {
  smcl::Rng rng(seed);
  gen::Engine g(seed);
  int mismatches = 0;
  int over_cap = 0;
  for (int t = 0; t < 10000; ++t) {
    const int H = gen::integer(g, 4, 48);
    const int W = gen::integer(g, 4, 48);
    const int C = gen::integer(g, 1, 3);
    const smcl::Pixel center{gen::integer(g, 0, H - 1), gen::integer(g, 0, W - 1)};
    smcl::MaskOptions opts;
    opts.mode = static_cast<smcl::MaskMode>(gen::integer(g, 0, 2));
    auto spec = smcl::make_mask(H, W, center, opts, [&] { return gen::real(g, 0.0, 1.0); }, rng);
    auto image = torch::rand({C, H, W}, torch::kFloat32);
    const std::vector<float> fill(static_cast<std::size_t>(C), -1.0f);
    auto masked = smcl::apply_mask(image, spec, fill);
    const auto changed = masked.ne(image).any(0).sum().item<std::int64_t>();
    const double expected = spec.area_fraction * H * W;
    if (std::fabs(static_cast<double>(changed) - expected) > 1e-9) ++mismatches;
    if (spec.area_fraction > opts.area_cap) ++over_cap;
  }
  std::vector<double> xs(10000);
  for (auto& x : xs) x = smcl::sample_symmetric_beta(1.0, rng);
  const double p = teststats::ks_uniform_pvalue(xs);
  return {mismatches == 0 && over_cap == 0 && p >= 0.01,
          fmt("%g/10000 masks with changed pixels != A*H*W, %g above cap; Beta(1,1) KS p = %.3g (>= 0.01)", mismatches,
              over_cap, p)};
}

Result dataset_profile() {
  const smcl::LongTailSpec spec{100, 100.0, 500};
  const auto counts = smcl::longtail_counts(spec);
  // A tiny 1x1 base set with exactly 500 images per class.
  smcl::LabeledImages base;
  base.num_classes = 100;
  base.images = torch::zeros({100 * 500, 1, 1, 1}, torch::kUInt8);
  for (int k = 0; k < 100; ++k) {
    for (int i = 0; i < 500; ++i) base.labels.push_back(k);
  }
  const auto lt = smcl::build_longtail(base, spec, 0);
  const auto& n = lt.histogram.counts();
  bool monotone = true;
  for (std::size_t k = 1; k < n.size(); ++k) monotone = monotone && n[k] <= n[k - 1];
  const bool pass = n.front() == 500 && n.back() == 5 && monotone && lt.histogram.imbalance_ratio() == 100.0 &&
                    n == counts && lt.histogram.total() == 10899;
  std::ostringstream os;
  os << "n_0=" << n.front() << " n_99=" << n.back() << " non-increasing=" << (monotone ? "yes" : "no")
     << " rho=" << lt.histogram.imbalance_ratio() << " N=" << lt.histogram.total();
  return {pass, os.str()};
}

Result reduction_equivalence(std::uint64_t seed, int steps) {
  torch::set_num_threads(1);
  const auto data = smcl::make_synthetic({5, 40, 16, 0.08}, seed);
  smcl::TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.lr_milestones = {};
  cfg.use_drw = false;
  cfg.drw_start_epoch = 0;
  cfg.mask_start_epoch = 0;
  cfg.mask_probability = 0.0;
  cfg.mu = 0.0;
  cfg.lambda = 1.0;
  cfg.backbone = "small_cnn";
  cfg.augment_policy = "crop_flip";
  cfg.seed = seed;
  cfg.validate();

  smcl::Trainer trainer(cfg, data);

  auto model = smcl::make_model({smcl::BackboneKind::small_cnn, 5, 3, cfg.projection_dim},
                                smcl::derive_seed(seed, "model-init"));
  auto streams = smcl::TrainStreams::from_seed(seed);
  smcl::BatchAssembler assembler(data, cfg, smcl::ChannelStats::fit(data));
  torch::optim::SGD sgd(model->parameters(),
                        torch::optim::SGDOptions(cfg.lr_initial).momentum(cfg.momentum).weight_decay(cfg.weight_decay));

  double worst = 0.0;
  int step = 0;
  for (int epoch = 0; step < steps; ++epoch) {
    const auto order = trainer.epoch_order();
    std::vector<std::int64_t> ref_order(order.size());
    std::iota(ref_order.begin(), ref_order.end(), std::int64_t{0});
    std::shuffle(ref_order.begin(), ref_order.end(), streams.data);
    if (ref_order != order) return {false, "epoch orders diverge"};
    for (std::size_t start = 0; start < order.size() && step < steps; start += 16, ++step) {
      const auto n = std::min<std::size_t>(16, order.size() - start);
      const std::span<const std::int64_t> sources(order.data() + start, n);
      const double got = trainer.train_step(sources, epoch).loss.total_value;

      auto batch = assembler.assemble(sources, false, false, streams).batch;
      model->train();
      auto images = batch.views.reshape({2 * batch.batch_size(), batch.views.size(2), batch.views.size(3),
                                         batch.views.size(4)});
      auto loss = torch::nn::functional::cross_entropy(model->forward(images),
                                                       torch::cat({batch.source_labels, batch.source_labels}));
      sgd.zero_grad();
      loss.backward();
      sgd.step();
      worst = std::max(worst, std::fabs(got - loss.item<double>()));
    }
  }
  return {worst <= 1e-6, fmt("max |loss - reference| %.3g over %g steps (tol 1e-6)", worst, steps)};
}

Result evaluation_protocol() {
  const smcl::ClassHistogram train_hist({500, 150, 100, 20, 19});
  const std::vector<std::vector<std::int64_t>> confusion = {
      {8, 1, 1, 0, 0}, {2, 6, 1, 1, 0}, {0, 1, 7, 1, 1}, {1, 1, 1, 5, 2}, {2, 2, 2, 1, 3}};
  const auto r = smcl::report_from_confusion(confusion, train_hist);
  const std::vector<double> per_class = {80.0, 60.0, 70.0, 50.0, 30.0};
  bool pass = r.overall_acc == 58.0 && r.many_acc == 70.0 && r.med_acc == 60.0 && r.few_acc == 30.0;
  for (std::size_t k = 0; k < per_class.size(); ++k) pass = pass && r.per_class_acc[k] == per_class[k];
  int members[3] = {0, 0, 0};
  for (auto grp : r.class_group) ++members[static_cast<int>(grp)];
  const bool partition = members[0] == 2 && members[1] == 2 && members[2] == 1 &&
                         members[0] + members[1] + members[2] == train_hist.num_classes();
  std::ostringstream os;
  os << "overall " << r.overall_acc << ", many " << r.many_acc.value_or(-1) << ", med " << r.med_acc.value_or(-1)
     << ", few " << r.few_acc.value_or(-1) << "; members " << members[0] << "/" << members[1] << "/" << members[2];
  return {pass && partition, os.str()};
}

}  // namespace criteria
