#include "smcl/losses.hpp"

#include <cmath>
#include <numeric>

#include "smcl/error.hpp"

namespace smcl {

DrwWeights DrwWeights::inactive(int num_classes) {
  return {std::vector<double>(static_cast<std::size_t>(num_classes), 1.0), false};
}

torch::Tensor DrwWeights::tensor(torch::ScalarType dtype) const {
  return torch::tensor(weights, torch::kFloat64).to(dtype);
}

DrwWeights drw_weights(const ClassHistogram& hist, double beta_w) {
  if (!(beta_w >= 0.0 && beta_w < 1.0)) {
    throw InvalidParameter("DRW beta must lie in [0, 1), got " + std::to_string(beta_w));
  }
  DrwWeights out;
  out.active = true;
  for (auto n : hist.counts()) {
    const double one_minus_pow = beta_w == 0.0 ? 1.0 : -std::expm1(static_cast<double>(n) * std::log(beta_w));
    out.weights.push_back((1.0 - beta_w) / one_minus_pow);
  }
  const double mean = std::accumulate(out.weights.begin(), out.weights.end(), 0.0) / out.weights.size();
  for (auto& w : out.weights) w /= mean;
  return out;
}

torch::Tensor cross_entropy_rows(const torch::Tensor& logits, const torch::Tensor& labels,
                                 const torch::Tensor& class_weights) {
  if (logits.dim() != 2 || labels.dim() != 1 || labels.size(0) != logits.size(0)) {
    throw ContractViolation("cross_entropy_rows expects [R, K] logits and [R] labels");
  }
  auto opts = torch::nn::functional::CrossEntropyFuncOptions().reduction(torch::kNone);
  if (class_weights.defined()) opts.weight(class_weights.to(logits.scalar_type()));
  return torch::nn::functional::cross_entropy(logits, labels, opts);
}

namespace {

void check_area(const torch::Tensor& area, std::int64_t batch) {
  if (area.dim() != 1 || area.size(0) != batch) throw ContractViolation("need one masked-area fraction per source");
  const double lo = area.min().item<double>();
  const double hi = area.max().item<double>();
  if (lo < 0.0 || hi > 0.9 + 1e-12) {
    throw ContractViolation("masked-area fraction must lie in [0, 0.9], got range [" + std::to_string(lo) + ", " +
                            std::to_string(hi) + "]");
  }
}

torch::Tensor weights_or_none(const DrwWeights& drw) { return drw.active ? drw.tensor(torch::kFloat64) : torch::Tensor(); }

// log( exp(s_zk) / sum_{j != z} exp(s_zj) ) for all pairs, s = F F^T / tau.
torch::Tensor pairwise_log_prob(const torch::Tensor& features, double tau) {
  const auto M = features.size(0);
  auto sim = torch::matmul(features, features.t()) / tau;
  auto not_self = 1.0 - torch::eye(M, sim.options());
  auto row_max = std::get<0>(sim.max(1, /*keepdim=*/true)).detach();
  auto log_denom = ((sim - row_max).exp() * not_self).sum(1, /*keepdim=*/true).log() + row_max;
  return sim - log_denom;
}

// Mean of -log_prob over each row's positives; `has_positive` is [M] bool.
torch::Tensor anchor_losses(const torch::Tensor& log_prob, const torch::Tensor& labels, torch::Tensor& has_positive) {
  const auto M = log_prob.size(0);
  auto same = labels.unsqueeze(0).eq(labels.unsqueeze(1));
  auto positives = same.logical_and(torch::eye(M, torch::kBool).logical_not()).to(log_prob.scalar_type());
  auto n_pos = positives.sum(1);
  has_positive = n_pos.gt(0);
  return -(positives * log_prob).sum(1) / n_pos.clamp_min(1.0);
}

}  // namespace

torch::Tensor mixed_cross_entropy(const torch::Tensor& source_logits, const torch::Tensor& target_logits,
                                  const torch::Tensor& y, const torch::Tensor& y_tilde, const torch::Tensor& area,
                                  const DrwWeights& drw, bool strict) {
  if (source_logits.dim() != 3 || source_logits.size(0) != 3 || source_logits.sizes() != target_logits.sizes()) {
    throw ContractViolation("mixed cross-entropy expects [3, B, K] source and target logits");
  }
  const auto B = source_logits.size(1);
  const auto K = source_logits.size(2);
  check_area(area, B);
  const auto a = area.to(source_logits.scalar_type());
  const auto w = weights_or_none(drw);

  if (strict) {
    auto ce_source = cross_entropy_rows(source_logits.reshape({3 * B, K}), y.repeat({3}), w).view({3, B}).mean(0);
    auto ce_target = cross_entropy_rows(target_logits.reshape({3 * B, K}), y_tilde.repeat({3}), w).view({3, B}).mean(0);
    return ((1.0 - a) * ce_source + a * ce_target).mean();
  }
  auto ce_clean = cross_entropy_rows(source_logits.narrow(0, 0, 2).reshape({2 * B, K}), y.repeat({2}), w).view({2, B}).sum(0);
  auto masked = source_logits[2];
  auto ce_masked = (1.0 - a) * cross_entropy_rows(masked, y, w) + a * cross_entropy_rows(masked, y_tilde, w);
  return ((ce_clean + ce_masked) / 3.0).mean();
}

torch::Tensor multi_view_cross_entropy(const torch::Tensor& logits, const torch::Tensor& y, const DrwWeights& drw) {
  if (logits.dim() != 3) throw ContractViolation("multi-view cross-entropy expects [V, B, K] logits");
  const auto V = logits.size(0);
  const auto B = logits.size(1);
  const auto flat = logits.reshape({V * B, logits.size(2)});
  if (!drw.active) return torch::nn::functional::cross_entropy(flat, y.repeat({V}));
  return cross_entropy_rows(flat, y.repeat({V}), weights_or_none(drw)).mean();
}

void check_unit_rows(const torch::Tensor& features, double tolerance) {
  const double worst = (features.detach().norm(2, 1) - 1.0).abs().max().item<double>();
  if (!(worst <= tolerance)) {
    throw ContractViolation("contrastive features must be unit-norm rows (max deviation " + std::to_string(worst) + ")");
  }
}

torch::Tensor supcon_per_anchor(const torch::Tensor& features, const torch::Tensor& labels,
                                const torch::Tensor& anchor_mask, double tau, torch::Tensor* has_positive) {
  if (features.dim() != 2 || labels.dim() != 1 || labels.size(0) != features.size(0) ||
      anchor_mask.size(0) != features.size(0)) {
    throw ContractViolation("supcon expects [M, d] features with [M] labels and anchor mask");
  }
  if (features.size(0) < 2) throw DegenerateBatch("supervised contrastive loss needs at least 2 features");
  if (!(tau > 0.0)) throw InvalidParameter("temperature must be > 0");
  torch::Tensor has_pos;
  auto losses = anchor_losses(pairwise_log_prob(features, tau), labels, has_pos);
  const auto anchors = anchor_mask.to(torch::kBool);
  if (has_positive != nullptr) *has_positive = has_pos.logical_and(anchors);
  return losses * anchors.to(losses.scalar_type());
}

torch::Tensor supcon(const torch::Tensor& features, const torch::Tensor& labels, const torch::Tensor& anchor_mask,
                     double tau, SupConStats* stats) {
  if (features.dim() == 2 && features.size(0) < 2) {
    throw DegenerateBatch("supervised contrastive loss needs at least 2 features");
  }
  check_unit_rows(features);
  torch::Tensor valid;
  auto per_anchor = supcon_per_anchor(features, labels, anchor_mask, tau, &valid);
  const auto anchors = anchor_mask.to(torch::kBool);
  if (stats != nullptr) stats->anchors_without_positives += anchors.logical_and(valid.logical_not()).sum().item<std::int64_t>();
  const auto n_valid = valid.sum().item<std::int64_t>();
  if (n_valid == 0) return (features * 0.0).sum();
  return (per_anchor * valid.to(per_anchor.scalar_type())).sum() / static_cast<double>(n_valid);
}

torch::Tensor mixed_supcon(const torch::Tensor& features, const torch::Tensor& y, const torch::Tensor& y_tilde,
                           const torch::Tensor& area, double tau, SupConStats* stats) {
  if (features.dim() != 3 || features.size(0) != 5) {
    throw ContractViolation("mixed supcon expects [5, B, d] features");
  }
  if (!(tau > 0.0)) throw InvalidParameter("temperature must be > 0");
  const auto B = features.size(1);
  check_area(area, B);
  auto pool = features.reshape({5 * B, features.size(2)});
  check_unit_rows(pool);

  const auto labels_source = torch::cat({y, y, y_tilde, y_tilde, y});
  const auto labels_target = torch::cat({y, y, y_tilde, y_tilde, y_tilde});
  const auto log_prob = pairwise_log_prob(pool, tau);

  auto term = [&](const torch::Tensor& labels, std::initializer_list<std::int64_t> anchor_views) {
    torch::Tensor has_pos;
    auto per_row = anchor_losses(log_prob, labels, has_pos).view({5, B});
    auto valid = has_pos.view({5, B}).to(per_row.scalar_type());
    auto idx = torch::tensor(std::vector<std::int64_t>(anchor_views), torch::kInt64);
    auto sel_loss = per_row.index_select(0, idx);
    auto sel_valid = valid.index_select(0, idx);
    if (stats != nullptr) {
      stats->anchors_without_positives += static_cast<std::int64_t>(sel_valid.numel()) -
                                          static_cast<std::int64_t>(sel_valid.sum().item<double>());
    }
    return (sel_loss * sel_valid).sum(0) / sel_valid.sum(0).clamp_min(1.0);
  };
  const auto a = area.to(features.scalar_type());
  auto term_source = term(labels_source, {0, 1, 4});
  auto term_target = term(labels_target, {2, 3, 4});
  return ((1.0 - a) * term_source + a * term_target).mean();
}

LossBreakdown combined(const torch::Tensor& mce, const torch::Tensor& msc, double lambda, double mu, double tau) {
  if (!(lambda >= 0.0) || !(mu >= 0.0)) throw InvalidParameter("loss weights lambda and mu must be >= 0");
  LossBreakdown out;
  out.lambda = lambda;
  out.mu = mu;
  out.tau = tau;
  out.mce = mce.item<double>();
  out.msc = msc.defined() ? msc.item<double>() : 0.0;
  out.total = msc.defined() ? lambda * mce + mu * msc : lambda * mce;
  out.total_value = out.total.item<double>();
  if (!std::isfinite(out.mce) || !std::isfinite(out.msc) || !std::isfinite(out.total_value)) {
    throw NonFiniteLoss("non-finite loss (mce=" + std::to_string(out.mce) + ", msc=" + std::to_string(out.msc) + ")");
  }
  return out;
}

}  // namespace smcl
