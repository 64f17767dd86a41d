#pragma once

#include <cstdint>
#include <vector>

#include <torch/torch.h>

#include "smcl/data.hpp"

namespace smcl {

// Deferred re-weighting coefficients. Inactive weights are all ones; active
// ones follow the class-balanced rule w_k ~ (1 - b) / (1 - b^n_k),
// rescaled to mean 1 over classes.
struct DrwWeights {
  std::vector<double> weights;
  bool active = false;

  static DrwWeights inactive(int num_classes);
  torch::Tensor tensor(torch::ScalarType dtype = torch::kFloat32) const;
};

DrwWeights drw_weights(const ClassHistogram& hist, double beta_w);

// Per-row cross-entropy, -w_y * log softmax(logits)_y. `class_weights` may
// be undefined (unit weights).
torch::Tensor cross_entropy_rows(const torch::Tensor& logits, const torch::Tensor& labels,
                                 const torch::Tensor& class_weights = {});

// Mixed cross-entropy over one batch of B sources.
//   source_logits: [3, B, K] = (o1, o2, o_m), scored against y
//   target_logits: [3, B, K] = (o~1, o~2, o_m), scored against y~
// strict (default): per source, (1-A) * mean_3 CE(o, y) + A * mean_3 CE(o~, y~).
// non-strict: the A split applies to the masked view only,
//   (CE(o1,y) + CE(o2,y) + (1-A) CE(o_m,y) + A CE(o_m,y~)) / 3.
// Both forms are averaged over the batch; A must lie in [0, 0.9].
torch::Tensor mixed_cross_entropy(const torch::Tensor& source_logits, const torch::Tensor& target_logits,
                                  const torch::Tensor& y, const torch::Tensor& y_tilde, const torch::Tensor& area,
                                  const DrwWeights& drw, bool strict = true);

// Plain multi-view cross-entropy ([V, B, K] against y, mean over rows).
torch::Tensor multi_view_cross_entropy(const torch::Tensor& logits, const torch::Tensor& y, const DrwWeights& drw);

struct SupConStats {
  std::int64_t anchors_without_positives = 0;
};

// Supervised contrastive loss per anchor over the contrast pool `features`
// ([M, d], unit rows): for anchor z,
//   -1/|P(z)| * sum_{p in P(z)} log( exp(f_z.f_p/tau) / sum_{k != z} exp(f_z.f_k/tau) )
// where P(z) = same-label rows other than z. Returns [M] losses and writes
// the has-positive mask; rows that are not anchors are zero.
torch::Tensor supcon_per_anchor(const torch::Tensor& features, const torch::Tensor& labels,
                                const torch::Tensor& anchor_mask, double tau, torch::Tensor* has_positive);

// Mean of supcon_per_anchor over anchors that have at least one positive;
// anchors without positives are counted in `stats` and excluded. Returns 0
// when no anchor has a positive. Throws DegenerateBatch when M < 2 and
// ContractViolation for non-unit rows.
torch::Tensor supcon(const torch::Tensor& features, const torch::Tensor& labels, const torch::Tensor& anchor_mask,
                     double tau, SupConStats* stats = nullptr);

// Mixed supervised contrastive loss over a five-view batch.
//   features: [5, B, d] in ViewBatch order (f1, f2, f~1, f~2, f_m)
// The contrast pool is all 5B rows in both terms. Term 1 anchors on
// (f1, f2, f_m) with f_m labelled y; term 2 anchors on (f~1, f~2, f_m) with
// f_m labelled y~. Per source, (1-A) * term1 + A * term2 (each term the mean
// over that source's anchors), averaged over the batch.
torch::Tensor mixed_supcon(const torch::Tensor& features, const torch::Tensor& y, const torch::Tensor& y_tilde,
                           const torch::Tensor& area, double tau, SupConStats* stats = nullptr);

struct LossBreakdown {
  torch::Tensor total;  // differentiable
  double mce = 0.0;
  double msc = 0.0;
  double total_value = 0.0;
  double lambda = 1.0;
  double mu = 0.0;
  double tau = 0.1;
};

// total = lambda * mce + mu * msc. Throws NonFiniteLoss when any part is
// NaN/Inf and InvalidParameter for negative weights.
LossBreakdown combined(const torch::Tensor& mce, const torch::Tensor& msc, double lambda, double mu,
                       double tau = 0.1);

// Throws ContractViolation unless every row of `features` has unit L2 norm.
void check_unit_rows(const torch::Tensor& features, double tolerance = 1e-4);

}  // namespace smcl
