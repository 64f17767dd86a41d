#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "smcl/rng.hpp"

namespace smcl {

// Per-class sample counts n_k of a labeled dataset. Every class holds at
// least one sample, so the imbalance ratio is always finite.
class ClassHistogram {
 public:
  ClassHistogram() = default;
  explicit ClassHistogram(std::vector<std::int64_t> counts);

  static ClassHistogram from_labels(std::span<const std::int64_t> labels, int num_classes);

  int num_classes() const { return static_cast<int>(counts_.size()); }
  std::int64_t total() const { return total_; }
  std::int64_t count(int k) const { return counts_.at(static_cast<std::size_t>(k)); }
  const std::vector<std::int64_t>& counts() const { return counts_; }

  // max_k n_k / min_k n_k
  double imbalance_ratio() const;

  // {"0": n_0, "1": n_1, ...}
  nlohmann::json to_json() const;
  static ClassHistogram from_json(const nlohmann::json& j);

  bool operator==(const ClassHistogram&) const = default;

 private:
  std::vector<std::int64_t> counts_;
  std::int64_t total_ = 0;
};

enum class LongTailProfile { exponential };

struct LongTailSpec {
  int num_classes = 0;
  double rho = 1.0;          // n_0 / n_{K-1}
  std::int64_t n_max = 0;    // size of class 0
  LongTailProfile profile = LongTailProfile::exponential;

  // Throws InvalidSpec unless rho >= 1, n_max >= rho and num_classes >= 1.
  void validate() const;
};

// n_k = round_half_up(n_max * rho^(-k/(K-1))), floored at 1.
std::vector<std::int64_t> longtail_counts(const LongTailSpec& spec);

// In-memory labeled image set. Images are uint8, laid out [N, C, H, W].
struct LabeledImages {
  torch::Tensor images;
  std::vector<std::int64_t> labels;
  int num_classes = 0;
  std::vector<std::string> class_names;

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
  int channels() const { return static_cast<int>(images.size(1)); }
  int height() const { return static_cast<int>(images.size(2)); }
  int width() const { return static_cast<int>(images.size(3)); }

  ClassHistogram histogram() const;
  LabeledImages subset(std::span<const std::int64_t> indices) const;
  std::vector<std::vector<std::int64_t>> class_indices() const;
  std::string fingerprint() const;
};

struct LongTailSubset {
  LabeledImages data;
  ClassHistogram histogram;
  std::vector<std::int64_t> source_indices;  // ascending, into the base set
};

// Keeps n_k samples of class k, chosen uniformly without replacement under
// `seed`. Base order is preserved in the result.
LongTailSubset build_longtail(const LabeledImages& base, const LongTailSpec& spec,
                              std::uint64_t seed);

// The minor-weighted target distribution: beta = (N-1)/N,
// E_k = (1 - beta^n_k) / (1 - beta), p_k proportional to 1/E_k.
struct MinorWeightedDistribution {
  double beta = 0.0;
  std::vector<double> effective;
  std::vector<double> probs;
};

MinorWeightedDistribution effective_numbers(const ClassHistogram& hist);

struct TargetDraw {
  std::int64_t index = 0;  // into the indexed dataset
  std::int64_t label = 0;
};

// Draws a class with probability p_k, then an instance uniformly within it
// (with replacement across calls).
class TargetSampler {
 public:
  TargetSampler(std::vector<double> probs, std::vector<std::vector<std::int64_t>> class_indices);
  TargetSampler(const MinorWeightedDistribution& dist, const LabeledImages& data)
      : TargetSampler(dist.probs, data.class_indices()) {}

  TargetDraw sample(Rng& rng) const;
  int sample_class(Rng& rng) const;

  const std::vector<double>& probs() const { return probs_; }

 private:
  std::vector<double> probs_;
  std::vector<double> cdf_;
  std::vector<std::vector<std::int64_t>> class_indices_;
  int last_positive_ = 0;
};

}  // namespace smcl
