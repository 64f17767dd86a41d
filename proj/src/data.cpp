#include "smcl/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "smcl/error.hpp"

namespace smcl {

ClassHistogram::ClassHistogram(std::vector<std::int64_t> counts) : counts_(std::move(counts)) {
  for (std::size_t k = 0; k < counts_.size(); ++k) {
    if (counts_[k] < 1) {
      throw DataError("class " + std::to_string(k) + " has no samples; histograms require n_k >= 1");
    }
    total_ += counts_[k];
  }
}

ClassHistogram ClassHistogram::from_labels(std::span<const std::int64_t> labels, int num_classes) {
  std::vector<std::int64_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (auto y : labels) {
    if (y < 0 || y >= num_classes) {
      throw DataError("label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
    }
    ++counts[static_cast<std::size_t>(y)];
  }
  return ClassHistogram(std::move(counts));
}

double ClassHistogram::imbalance_ratio() const {
  if (counts_.empty()) return 1.0;
  auto [lo, hi] = std::minmax_element(counts_.begin(), counts_.end());
  return static_cast<double>(*hi) / static_cast<double>(*lo);
}

nlohmann::json ClassHistogram::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t k = 0; k < counts_.size(); ++k) j[std::to_string(k)] = counts_[k];
  return j;
}

ClassHistogram ClassHistogram::from_json(const nlohmann::json& j) {
  std::vector<std::int64_t> counts(j.size(), 0);
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto k = std::stoul(it.key());
    if (k >= counts.size()) throw DataError("histogram JSON has non-contiguous class indices");
    counts[k] = it.value().get<std::int64_t>();
  }
  return ClassHistogram(std::move(counts));
}

void LongTailSpec::validate() const {
  if (num_classes < 1) throw InvalidSpec("long-tail spec needs at least one class");
  if (!(rho >= 1.0) || !std::isfinite(rho)) {
    throw InvalidSpec("imbalance ratio rho must be a finite value >= 1, got " + std::to_string(rho));
  }
  if (static_cast<double>(n_max) < rho) {
    throw InvalidSpec("n_max (" + std::to_string(n_max) + ") must be >= rho (" + std::to_string(rho) +
                      ") so the smallest class keeps a sample");
  }
}

std::vector<std::int64_t> longtail_counts(const LongTailSpec& spec) {
  spec.validate();
  const int K = spec.num_classes;
  std::vector<std::int64_t> counts(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    const double exponent = K == 1 ? 0.0 : -static_cast<double>(k) / static_cast<double>(K - 1);
    const double nominal = static_cast<double>(spec.n_max) * std::pow(spec.rho, exponent);
    counts[static_cast<std::size_t>(k)] = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(nominal + 0.5)));
  }
  return counts;
}

ClassHistogram LabeledImages::histogram() const { return ClassHistogram::from_labels(labels, num_classes); }

LabeledImages LabeledImages::subset(std::span<const std::int64_t> indices) const {
  LabeledImages out;
  out.num_classes = num_classes;
  out.class_names = class_names;
  auto idx = torch::tensor(std::vector<std::int64_t>(indices.begin(), indices.end()), torch::kInt64);
  out.images = images.index_select(0, idx).contiguous();
  out.labels.reserve(indices.size());
  for (auto i : indices) out.labels.push_back(labels.at(static_cast<std::size_t>(i)));
  return out;
}

std::vector<std::vector<std::int64_t>> LabeledImages::class_indices() const {
  std::vector<std::vector<std::int64_t>> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    by_class.at(static_cast<std::size_t>(labels[i])).push_back(static_cast<std::int64_t>(i));
  }
  return by_class;
}

std::string LabeledImages::fingerprint() const {
  auto contiguous = images.contiguous();
  std::uint64_t h = fnv1a64(std::string_view(reinterpret_cast<const char*>(contiguous.data_ptr()),
                                             static_cast<std::size_t>(contiguous.nbytes())));
  h = fnv1a64(std::string_view(reinterpret_cast<const char*>(labels.data()), labels.size() * sizeof(std::int64_t)), h);
  return hex64(h);
}

LongTailSubset build_longtail(const LabeledImages& base, const LongTailSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (base.num_classes != spec.num_classes) {
    throw InvalidSpec("long-tail spec has " + std::to_string(spec.num_classes) + " classes but the base set has " +
                      std::to_string(base.num_classes));
  }
  const auto counts = longtail_counts(spec);
  auto by_class = base.class_indices();
  Rng rng(seed);

  std::vector<std::int64_t> selected;
  for (int k = 0; k < spec.num_classes; ++k) {
    auto& pool = by_class[static_cast<std::size_t>(k)];
    const auto want = counts[static_cast<std::size_t>(k)];
    if (static_cast<std::int64_t>(pool.size()) < want) {
      const std::string name = base.class_names.size() > static_cast<std::size_t>(k)
                                   ? " ('" + base.class_names[static_cast<std::size_t>(k)] + "')"
                                   : std::string();
      throw DataError("class " + std::to_string(k) + name + " has " + std::to_string(pool.size()) +
                      " samples but the long-tail profile needs " + std::to_string(want));
    }
    // Partial Fisher-Yates: the first `want` slots become a uniform sample.
    for (std::int64_t i = 0; i < want; ++i) {
      std::uniform_int_distribution<std::int64_t> pick(i, static_cast<std::int64_t>(pool.size()) - 1);
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(rng))]);
    }
    selected.insert(selected.end(), pool.begin(), pool.begin() + want);
  }
  std::sort(selected.begin(), selected.end());

  LongTailSubset out;
  out.data = base.subset(selected);
  out.histogram = out.data.histogram();
  out.source_indices = std::move(selected);
  return out;
}

MinorWeightedDistribution effective_numbers(const ClassHistogram& hist) {
  const auto N = hist.total();
  if (N <= 0) throw DataError("degenerate dataset: effective numbers need at least one sample");
  MinorWeightedDistribution dist;
  const double n_total = static_cast<double>(N);
  dist.beta = (n_total - 1.0) / n_total;
  // 1 - beta^n computed as -expm1(n * log1p(-1/N)) to keep precision when N is large.
  const double log_beta = std::log1p(-1.0 / n_total);
  double inv_sum = 0.0;
  for (auto n : hist.counts()) {
    const double one_minus_pow = -std::expm1(static_cast<double>(n) * log_beta);
    const double e = one_minus_pow * n_total;
    dist.effective.push_back(e);
    inv_sum += 1.0 / e;
  }
  for (double e : dist.effective) dist.probs.push_back((1.0 / e) / inv_sum);
  return dist;
}

TargetSampler::TargetSampler(std::vector<double> probs, std::vector<std::vector<std::int64_t>> class_indices)
    : probs_(std::move(probs)), class_indices_(std::move(class_indices)) {
  if (probs_.empty()) throw IndexCorruption("target sampler needs at least one class");
  if (class_indices_.size() != probs_.size()) {
    throw IndexCorruption("target sampler has " + std::to_string(probs_.size()) + " probabilities but " +
                          std::to_string(class_indices_.size()) + " class index lists");
  }
  double acc = 0.0;
  for (std::size_t k = 0; k < probs_.size(); ++k) {
    if (!(probs_[k] >= 0.0)) throw IndexCorruption("negative sampling probability for class " + std::to_string(k));
    if (probs_[k] > 0.0) {
      if (class_indices_[k].empty()) {
        throw IndexCorruption("class " + std::to_string(k) + " has positive sampling probability but no samples");
      }
      last_positive_ = static_cast<int>(k);
    }
    acc += probs_[k];
    cdf_.push_back(acc);
  }
  if (!(acc > 0.0)) throw IndexCorruption("sampling probabilities sum to zero");
  for (auto& c : cdf_) c /= acc;
}

int TargetSampler::sample_class(Rng& rng) const {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double u = uniform(rng);
  const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  const int k = static_cast<int>(it - cdf_.begin());
  return std::min(k, last_positive_);
}

TargetDraw TargetSampler::sample(Rng& rng) const {
  const int k = sample_class(rng);
  const auto& pool = class_indices_[static_cast<std::size_t>(k)];
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  return {pool[pick(rng)], k};
}

}  // namespace smcl
