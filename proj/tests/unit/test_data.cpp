#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "generators.hpp"
#include "smcl/data.hpp"
#include "smcl/error.hpp"

using namespace smcl;

namespace {

std::int64_t sum(const std::vector<std::int64_t>& v) { return std::accumulate(v.begin(), v.end(), std::int64_t{0}); }

LabeledImages tiny_base(int classes, int per_class) {
  LabeledImages base;
  base.num_classes = classes;
  base.images = torch::arange(classes * per_class, torch::kInt64).remainder(256).to(torch::kUInt8).view({-1, 1, 1, 1});
  for (int k = 0; k < classes; ++k) {
    for (int i = 0; i < per_class; ++i) base.labels.push_back(k);
  }
  return base;
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("cifar-100 long-tail profile at rho 100") {
    const auto n = longtail_counts({100, 100.0, 500});
    REQUIRE(n.size() == 100);
    CHECK(sum(n) == 10899);
    CHECK(n[0] == 500);
    CHECK(n[1] == 477);
    CHECK(n[2] == 456);
    CHECK(n[97] == 5);
    CHECK(n[98] == 5);
    CHECK(n[99] == 5);
  }

  TEST_CASE("cifar-10 long-tail profile at rho 100") {
    const std::vector<std::int64_t> want = {5000, 2997, 1797, 1077, 646, 387, 232, 139, 83, 50};
    const auto n = longtail_counts({10, 100.0, 5000});
    CHECK(n == want);
    CHECK(sum(n) == 12408);
  }

  TEST_CASE("totals at other imbalance ratios") {
    CHECK(sum(longtail_counts({100, 50.0, 500})) == 12655);
    CHECK(sum(longtail_counts({100, 10.0, 500})) == 19629);
    CHECK(longtail_counts({2, 10.0, 100}) == std::vector<std::int64_t>{100, 10});
    const auto five = longtail_counts({5, 10.0, 100});
    CHECK(five == std::vector<std::int64_t>{100, 56, 32, 18, 10});
    CHECK(sum(five) == 216);
  }

  TEST_CASE("rho 1 is balanced") {
    const auto n = longtail_counts({7, 1.0, 40});
    CHECK(std::all_of(n.begin(), n.end(), [](auto c) { return c == 40; }));
  }

  TEST_CASE("profile invariants hold for random specs") {
    gen::Engine g(11);
    for (int t = 0; t < 500; ++t) {
      const int K = gen::integer(g, 2, 120);
      const double rho = gen::real(g, 1.0, 200.0);
      const auto n_max = static_cast<std::int64_t>(gen::integer(g, static_cast<int>(std::ceil(rho)), 6000));
      const auto n = longtail_counts({K, rho, n_max});
      CHECK(n.front() == n_max);
      for (std::size_t k = 1; k < n.size(); ++k) REQUIRE(n[k] <= n[k - 1]);
      CHECK(n.back() >= 1);
    }
  }

  TEST_CASE("invalid specs are rejected") {
    CHECK_THROWS_AS(longtail_counts({10, 0.5, 100}), InvalidSpec);
    CHECK_THROWS_AS(longtail_counts({10, 100.0, 50}), InvalidSpec);
    CHECK_THROWS_AS(longtail_counts({0, 10.0, 100}), InvalidSpec);
  }

  TEST_CASE("build_longtail keeps the profile and base order") {
    const auto base = tiny_base(10, 60);
    const LongTailSpec spec{10, 10.0, 50};
    const auto lt = build_longtail(base, spec, 3);
    CHECK(lt.histogram.counts() == longtail_counts(spec));
    CHECK(lt.data.histogram() == lt.histogram);
    CHECK(std::is_sorted(lt.source_indices.begin(), lt.source_indices.end()));
    CHECK(std::adjacent_find(lt.source_indices.begin(), lt.source_indices.end()) == lt.source_indices.end());
    for (std::size_t i = 0; i < lt.source_indices.size(); ++i) {
      CHECK(lt.data.labels[i] == base.labels[static_cast<std::size_t>(lt.source_indices[i])]);
    }
    const auto again = build_longtail(base, spec, 3);
    CHECK(again.source_indices == lt.source_indices);
    const auto other = build_longtail(base, spec, 4);
    CHECK(other.source_indices != lt.source_indices);
  }

  TEST_CASE("build_longtail names the class that is too small") {
    const auto base = tiny_base(3, 20);
    try {
      build_longtail(base, {3, 2.0, 30}, 0);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("class 0") != std::string::npos);
    }
  }

  TEST_CASE("histogram basics") {
    const ClassHistogram h({500, 50, 5});
    CHECK(h.total() == 555);
    CHECK(h.imbalance_ratio() == 100.0);
    CHECK(ClassHistogram::from_json(h.to_json()) == h);
    CHECK(h.to_json().at("2") == 5);
    CHECK_THROWS_AS(ClassHistogram({3, 0, 1}), DataError);
    const std::vector<std::int64_t> labels = {0, 1, 1, 2, 2, 2};
    CHECK(ClassHistogram::from_labels(labels, 3).counts() == std::vector<std::int64_t>{1, 2, 3});
  }

  TEST_CASE("effective numbers for n = [1, 100]") {
    const auto d = effective_numbers(ClassHistogram({1, 100}));
    CHECK(d.beta == doctest::Approx(100.0 / 101.0).epsilon(1e-15));
    CHECK(d.effective[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(d.effective[1] == doctest::Approx(63.659167554758955).epsilon(1e-12));
    CHECK(d.probs[0] == doctest::Approx(0.98453428898302605).epsilon(1e-12));
    CHECK(d.probs[1] == doctest::Approx(0.015465711016973948).epsilon(1e-12));
  }

  TEST_CASE("effective numbers for n = [5, 20, 100, 3]") {
    const auto d = effective_numbers(ClassHistogram({5, 20, 100, 3}));
    const std::vector<double> e = {4.9224829711019993, 18.582951448334375, 69.576832331632694, 2.97662353515625};
    const std::vector<double> p = {0.33452032857458955, 0.088611899217088938, 0.023666938630478777,
                                   0.55320083357784274};
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(d.effective[k] == doctest::Approx(e[k]).epsilon(1e-12));
      CHECK(d.probs[k] == doctest::Approx(p[k]).epsilon(1e-12));
    }
  }

  TEST_CASE("minor classes are never less likely than major ones") {
    gen::Engine g(12);
    for (int t = 0; t < 200; ++t) {
      const auto counts = gen::histogram(g, gen::integer(g, 2, 30), 5000);
      const auto d = effective_numbers(ClassHistogram(counts));
      CHECK(std::accumulate(d.probs.begin(), d.probs.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
      for (std::size_t a = 0; a < counts.size(); ++a) {
        for (std::size_t b = 0; b < counts.size(); ++b) {
          if (counts[a] < counts[b]) REQUIRE(d.probs[a] >= d.probs[b]);
        }
      }
    }
  }

  TEST_CASE("sampler draws indices of the drawn class") {
    const auto base = tiny_base(4, 10);
    const auto lt = build_longtail(base, {4, 5.0, 10}, 0);
    TargetSampler sampler(effective_numbers(lt.histogram), lt.data);
    Rng rng(1);
    for (int i = 0; i < 2000; ++i) {
      const auto d = sampler.sample(rng);
      REQUIRE(lt.data.labels[static_cast<std::size_t>(d.index)] == d.label);
    }
  }

  TEST_CASE("sampler rejects an empty class with positive probability") {
    CHECK_THROWS_AS(TargetSampler({0.5, 0.5}, {{0, 1}, {}}), IndexCorruption);
    CHECK_NOTHROW(TargetSampler({1.0, 0.0}, {{0, 1}, {}}));
  }

  TEST_CASE("subset and fingerprint") {
    const auto base = tiny_base(3, 4);
    const std::vector<std::int64_t> idx = {0, 5, 11};
    const auto s = base.subset(idx);
    CHECK(s.labels == std::vector<std::int64_t>{0, 1, 2});
    CHECK(s.fingerprint() == base.subset(idx).fingerprint());
    CHECK(s.fingerprint() != base.fingerprint());
  }
}
