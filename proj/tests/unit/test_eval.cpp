#include <doctest.h>

#include "helpers.hpp"
#include "smcl/datasets.hpp"
#include "smcl/error.hpp"
#include "smcl/eval.hpp"

using namespace smcl;

namespace {

const ClassHistogram kHist({500, 150, 100, 20, 19});

std::vector<std::vector<std::int64_t>> hand_confusion() {
  return {{8, 1, 1, 0, 0}, {2, 6, 1, 1, 0}, {0, 1, 7, 1, 1}, {1, 1, 1, 5, 2}, {2, 2, 2, 1, 3}};
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("group thresholds") {
    const GroupThresholds g;
    CHECK(g.classify(101) == ShotGroup::many);
    CHECK(g.classify(100) == ShotGroup::med);
    CHECK(g.classify(20) == ShotGroup::med);
    CHECK(g.classify(19) == ShotGroup::few);
  }

  TEST_CASE("hand-computed confusion matrix") {
    const auto r = report_from_confusion(hand_confusion(), kHist);
    const std::vector<double> per = {80.0, 60.0, 70.0, 50.0, 30.0};
    for (std::size_t k = 0; k < per.size(); ++k) CHECK(*r.per_class_acc[k] == doctest::Approx(per[k]));
    CHECK(r.overall_acc == doctest::Approx(58.0));
    CHECK(*r.many_acc == doctest::Approx(70.0));
    CHECK(*r.med_acc == doctest::Approx(60.0));
    CHECK(*r.few_acc == doctest::Approx(30.0));
  }

  TEST_CASE("perfect and constant classifiers") {
    const std::vector<std::int64_t> truth = {0, 0, 1, 2, 3, 4, 4};
    const auto perfect = evaluate_predictions(truth, truth, kHist);
    CHECK(perfect.overall_acc == 100.0);
    CHECK(*perfect.few_acc == 100.0);
    const std::vector<std::int64_t> zeros(truth.size(), 0);
    const auto constant = evaluate_predictions(truth, zeros, kHist);
    CHECK(constant.overall_acc == doctest::Approx(200.0 / 7.0));
    CHECK(*constant.many_acc == 50.0);
    CHECK(*constant.med_acc == 0.0);
    CHECK(*constant.few_acc == 0.0);
  }

  TEST_CASE("a group without classes is absent, not zero") {
    const ClassHistogram hist({300, 200, 150});
    const std::vector<std::int64_t> truth = {0, 1, 2};
    const auto r = evaluate_predictions(truth, truth, hist);
    CHECK(r.many_acc.has_value());
    CHECK_FALSE(r.med_acc.has_value());
    CHECK_FALSE(r.few_acc.has_value());
    CHECK(r.to_json().at("group_acc").at("med").is_null());
    const auto table = format_table({{"erm", r}});
    CHECK(table.find("Method") != std::string::npos);
    CHECK(table.find("100.00       -       -") != std::string::npos);
  }

  TEST_CASE("class without test samples is absent") {
    const std::vector<std::int64_t> truth = {0, 0, 1};
    const auto r = evaluate_predictions(truth, truth, ClassHistogram({50, 50, 50}));
    CHECK_FALSE(r.per_class_acc[2].has_value());
    CHECK(r.overall_acc == 100.0);
  }

  TEST_CASE("mismatched inputs are rejected") {
    const std::vector<std::int64_t> a = {0, 1};
    const std::vector<std::int64_t> b = {0};
    CHECK_THROWS(evaluate_predictions(a, b, kHist));
  }

  TEST_CASE("json round trip") {
    const auto r = report_from_confusion(hand_confusion(), kHist);
    const auto back = EvalReport::from_json(r.to_json());
    CHECK(back.overall_acc == r.overall_acc);
    CHECK(back.few_acc == r.few_acc);
    CHECK(back.confusion == r.confusion);
    CHECK((back.class_group == r.class_group));
  }

  TEST_CASE("model evaluation is deterministic and uses eval mode") {
    const auto test = make_synthetic({3, 6, 16, 0.05}, 2);
    auto model = make_model({BackboneKind::small_cnn, 3, 3, 8}, 1);
    model->train();
    const auto stats = ChannelStats::fit(test);
    const ClassHistogram hist({200, 50, 5});
    const auto a = evaluate(model, test, stats, hist);
    const auto b = evaluate(model, test, stats, hist);
    CHECK(a.to_json() == b.to_json());
    CHECK(model->is_training());
    std::int64_t total = 0;
    for (const auto& row : a.confusion) {
      for (auto c : row) total += c;
    }
    CHECK(total == test.size());
  }

  TEST_CASE("grad-cam map has image shape and unit range") {
    auto model = make_model({BackboneKind::small_cnn, 4, 3, 8}, 3);
    const auto image = torch::randn({3, 16, 16});
    const auto heat = cam(model, image, 1);
    CHECK(heat.sizes() == torch::IntArrayRef({16, 16}));
    CHECK(heat.min().item<double>() >= 0.0);
    CHECK(heat.max().item<double>() <= 1.0);
    CHECK_THROWS_AS(cam(model, image, 4), ContractViolation);
    TempDir dir("cam");
    save_cam_overlay(torch::randint(0, 256, {3, 16, 16}, torch::kUInt8), heat, dir / "c.png");
    CHECK(std::filesystem::file_size(dir / "c.png") > 0);
  }

  TEST_CASE("a silent last block gives an all-zero map") {
    auto model = make_model({BackboneKind::small_cnn, 4, 3, 8}, 3);
    {
      torch::NoGradGuard guard;
      for (auto& p : model->last_block().parameters()) p.zero_();
    }
    const auto heat = cam(model, torch::randn({3, 16, 16}), 0);
    CHECK(heat.abs().sum().item<double>() == 0.0);
  }
}
