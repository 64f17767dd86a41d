#include <doctest.h>

#include <cstdlib>
#include <fstream>

#include "helpers.hpp"
#include "smcl/datasets.hpp"
#include "smcl/error.hpp"
#include "smcl/rng.hpp"
#include "stats.hpp"

using namespace smcl;

namespace {

void write_cifar_records(const std::filesystem::path& file, const std::vector<std::vector<std::uint8_t>>& labels) {
  std::ofstream out(file, std::ios::binary);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    for (auto b : labels[r]) out.put(static_cast<char>(b));
    for (int i = 0; i < 3072; ++i) out.put(static_cast<char>((r * 7 + static_cast<std::size_t>(i)) % 251));
  }
}

}  // namespace

TEST_SUITE("rng") {
  TEST_CASE("named streams are distinct and stable") {
    CHECK(derive_seed(0, "data") == derive_seed(0, "data"));
    CHECK(derive_seed(0, "data") != derive_seed(0, "masking"));
    CHECK(derive_seed(0, "data") != derive_seed(1, "data"));
  }

  TEST_CASE("engine state round trips") {
    Rng a = make_stream(9, "gate");
    for (int i = 0; i < 17; ++i) a();
    Rng b = deserialize_rng(serialize_rng(a));
    for (int i = 0; i < 100; ++i) REQUIRE(a() == b());
  }

  TEST_CASE("symmetric beta") {
    Rng rng(3);
    CHECK_THROWS_AS(sample_symmetric_beta(0.0, rng), InvalidParameter);
    CHECK_THROWS_AS(sample_symmetric_beta(-1.0, rng), InvalidParameter);
    double mean = 0.0;
    for (int i = 0; i < 20000; ++i) {
      const double x = sample_symmetric_beta(2.0, rng);
      REQUIRE(x >= 0.0);
      REQUIRE(x <= 1.0);
      mean += x / 20000.0;
    }
    CHECK(mean == doctest::Approx(0.5).epsilon(0.01));
    std::vector<double> xs(5000);
    for (auto& x : xs) x = sample_symmetric_beta(1.0, rng);
    CHECK(teststats::ks_uniform_pvalue(xs) >= 0.01);
  }

  TEST_CASE("fnv1a reference value") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(hex64(0xabcULL) == "0000000000000abc");
  }
}

TEST_SUITE("datasets") {
  TEST_CASE("synthetic set is deterministic and balanced") {
    const auto a = make_synthetic({4, 12, 16, 0.05}, 1);
    const auto b = make_synthetic({4, 12, 16, 0.05}, 1);
    CHECK(a.size() == 48);
    CHECK(a.images.sizes() == torch::IntArrayRef({48, 3, 16, 16}));
    CHECK(a.fingerprint() == b.fingerprint());
    CHECK(a.fingerprint() != make_synthetic({4, 12, 16, 0.05}, 2).fingerprint());
    CHECK(a.histogram().counts() == std::vector<std::int64_t>(4, 12));
  }

  TEST_CASE("split store round trip") {
    TempDir dir("split");
    const auto a = make_synthetic({3, 5, 8, 0.05}, 4);
    CHECK_FALSE(has_split(dir.path(), "train"));
    save_split(dir.path(), "train", a);
    REQUIRE(has_split(dir.path(), "train"));
    const auto b = load_split(dir.path(), "train");
    CHECK(b.labels == a.labels);
    CHECK(b.num_classes == a.num_classes);
    CHECK(torch::equal(a.images, b.images));
    CHECK_THROWS_AS(load_split(dir.path(), "test"), DataError);
  }

  TEST_CASE("cifar-10 binary layout") {
    TempDir dir("c10");
    const auto batches = dir / "cifar-10-batches-bin";
    std::filesystem::create_directories(batches);
    for (int i = 1; i <= 5; ++i) {
      write_cifar_records(batches / ("data_batch_" + std::to_string(i) + ".bin"), {{static_cast<std::uint8_t>(i)}});
    }
    write_cifar_records(batches / "test_batch.bin", {{9}, {0}});
    const auto train = load_cifar_binary(dir.path(), CifarVariant::cifar10, Split::train);
    CHECK(train.labels == std::vector<std::int64_t>{1, 2, 3, 4, 5});
    CHECK(train.images.sizes() == torch::IntArrayRef({5, 3, 32, 32}));
    CHECK(train.images[0][0][0][1].item<int>() == 1);
    const auto test = load_cifar_binary(batches, CifarVariant::cifar10, Split::test);
    CHECK(test.labels == std::vector<std::int64_t>{9, 0});
  }

  TEST_CASE("cifar-100 uses the fine label") {
    TempDir dir("c100");
    const auto root = dir / "cifar-100-binary";
    std::filesystem::create_directories(root);
    write_cifar_records(root / "train.bin", {{3, 77}, {19, 4}});
    write_cifar_records(root / "test.bin", {{0, 99}});
    const auto train = load_cifar_binary(dir.path(), CifarVariant::cifar100, Split::train);
    CHECK(train.num_classes == 100);
    CHECK(train.labels == std::vector<std::int64_t>{77, 4});
  }

  TEST_CASE("missing cifar data is a named error") {
    TempDir dir("none");
    CHECK_THROWS_AS(load_cifar_binary(dir.path(), CifarVariant::cifar10, Split::train), DataError);
  }

  TEST_CASE("data root honours the environment") {
    setenv("SMCL_DATA_ROOT", "/tmp/somewhere", 1);
    CHECK(data_root("data") == std::filesystem::path("/tmp/somewhere"));
    unsetenv("SMCL_DATA_ROOT");
    CHECK(data_root("data") == std::filesystem::path("data"));
  }
}
