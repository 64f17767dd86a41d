#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "smcl/data.hpp"

namespace smcl {

enum class Split { train, test };

enum class CifarVariant { cifar10, cifar100 };

// Root under which named datasets are looked up. $SMCL_DATA_ROOT wins over
// the supplied default.
std::filesystem::path data_root(const std::filesystem::path& fallback = "data");

// Reads the CIFAR binary layout: `cifar-10-batches-bin/{data_batch_1..5,test_batch}.bin`
// (1 label byte + 3072 pixel bytes per record) or `cifar-100-binary/{train,test}.bin`
// (coarse byte, fine byte, 3072 pixel bytes; the fine label is used).
// `dir` may point at the batches directory itself or at its parent.
LabeledImages load_cifar_binary(const std::filesystem::path& dir, CifarVariant variant, Split split);

// Directory-per-class layout: one sub-directory per class (sorted by name),
// images decoded by OpenCV and resized to `image_size` x `image_size`.
LabeledImages load_image_folder(const std::filesystem::path& root, int image_size);

// Split list with lines "relative/path.jpg <label>" resolved against `root`
// (ImageNet-LT style).
LabeledImages load_split_list(const std::filesystem::path& root, const std::filesystem::path& list_file,
                              int num_classes, int image_size);

// Procedural stand-in for CIFAR: each class owns a foreground shape/colour
// placed at a random position on a textured background. Used by tests and
// smoke runs where no real dataset is available.
struct SyntheticSpec {
  int num_classes = 10;
  int per_class = 100;
  int image_size = 32;
  double noise = 0.08;
};

LabeledImages make_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

// On-disk store written by `smcl build-data`:
//   <dir>/meta.json, <dir>/<split>.bin (records of label:int16 LE + C*H*W bytes)
void save_split(const std::filesystem::path& dir, const std::string& split, const LabeledImages& data);
LabeledImages load_split(const std::filesystem::path& dir, const std::string& split);
bool has_split(const std::filesystem::path& dir, const std::string& split);

}  // namespace smcl
