#include "smcl/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "smcl/error.hpp"

namespace fs = std::filesystem;

namespace smcl {

namespace {

constexpr int kCifarSide = 32;
constexpr int kCifarPixels = 3 * kCifarSide * kCifarSide;

std::vector<char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

LabeledImages decode_records(const std::vector<fs::path>& files, int label_bytes, int label_offset, int num_classes) {
  const std::size_t record = static_cast<std::size_t>(label_bytes + kCifarPixels);
  std::vector<std::vector<char>> blobs;
  std::size_t total = 0;
  for (const auto& f : files) {
    blobs.push_back(read_file(f));
    if (blobs.back().size() % record != 0) {
      throw DataError(f.string() + " is not a whole number of " + std::to_string(record) + "-byte records");
    }
    total += blobs.back().size() / record;
  }
  LabeledImages out;
  out.num_classes = num_classes;
  out.images = torch::empty({static_cast<std::int64_t>(total), 3, kCifarSide, kCifarSide}, torch::kUInt8);
  out.labels.reserve(total);
  auto* dst = out.images.data_ptr<std::uint8_t>();
  for (const auto& blob : blobs) {
    for (std::size_t off = 0; off < blob.size(); off += record) {
      const int label = static_cast<unsigned char>(blob[off + static_cast<std::size_t>(label_offset)]);
      if (label >= num_classes) throw DataError("CIFAR record label " + std::to_string(label) + " out of range");
      out.labels.push_back(label);
      std::memcpy(dst, blob.data() + off + static_cast<std::size_t>(label_bytes), kCifarPixels);
      dst += kCifarPixels;
    }
  }
  return out;
}

fs::path resolve_cifar_dir(const fs::path& dir, const char* subdir, const char* probe) {
  if (fs::exists(dir / probe)) return dir;
  if (fs::exists(dir / subdir / probe)) return dir / subdir;
  throw DataError("CIFAR binary files not found under " + dir.string() + " (looked for " + probe + ")");
}

cv::Mat to_rgb(const cv::Mat& decoded) {
  cv::Mat rgb;
  if (decoded.channels() == 1) {
    cv::cvtColor(decoded, rgb, cv::COLOR_GRAY2RGB);
  } else if (decoded.channels() == 4) {
    cv::cvtColor(decoded, rgb, cv::COLOR_BGRA2RGB);
  } else {
    cv::cvtColor(decoded, rgb, cv::COLOR_BGR2RGB);
  }
  return rgb;
}

void copy_hwc_into_chw(const cv::Mat& rgb, std::uint8_t* dst) {
  const int h = rgb.rows;
  const int w = rgb.cols;
  for (int y = 0; y < h; ++y) {
    const auto* row = rgb.ptr<std::uint8_t>(y);
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) dst[(c * h + y) * w + x] = row[x * 3 + c];
    }
  }
}

LabeledImages load_image_list(const std::vector<std::pair<fs::path, std::int64_t>>& items, int num_classes,
                              int image_size) {
  if (image_size < 1) throw InvalidParameter("image size must be positive");
  LabeledImages out;
  out.num_classes = num_classes;
  out.images = torch::empty({static_cast<std::int64_t>(items.size()), 3, image_size, image_size}, torch::kUInt8);
  auto* base = out.images.data_ptr<std::uint8_t>();
  const std::size_t stride = static_cast<std::size_t>(3 * image_size * image_size);
  for (std::size_t i = 0; i < items.size(); ++i) {
    cv::Mat decoded = cv::imread(items[i].first.string(), cv::IMREAD_UNCHANGED);
    if (decoded.empty()) throw DataError("cannot decode image " + items[i].first.string());
    if (decoded.depth() != CV_8U) decoded.convertTo(decoded, CV_8U);
    cv::Mat resized;
    cv::resize(to_rgb(decoded), resized, cv::Size(image_size, image_size), 0, 0, cv::INTER_AREA);
    copy_hwc_into_chw(resized, base + i * stride);
    out.labels.push_back(items[i].second);
  }
  return out;
}

bool is_image_file(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".ppm";
}

}  // namespace

fs::path data_root(const fs::path& fallback) {
  if (const char* env = std::getenv("SMCL_DATA_ROOT"); env != nullptr && *env != '\0') return fs::path(env);
  return fallback;
}

LabeledImages load_cifar_binary(const fs::path& dir, CifarVariant variant, Split split) {
  if (variant == CifarVariant::cifar10) {
    const auto root = resolve_cifar_dir(dir, "cifar-10-batches-bin", "test_batch.bin");
    std::vector<fs::path> files;
    if (split == Split::train) {
      for (int i = 1; i <= 5; ++i) files.push_back(root / ("data_batch_" + std::to_string(i) + ".bin"));
    } else {
      files.push_back(root / "test_batch.bin");
    }
    auto out = decode_records(files, 1, 0, 10);
    out.class_names = {"airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"};
    return out;
  }
  const auto root = resolve_cifar_dir(dir, "cifar-100-binary", "test.bin");
  return decode_records({root / (split == Split::train ? "train.bin" : "test.bin")}, 2, 1, 100);
}

LabeledImages load_image_folder(const fs::path& root, int image_size) {
  if (!fs::is_directory(root)) throw DataError("image folder not found: " + root.string());
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) class_dirs.push_back(e.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw DataError("no class sub-directories under " + root.string());

  std::vector<std::pair<fs::path, std::int64_t>> items;
  for (std::size_t k = 0; k < class_dirs.size(); ++k) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(class_dirs[k])) {
      if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (auto& f : files) items.emplace_back(std::move(f), static_cast<std::int64_t>(k));
  }
  auto out = load_image_list(items, static_cast<int>(class_dirs.size()), image_size);
  for (const auto& d : class_dirs) out.class_names.push_back(d.filename().string());
  return out;
}

LabeledImages load_split_list(const fs::path& root, const fs::path& list_file, int num_classes, int image_size) {
  std::ifstream in(list_file);
  if (!in) throw DataError("split list not found: " + list_file.string());
  std::vector<std::pair<fs::path, std::int64_t>> items;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string rel;
    std::int64_t label = -1;
    if (!(ls >> rel >> label) || label < 0 || label >= num_classes) {
      throw DataError("malformed split-list line: '" + line + "'");
    }
    items.emplace_back(root / rel, label);
  }
  return load_image_list(items, num_classes, image_size);
}

LabeledImages make_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.num_classes < 1 || spec.per_class < 1 || spec.image_size < 8) {
    throw InvalidParameter("synthetic spec needs >= 1 class, >= 1 sample per class and image size >= 8");
  }
  const int K = spec.num_classes;
  const int S = spec.image_size;
  const std::int64_t n = static_cast<std::int64_t>(K) * spec.per_class;
  Rng rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, spec.noise);

  LabeledImages out;
  out.num_classes = K;
  out.images = torch::empty({n, 3, S, S}, torch::kUInt8);
  auto* px = out.images.data_ptr<std::uint8_t>();
  std::vector<float> canvas(static_cast<std::size_t>(3 * S * S));

  for (std::int64_t i = 0; i < n; ++i) {
    const int k = static_cast<int>(i % K);
    // Background: a random two-colour gradient.
    double bg0[3];
    double bg1[3];
    for (int c = 0; c < 3; ++c) {
      bg0[c] = 0.15 + 0.5 * u01(rng);
      bg1[c] = 0.15 + 0.5 * u01(rng);
    }
    const double angle = 2.0 * M_PI * u01(rng);
    const double dx = std::cos(angle);
    const double dy = std::sin(angle);
    // Foreground: class-specific hue and shape, random placement and scale.
    const double hue = static_cast<double>(k) / K;
    const double fg[3] = {0.5 + 0.5 * std::cos(2 * M_PI * hue), 0.5 + 0.5 * std::cos(2 * M_PI * (hue - 1.0 / 3)),
                          0.5 + 0.5 * std::cos(2 * M_PI * (hue - 2.0 / 3))};
    const int shape = k % 4;
    const double radius = S * (0.18 + 0.1 * u01(rng));
    const double cy = radius + (S - 2 * radius) * u01(rng);
    const double cx = radius + (S - 2 * radius) * u01(rng);

    for (int y = 0; y < S; ++y) {
      for (int x = 0; x < S; ++x) {
        const double t = 0.5 + 0.5 * ((x - S / 2.0) * dx + (y - S / 2.0) * dy) / S;
        const double ry = (y + 0.5 - cy) / radius;
        const double rx = (x + 0.5 - cx) / radius;
        bool inside = false;
        switch (shape) {
          case 0: inside = std::abs(rx) <= 1 && std::abs(ry) <= 1; break;
          case 1: inside = rx * rx + ry * ry <= 1; break;
          case 2: inside = (std::abs(rx) <= 0.35 && std::abs(ry) <= 1) || (std::abs(ry) <= 0.35 && std::abs(rx) <= 1); break;
          default: inside = std::abs(rx) + std::abs(ry) <= 1; break;
        }
        for (int c = 0; c < 3; ++c) {
          double v = inside ? fg[c] : (1 - t) * bg0[c] + t * bg1[c];
          v += gauss(rng);
          canvas[static_cast<std::size_t>((c * S + y) * S + x)] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
    }
    for (std::size_t j = 0; j < canvas.size(); ++j) {
      *px++ = static_cast<std::uint8_t>(std::lround(canvas[j] * 255.0f));
    }
    out.labels.push_back(k);
  }
  for (int k = 0; k < K; ++k) out.class_names.push_back("synthetic_" + std::to_string(k));
  return out;
}

namespace {

nlohmann::json read_meta(const fs::path& dir) {
  const auto path = dir / "meta.json";
  if (!fs::exists(path)) return nlohmann::json::object();
  std::ifstream in(path);
  return nlohmann::json::parse(in);
}

}  // namespace

void save_split(const fs::path& dir, const std::string& split, const LabeledImages& data) {
  fs::create_directories(dir);
  auto meta = read_meta(dir);
  nlohmann::json geometry = {{"num_classes", data.num_classes},
                             {"channels", data.channels()},
                             {"height", data.height()},
                             {"width", data.width()}};
  for (const auto& [key, value] : geometry.items()) {
    if (meta.contains(key) && meta[key] != value) {
      throw DataError("split '" + split + "' does not match the geometry already stored in " + dir.string());
    }
    meta[key] = value;
  }
  meta["class_names"] = data.class_names;
  meta["splits"][split] = {{"count", data.size()}, {"fingerprint", data.fingerprint()}};

  const auto images = data.images.contiguous();
  const std::size_t pixels = static_cast<std::size_t>(data.channels() * data.height() * data.width());
  std::ofstream out(dir / (split + ".bin"), std::ios::binary | std::ios::trunc);
  const auto* src = images.data_ptr<std::uint8_t>();
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    const auto label = static_cast<std::uint16_t>(data.labels[i]);
    const char le[2] = {static_cast<char>(label & 0xff), static_cast<char>(label >> 8)};
    out.write(le, 2);
    out.write(reinterpret_cast<const char*>(src + i * pixels), static_cast<std::streamsize>(pixels));
  }
  if (!out) throw DataError("failed writing " + (dir / (split + ".bin")).string());
  std::ofstream(dir / "meta.json") << meta.dump(2) << "\n";
}

bool has_split(const fs::path& dir, const std::string& split) {
  return fs::exists(dir / "meta.json") && fs::exists(dir / (split + ".bin"));
}

LabeledImages load_split(const fs::path& dir, const std::string& split) {
  if (!has_split(dir, split)) throw DataError("dataset split '" + split + "' not found under " + dir.string());
  const auto meta = read_meta(dir);
  const int C = meta.at("channels");
  const int H = meta.at("height");
  const int W = meta.at("width");
  const std::size_t pixels = static_cast<std::size_t>(C * H * W);
  const auto blob = read_file(dir / (split + ".bin"));
  if (blob.size() % (pixels + 2) != 0) throw DataError("corrupt split file for '" + split + "'");
  const auto n = static_cast<std::int64_t>(blob.size() / (pixels + 2));

  LabeledImages out;
  out.num_classes = meta.at("num_classes");
  if (meta.contains("class_names")) out.class_names = meta["class_names"].get<std::vector<std::string>>();
  out.images = torch::empty({n, C, H, W}, torch::kUInt8);
  auto* dst = out.images.data_ptr<std::uint8_t>();
  for (std::int64_t i = 0; i < n; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * (pixels + 2);
    const auto label = static_cast<std::uint16_t>(static_cast<unsigned char>(blob[off]) |
                                                  (static_cast<unsigned char>(blob[off + 1]) << 8));
    if (label >= out.num_classes) throw DataError("label out of range in split '" + split + "'");
    out.labels.push_back(label);
    std::memcpy(dst + static_cast<std::size_t>(i) * pixels, blob.data() + off + 2, pixels);
  }
  return out;
}

}  // namespace smcl
