#include "robustssm/dataset.hpp"

#include <cmath>
#include <numbers>

#include "robustssm/errors.hpp"
#include "robustssm/rng.hpp"

namespace rssm {

std::string_view to_string(Split s) noexcept {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

void Dataset::validate() const {
  if (images.rank() != 4) throw SchemaError("dataset images must be [S x C x H x W]");
  if (images.dim(0) != labels.size()) {
    throw SchemaError("dataset has " + std::to_string(images.dim(0)) + " images but " +
                      std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw SchemaError("dataset is empty");
  for (std::int32_t y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw SchemaError("label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
  for (float v : images.data()) {
    if (!(v >= 0.0F && v <= 1.0F)) throw SchemaError("pixel value outside [0, 1]");
  }
}

Dataset Dataset::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > size()) throw IndexError("dataset slice out of range");
  const std::size_t per = image_numel();
  Shape s = images.shape();
  s[0] = end - begin;
  std::vector<float> data(images.data().begin() + static_cast<std::ptrdiff_t>(begin * per),
                          images.data().begin() + static_cast<std::ptrdiff_t>(end * per));
  Dataset out;
  out.images = Tensor(std::move(s), std::move(data));
  out.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(begin),
                    labels.begin() + static_cast<std::ptrdiff_t>(end));
  out.split = split;
  out.num_classes = num_classes;
  return out;
}

std::size_t Dataset::num_batches(std::size_t batch_size) const {
  if (batch_size == 0) throw ContractError("batch size must be positive");
  return (size() + batch_size - 1) / batch_size;
}

Dataset Dataset::batch(std::size_t index, std::size_t batch_size) const {
  const std::size_t begin = index * batch_size;
  return slice(begin, std::min(begin + batch_size, size()));
}

Dataset Dataset::gather(const std::vector<std::size_t>& indices) const {
  const std::size_t per = image_numel();
  Shape s = images.shape();
  s[0] = indices.size();
  Tensor img(std::move(s));
  Dataset out;
  out.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices.at(i);
    if (src >= size()) throw IndexError("gather index out of range");
    std::copy_n(images.ptr() + src * per, per, img.ptr() + i * per);
    out.labels.push_back(labels[src]);
  }
  out.images = std::move(img);
  out.split = split;
  out.num_classes = num_classes;
  return out;
}

namespace {

constexpr double kBackground = 0.5;
constexpr double kNoiseStd = 0.05;

// Intensity in [0, 1] of the pattern for class c at pixel (x, y), given the
// jittered centre (cx, cy). `size` is the image side.
double pattern(std::size_t c, double x, double y, double cx, double cy, double size) {
  const double dx = x - cx, dy = y - cy;
  const double r = std::hypot(dx, dy);
  const double scale = size / 28.0;
  const std::size_t variant = c / 4;
  switch (c % 4) {
    case 0: {
      // Oriented bar; orientation advances by 45 degrees per variant.
      const double theta = std::numbers::pi / 4.0 * static_cast<double>(variant % 4);
      const double dist = std::fabs(-std::sin(theta) * dx + std::cos(theta) * dy);
      const double along = std::fabs(std::cos(theta) * dx + std::sin(theta) * dy);
      return (dist <= 2.0 * scale && along <= 10.0 * scale) ? 1.0 : 0.0;
    }
    case 1: {
      const double radius = (6.0 + 2.0 * static_cast<double>(variant % 3)) * scale;
      return r <= radius ? 1.0 : 0.0;
    }
    case 2: {
      const double inner = (8.0 + static_cast<double>(variant % 3)) * scale;
      return (r >= inner && r <= inner + 2.5 * scale) ? 1.0 : 0.0;
    }
    default: {
      // Checkerboard inside a centred square; period shrinks per variant.
      const double period = std::max(2.0, (8.0 - 2.0 * static_cast<double>(variant % 3)) * scale);
      if (std::fabs(dx) > 10.0 * scale || std::fabs(dy) > 10.0 * scale) return 0.0;
      const long ix = static_cast<long>(std::floor((dx + 16.0 * scale) / (period / 2.0)));
      const long iy = static_cast<long>(std::floor((dy + 16.0 * scale) / (period / 2.0)));
      return ((ix + iy) % 2 == 0) ? 1.0 : 0.0;
    }
  }
}

Dataset render(const SyntheticSpec& spec, Split split) {
  const std::size_t classes = spec.classes, per_class = spec.samples_per_class, image_size = spec.image_size;
  const std::uint64_t seed = spec.seed;
  if (classes < 2) throw ConfigError("synthetic dataset needs at least 2 classes");
  if (image_size < 8) throw ConfigError("synthetic images must be at least 8 pixels wide");
  const std::size_t n = classes * per_class;
  const std::size_t plane = image_size * image_size;
  Tensor images({n, 1, image_size, image_size});
  std::vector<std::int32_t> labels(n);
  const double side = static_cast<double>(image_size);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % classes;
    labels[i] = static_cast<std::int32_t>(c);
    SplitMix64 rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    const double cx = (side - 1.0) / 2.0 + static_cast<double>(rng.below(3)) - 1.0;
    const double cy = (side - 1.0) / 2.0 + static_cast<double>(rng.below(3)) - 1.0;
    const double amp = spec.contrast * rng.uniform(0.8, 1.2);
    float* px = images.ptr() + i * plane;
    for (std::size_t y = 0; y < image_size; ++y)
      for (std::size_t x = 0; x < image_size; ++x) {
        const double v = kBackground + amp * pattern(c, static_cast<double>(x), static_cast<double>(y), cx, cy, side) +
                         kNoiseStd * rng.normal();
        px[y * image_size + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
  }
  Dataset d;
  d.images = std::move(images);
  d.labels = std::move(labels);
  d.split = split;
  d.num_classes = classes;
  return d;
}

}  // namespace

Dataset synthetic_dataset(const SyntheticSpec& spec, Split split) {
  if (spec.samples_per_class == 0) throw ConfigError("samples_per_class must be positive");
  return render(spec, split);
}

DatasetSplits synthetic_splits(const SyntheticSpec& spec, std::size_t eval_per_class) {
  SyntheticSpec val = spec, test = spec;
  val.samples_per_class = eval_per_class;
  test.samples_per_class = eval_per_class;
  val.seed = derive_seed(spec.seed, "val");
  test.seed = derive_seed(spec.seed, "test");
  return {synthetic_dataset(spec, Split::train), synthetic_dataset(val, Split::val),
          synthetic_dataset(test, Split::test)};
}

}  // namespace rssm
