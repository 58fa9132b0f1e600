#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "robustssm/tensor.hpp"

namespace rssm {

enum class Split { train, val, test };
std::string_view to_string(Split s) noexcept;

// Images [S x C x H x W] in [0, 1] with labels in [0, num_classes).
struct Dataset {
  Tensor images;
  std::vector<std::int32_t> labels;
  Split split = Split::test;
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
  std::size_t image_numel() const { return images.numel() / std::max<std::size_t>(size(), 1); }

  // Throws SchemaError if any invariant is broken.
  void validate() const;

  // Samples [begin, end) as a new dataset; also used for canonical-order
  // batching.
  Dataset slice(std::size_t begin, std::size_t end) const;
  std::size_t num_batches(std::size_t batch_size) const;
  Dataset batch(std::size_t index, std::size_t batch_size) const;
  Dataset gather(const std::vector<std::size_t>& indices) const;
};

struct SyntheticSpec {
  std::size_t classes = 4;
  std::size_t samples_per_class = 200;
  std::size_t image_size = 28;
  std::uint64_t seed = 7;
  // Pattern amplitude above the 0.5 background.
  double contrast = 0.12;
};

// Class c is a deterministic pattern (oriented bar, disk, ring or checker,
// cycling with a frequency/orientation index) drawn at low contrast on a
// mid-grey background, with per-sample jitter and N(0, 0.05^2) pixel noise,
// clipped to [0, 1]. Samples are interleaved by class.
Dataset synthetic_dataset(const SyntheticSpec& spec, Split split = Split::train);

struct DatasetSplits {
  Dataset train;
  Dataset val;
  Dataset test;
};

// Train split from `spec`; val and test use eval_per_class samples each and
// seeds derived from spec.seed.
DatasetSplits synthetic_splits(const SyntheticSpec& spec, std::size_t eval_per_class);

}  // namespace rssm
