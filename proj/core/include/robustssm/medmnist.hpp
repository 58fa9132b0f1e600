#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "robustssm/dataset.hpp"

namespace rssm {

// Loads the six canonical members (train/val/test _images/_labels) of a
// MedMNIST archive. uint8 pixels are scaled by 1/255; grayscale S x H x W
// becomes S x 1 x H x W and colour S x H x W x 3 becomes S x 3 x H x W;
// S x 1 labels are squeezed. Class count is max label + 1 over all splits.
DatasetSplits load_medmnist(const std::string& path);

struct OfficialSplitSizes {
  std::size_t train, val, test;
};

// Published split sizes for the 2-D MedMNIST subsets, by lower-case file
// stem ("pathmnist", "bloodmnist", ...).
std::optional<OfficialSplitSizes> official_split_sizes(std::string_view name);

}  // namespace rssm
