#include "robustssm/medmnist.hpp"

#include <array>
#include <utility>

#include "robustssm/errors.hpp"
#include "robustssm/npy.hpp"

namespace rssm {
namespace {

Dataset to_dataset(const NpyArray& images, const NpyArray& labels, Split split) {
  const std::string where = std::string(to_string(split));
  if (images.dtype != NpyDtype::u8) throw SchemaError(where + "_images must be uint8");
  if (labels.dtype == NpyDtype::f32) throw SchemaError(where + "_labels must be integer");
  const auto& is = images.shape;
  std::size_t s = 0, c = 0, h = 0, w = 0;
  bool channels_last = false;
  if (is.size() == 3) {
    s = is[0], c = 1, h = is[1], w = is[2];
  } else if (is.size() == 4 && (is[3] == 1 || is[3] == 3)) {
    s = is[0], h = is[1], w = is[2], c = is[3];
    channels_last = true;
  } else {
    throw SchemaError(where + "_images has unsupported shape");
  }
  const auto& ls = labels.shape;
  const bool squeezable = (ls.size() == 2 && ls[1] == 1) || ls.size() == 1;
  if (!squeezable) throw SchemaError(where + "_labels must be S or S x 1 (multi-label subsets are unsupported)");
  if (ls[0] != s) {
    throw SchemaError(where + ": " + std::to_string(s) + " images but " + std::to_string(ls[0]) + " labels");
  }

  Tensor img({s, c, h, w});
  const std::size_t plane = h * w;
  for (std::size_t n = 0; n < s; ++n)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const std::size_t src = channels_last ? ((n * h + y) * w + x) * c + ch : (n * h + y) * w + x;
          img[(n * c + ch) * plane + y * w + x] = static_cast<float>(images.payload[src]) / 255.0F;
        }
  Dataset d;
  d.images = std::move(img);
  const std::vector<std::int64_t> raw = labels.as_int64();
  d.labels.reserve(raw.size());
  for (std::int64_t v : raw) {
    if (v < 0 || v > 0x7FFFFFFF) throw SchemaError(where + "_labels contains " + std::to_string(v));
    d.labels.push_back(static_cast<std::int32_t>(v));
  }
  d.split = split;
  return d;
}

}  // namespace

DatasetSplits load_medmnist(const std::string& path) {
  NpzReader reader(read_file_bytes(path));
  constexpr std::array<std::pair<const char*, Split>, 3> kSplits{
      {{"train", Split::train}, {"val", Split::val}, {"test", Split::test}}};
  for (const auto& [name, split] : kSplits) {
    for (const char* suffix : {"_images", "_labels"}) {
      const std::string member = std::string(name) + suffix;
      if (!reader.contains(member)) throw SchemaError("archive lacks member '" + member + "'");
    }
  }
  DatasetSplits out;
  Dataset* targets[3] = {&out.train, &out.val, &out.test};
  std::int32_t max_label = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string name = kSplits[i].first;
    *targets[i] = to_dataset(reader.read(name + "_images"), reader.read(name + "_labels"), kSplits[i].second);
    for (std::int32_t y : targets[i]->labels) max_label = std::max(max_label, y);
  }
  for (Dataset* d : targets) {
    d->num_classes = static_cast<std::size_t>(max_label) + 1;
    d->validate();
  }
  return out;
}

std::optional<OfficialSplitSizes> official_split_sizes(std::string_view name) {
  static constexpr std::array<std::pair<std::string_view, OfficialSplitSizes>, 12> kSizes{{
      {"pathmnist", {89996, 10004, 7180}},
      {"chestmnist", {78468, 11219, 22433}},
      {"dermamnist", {7007, 1003, 2005}},
      {"octmnist", {97477, 10832, 1000}},
      {"pneumoniamnist", {4708, 524, 624}},
      {"retinamnist", {1080, 120, 400}},
      {"breastmnist", {546, 78, 156}},
      {"bloodmnist", {11959, 1712, 3421}},
      {"tissuemnist", {165466, 23640, 47280}},
      {"organamnist", {34581, 6491, 17778}},
      {"organcmnist", {13000, 2392, 8268}},
      {"organsmnist", {13940, 2452, 8829}},
  }};
  for (const auto& [key, sizes] : kSizes) {
    if (key == name) return sizes;
  }
  return std::nullopt;
}

}  // namespace rssm
