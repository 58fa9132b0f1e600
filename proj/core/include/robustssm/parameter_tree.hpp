#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "robustssm/tensor.hpp"

namespace rssm {

// Ordered map from dot-path keys to tensors. Iteration follows insertion
// order; copies are deep.
class ParameterTree {
 public:
  using Entry = std::pair<std::string, Tensor>;

  void insert(std::string key, Tensor value);

  bool contains(std::string_view key) const;
  const Tensor& at(std::string_view key) const;
  Tensor& at(std::string_view key);

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::vector<Entry>& entries() noexcept { return entries_; }
  std::vector<std::string> keys() const;
  std::size_t total_elements() const noexcept;

  auto begin() const noexcept { return entries_.begin(); }
  auto end() const noexcept { return entries_.end(); }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Same keys in the same order with bit-identical tensors.
bool bit_identical(const ParameterTree& a, const ParameterTree& b) noexcept;

}  // namespace rssm
