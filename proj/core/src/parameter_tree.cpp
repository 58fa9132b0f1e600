#include "robustssm/parameter_tree.hpp"

#include "robustssm/errors.hpp"

namespace rssm {

void ParameterTree::insert(std::string key, Tensor value) {
  if (index_.count(key) != 0) throw ContractError("duplicate parameter key '" + key + "'");
  index_.emplace(key, entries_.size());
  entries_.emplace_back(std::move(key), std::move(value));
}

bool ParameterTree::contains(std::string_view key) const {
  return index_.count(std::string(key)) != 0;
}

const Tensor& ParameterTree::at(std::string_view key) const {
  auto it = index_.find(std::string(key));
  if (it == index_.end()) throw IndexError("no parameter named '" + std::string(key) + "'");
  return entries_[it->second].second;
}

Tensor& ParameterTree::at(std::string_view key) {
  auto it = index_.find(std::string(key));
  if (it == index_.end()) throw IndexError("no parameter named '" + std::string(key) + "'");
  return entries_[it->second].second;
}

std::vector<std::string> ParameterTree::keys() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

std::size_t ParameterTree::total_elements() const noexcept {
  std::size_t n = 0;
  for (const auto& [k, v] : entries_) n += v.numel();
  return n;
}

bool bit_identical(const ParameterTree& a, const ParameterTree& b) noexcept {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& [ka, va] = a.entries()[i];
    const auto& [kb, vb] = b.entries()[i];
    if (ka != kb || !bit_identical(va, vb)) return false;
  }
  return true;
}

}  // namespace rssm
