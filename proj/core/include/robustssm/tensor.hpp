#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace rssm {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape) noexcept;
std::string shape_to_string(const Shape& shape);

// Dense row-major float32 array. data().size() == shape_numel(shape())
// holds for every constructed Tensor; the public surface never lets the two
// drift apart.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<float> data);
  Tensor(Shape shape, std::initializer_list<float> data);

  static Tensor scalar(float value);
  static Tensor full(Shape shape, float value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty() && shape_.empty(); }
  bool is_scalar() const noexcept { return data_.size() == 1 && shape_.empty(); }

  std::span<const float> data() const noexcept { return data_; }
  std::span<float> data() noexcept { return data_; }
  const float* ptr() const noexcept { return data_.data(); }
  float* ptr() noexcept { return data_.data(); }

  float operator[](std::size_t i) const noexcept { return data_[i]; }
  float& operator[](std::size_t i) noexcept { return data_[i]; }

  // Value of a single-element tensor.
  float item() const;

  Tensor reshaped(Shape shape) const;

  // Raw IEEE-754 bit pattern of element i.
  std::uint32_t bits(std::size_t i) const noexcept;
  void set_bits(std::size_t i, std::uint32_t pattern) noexcept;

 private:
  Shape shape_;
  std::vector<float> data_;
};

// Shape and every 32-bit pattern equal (NaN payloads included).
bool bit_identical(const Tensor& a, const Tensor& b) noexcept;

}  // namespace rssm
