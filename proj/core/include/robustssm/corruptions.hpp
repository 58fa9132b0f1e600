#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "robustssm/dataset.hpp"
#include "robustssm/model.hpp"
#include "robustssm/report.hpp"

namespace rssm {

// Square grid of grid_n x grid_n non-overlapping patches.
struct PatchGrid {
  std::size_t grid_n = 4;
  float fill = 0.0F;
  double ratio = 0.0;
  std::uint64_t seed = 0;

  std::size_t patch_count() const noexcept { return grid_n * grid_n; }
  // floor(ratio * patch_count), tolerant of decimal ratios such as 0.29.
  std::size_t dropped_count() const;
  // Throws GridError if the side is not divisible or the ratio is outside
  // [0, 1].
  void validate(std::size_t image_side) const;
};

// Patch indices (row-major over the grid) dropped for the sample with the
// given global index, in selection order.
std::vector<std::size_t> drop_set(const PatchGrid& grid, std::uint64_t sample_index);

// x[B x C x H x W]; sample b uses drop_set(grid, first_index + b). Dropped
// patches are set to grid.fill in every channel; all other values are
// copied unchanged.
Tensor patch_drop(const Tensor& x, const PatchGrid& grid, std::uint64_t first_index = 0);

enum class CorruptionFamily { noise, blur };
std::string_view to_string(CorruptionFamily f) noexcept;
CorruptionFamily parse_corruption_family(std::string_view s);

struct SeveritySchedule {
  std::array<double, 5> noise_sigma{0.04, 0.08, 0.12, 0.18, 0.26};
  std::array<double, 5> blur_sigma{0.5, 1.0, 1.5, 2.0, 2.5};

  double level(CorruptionFamily f, int severity) const;
  // Finite, non-negative and non-decreasing in each family. Throws
  // ConfigError.
  void validate() const;
  bool strictly_increasing() const;
};

// clip(x + sigma * z) with z ~ N(0, 1) drawn per sample from
// derive_seed(seed, first_index + b). The same seed gives the same z for
// every sigma.
Tensor gaussian_noise(const Tensor& x, double sigma, std::uint64_t seed, std::uint64_t first_index = 0);

// Normalized [k x k] Gaussian with k = 2 * ceil(3 * sigma) + 1; sigma = 0
// gives the 1 x 1 identity kernel.
Tensor gaussian_kernel(double sigma);

// Per-channel convolution with gaussian_kernel(sigma), symmetric reflect
// padding (edge sample repeated), output clipped to [0, 1].
Tensor gaussian_blur(const Tensor& x, double sigma);

Tensor corrupt(const Tensor& x, CorruptionFamily f, int severity, const SeveritySchedule& schedule,
               std::uint64_t seed, std::uint64_t first_index = 0);

// Clean row, then noise severities 1..5, then blur severities 1..5.
EvalReport corruption_sweep(const ModelConfig& cfg, const ParameterTree& params, const Dataset& split,
                            const SeveritySchedule& schedule, std::uint64_t seed,
                            std::string_view dataset_name = "dataset", std::size_t batch_size = 256);

// Clean row followed by the requested (family, severity) cells, families
// outermost.
EvalReport corruption_eval(const ModelConfig& cfg, const ParameterTree& params, const Dataset& split,
                           const SeveritySchedule& schedule, std::uint64_t seed,
                           std::span<const CorruptionFamily> families, std::span<const int> severities,
                           std::string_view dataset_name = "dataset", std::size_t batch_size = 256);

// One row per ratio; `grid` supplies grid_n, fill and seed.
EvalReport patchdrop_sweep(const ModelConfig& cfg, const ParameterTree& params, const Dataset& split,
                           std::span<const double> ratios, const PatchGrid& grid,
                           std::string_view dataset_name = "dataset", std::size_t batch_size = 256);

}  // namespace rssm
