#include "robustssm/corruptions.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "robustssm/errors.hpp"
#include "robustssm/rng.hpp"
#include "robustssm/train.hpp"

namespace rssm {

std::size_t PatchGrid::dropped_count() const {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(patch_count()) + 1e-9));
}

void PatchGrid::validate(std::size_t image_side) const {
  if (grid_n == 0 || image_side % grid_n != 0) {
    throw GridError("image side " + std::to_string(image_side) + " is not divisible by grid " +
                    std::to_string(grid_n));
  }
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw GridError("drop ratio must lie in [0, 1]");
}

std::vector<std::size_t> drop_set(const PatchGrid& grid, std::uint64_t sample_index) {
  const std::size_t n = grid.patch_count(), k = std::min(grid.dropped_count(), n);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  SplitMix64 rng(derive_seed(grid.seed, sample_index));
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(k);
  return idx;
}

Tensor patch_drop(const Tensor& x, const PatchGrid& grid, std::uint64_t first_index) {
  if (x.rank() != 4 || x.dim(2) != x.dim(3)) throw DimensionError("patch_drop expects square [B x C x H x W] images");
  const std::size_t side = x.dim(2);
  grid.validate(side);
  Tensor out = x;
  const std::size_t c = x.dim(1), cell = side / grid.grid_n;
  for (std::size_t b = 0; b < x.dim(0); ++b) {
    for (std::size_t patch : drop_set(grid, first_index + b)) {
      const std::size_t py = patch / grid.grid_n, px = patch % grid.grid_n;
      for (std::size_t ch = 0; ch < c; ++ch) {
        float* plane = out.ptr() + (b * c + ch) * side * side;
        for (std::size_t y = py * cell; y < (py + 1) * cell; ++y)
          std::fill_n(plane + y * side + px * cell, cell, grid.fill);
      }
    }
  }
  return out;
}

std::string_view to_string(CorruptionFamily f) noexcept { return f == CorruptionFamily::noise ? "noise" : "blur"; }

CorruptionFamily parse_corruption_family(std::string_view s) {
  if (s == "noise") return CorruptionFamily::noise;
  if (s == "blur") return CorruptionFamily::blur;
  throw ConfigError("unknown corruption family '" + std::string(s) + "' (expected noise or blur)");
}

double SeveritySchedule::level(CorruptionFamily f, int severity) const {
  if (severity < 1 || severity > 5) throw ConfigError("severity must be in 1..5, got " + std::to_string(severity));
  const auto& v = f == CorruptionFamily::noise ? noise_sigma : blur_sigma;
  return v[static_cast<std::size_t>(severity - 1)];
}

void SeveritySchedule::validate() const {
  for (const auto* v : {&noise_sigma, &blur_sigma}) {
    for (std::size_t i = 0; i < v->size(); ++i) {
      if (!std::isfinite((*v)[i]) || (*v)[i] < 0.0) throw ConfigError("severity levels must be finite and >= 0");
      if (i > 0 && (*v)[i] < (*v)[i - 1]) throw ConfigError("severity levels must not decrease");
    }
  }
}

bool SeveritySchedule::strictly_increasing() const {
  auto inc = [](const std::array<double, 5>& v) {
    return std::adjacent_find(v.begin(), v.end(), std::greater_equal<>()) == v.end();
  };
  return inc(noise_sigma) && inc(blur_sigma);
}

Tensor gaussian_noise(const Tensor& x, double sigma, std::uint64_t seed, std::uint64_t first_index) {
  if (x.rank() == 0 || x.dim(0) == 0) return x;
  Tensor out = x;
  const std::size_t per = x.numel() / x.dim(0);
  for (std::size_t b = 0; b < x.dim(0); ++b) {
    SplitMix64 rng(derive_seed(seed, first_index + b));
    float* p = out.ptr() + b * per;
    for (std::size_t i = 0; i < per; ++i) {
      const double z = rng.normal();
      p[i] = static_cast<float>(std::clamp(static_cast<double>(p[i]) + sigma * z, 0.0, 1.0));
    }
  }
  return out;
}

Tensor gaussian_kernel(double sigma) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ConfigError("blur sigma must be finite and >= 0");
  if (sigma == 0.0) return Tensor({1, 1}, {1.0F});
  const std::size_t r = static_cast<std::size_t>(std::ceil(3.0 * sigma));
  const std::size_t k = 2 * r + 1;
  std::vector<double> w(k * k);
  double total = 0.0;
  for (std::size_t y = 0; y < k; ++y)
    for (std::size_t x = 0; x < k; ++x) {
      const double dy = static_cast<double>(y) - static_cast<double>(r);
      const double dx = static_cast<double>(x) - static_cast<double>(r);
      w[y * k + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      total += w[y * k + x];
    }
  Tensor out({k, k});
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = static_cast<float>(w[i] / total);
  return out;
}

namespace {

// Symmetric reflection with the edge sample repeated: -1 -> 0, n -> n-1.
std::size_t reflect(long i, long n) {
  const long period = 2 * n;
  long m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < n ? m : period - 1 - m);
}

}  // namespace

Tensor gaussian_blur(const Tensor& x, double sigma) {
  if (x.rank() != 4) throw DimensionError("gaussian_blur expects [B x C x H x W]");
  const Tensor kernel = gaussian_kernel(sigma);
  const long k = static_cast<long>(kernel.dim(0)), r = k / 2;
  const long h = static_cast<long>(x.dim(2)), w = static_cast<long>(x.dim(3));
  Tensor out(x.shape());
  const std::size_t planes = x.dim(0) * x.dim(1);
  for (std::size_t p = 0; p < planes; ++p) {
    const float* src = x.ptr() + p * static_cast<std::size_t>(h * w);
    float* dst = out.ptr() + p * static_cast<std::size_t>(h * w);
    for (long y = 0; y < h; ++y)
      for (long xx = 0; xx < w; ++xx) {
        double acc = 0.0;
        for (long ky = 0; ky < k; ++ky) {
          const std::size_t sy = reflect(y + ky - r, h);
          for (long kx = 0; kx < k; ++kx) {
            const std::size_t sx = reflect(xx + kx - r, w);
            acc += static_cast<double>(kernel[static_cast<std::size_t>(ky * k + kx)]) *
                   static_cast<double>(src[sy * static_cast<std::size_t>(w) + sx]);
          }
        }
        dst[y * w + xx] = static_cast<float>(std::clamp(acc, 0.0, 1.0));
      }
  }
  return out;
}

Tensor corrupt(const Tensor& x, CorruptionFamily f, int severity, const SeveritySchedule& schedule,
               std::uint64_t seed, std::uint64_t first_index) {
  const double level = schedule.level(f, severity);
  return f == CorruptionFamily::noise ? gaussian_noise(x, level, seed, first_index) : gaussian_blur(x, level);
}

namespace {

using Transform = std::function<Tensor(const Tensor&, std::uint64_t)>;

AccuracyResult transformed_accuracy(const ModelConfig& cfg, const ParameterTree& params, const Dataset& split,
                                    const Transform& transform, std::size_t batch_size) {
  if (split.size() == 0) throw ConfigError("cannot evaluate an empty split");
  AccuracyResult r;
  r.total = split.size();
  for (std::size_t b = 0; b < split.num_batches(batch_size); ++b) {
    const Dataset batch = split.batch(b, batch_size);
    Predictions p = predict(cfg, params, transform(batch.images, b * batch_size));
    r.nonfinite += p.nonfinite_rows;
    for (std::size_t i = 0; i < p.labels.size(); ++i) r.correct += p.labels[i] == batch.labels[i] ? 1 : 0;
  }
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
  return r;
}

}  // namespace

EvalReport corruption_eval(const ModelConfig& cfg, const ParameterTree& params, const Dataset& split,
                           const SeveritySchedule& schedule, std::uint64_t seed,
                           std::span<const CorruptionFamily> families, std::span<const int> severities,
                           std::string_view dataset_name, std::size_t batch_size) {
  schedule.validate();
  EvalReport report;
  report.kind = ReportKind::corruption;
  const AccuracyResult clean = evaluate_accuracy(cfg, params, split, batch_size);
  report.set_header("baseline", format_number(clean.accuracy));
  const std::string name(dataset_name);
  report.rows.push_back({name, {"clean", "0", "0"}, clean.accuracy, 0.0, 1, clean.nonfinite});
  for (CorruptionFamily f : families) {
    for (int s : severities) {
      const double level = schedule.level(f, s);
      const AccuracyResult r = transformed_accuracy(
          cfg, params, split,
          [&](const Tensor& x, std::uint64_t first) { return corrupt(x, f, s, schedule, seed, first); },
          batch_size);
      report.rows.push_back(
          {name, {std::string(to_string(f)), std::to_string(s), format_number(level)}, r.accuracy, 0.0, 1, r.nonfinite});
    }
  }
  return report;
}

EvalReport corruption_sweep(const ModelConfig& cfg, const ParameterTree& params, const Dataset& split,
                            const SeveritySchedule& schedule, std::uint64_t seed, std::string_view dataset_name,
                            std::size_t batch_size) {
  constexpr CorruptionFamily kFamilies[] = {CorruptionFamily::noise, CorruptionFamily::blur};
  constexpr int kSeverities[] = {1, 2, 3, 4, 5};
  return corruption_eval(cfg, params, split, schedule, seed, kFamilies, kSeverities, dataset_name, batch_size);
}

EvalReport patchdrop_sweep(const ModelConfig& cfg, const ParameterTree& params, const Dataset& split,
                           std::span<const double> ratios, const PatchGrid& grid, std::string_view dataset_name,
                           std::size_t batch_size) {
  EvalReport report;
  report.kind = ReportKind::patchdrop;
  report.set_header("baseline", format_number(evaluate_accuracy(cfg, params, split, batch_size).accuracy));
  for (double ratio : ratios) {
    PatchGrid g = grid;
    g.ratio = ratio;
    g.validate(split.height());
    const AccuracyResult r = transformed_accuracy(
        cfg, params, split, [&](const Tensor& x, std::uint64_t first) { return patch_drop(x, g, first); },
        batch_size);
    report.rows.push_back({std::string(dataset_name),
                           {format_number(ratio), std::to_string(g.grid_n), format_number(g.fill)}, r.accuracy, 0.0,
                           1, r.nonfinite});
  }
  return report;
}

}  // namespace rssm
