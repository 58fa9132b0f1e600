#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "oracles.hpp"
#include "robustssm/corruptions.hpp"
#include "robustssm/errors.hpp"
#include "robustssm/rng.hpp"
#include "robustssm/train.hpp"

using namespace rssm;
using oracle::random_tensor;

namespace {

const std::vector<double> kRatios{0.0, 1.0 / 16, 3.0 / 16, 4.0 / 16, 6.0 / 16, 8.0 / 16, 9.0 / 16};

// Per-pixel mask of the patches dropped for one sample.
std::vector<bool> dropped_mask(const PatchGrid& g, std::uint64_t index, std::size_t side) {
  std::vector<bool> mask(side * side, false);
  const std::size_t cell = side / g.grid_n;
  for (std::size_t p : drop_set(g, index))
    for (std::size_t y = 0; y < cell; ++y)
      for (std::size_t x = 0; x < cell; ++x) mask[(p / g.grid_n * cell + y) * side + p % g.grid_n * cell + x] = true;
  return mask;
}

// Symmetric-reflect convolution with a separately built Gaussian.
std::vector<double> blur_oracle(const Tensor& img, double sigma) {
  const long r = static_cast<long>(std::ceil(3 * sigma)), k = 2 * r + 1;
  std::vector<double> w(static_cast<std::size_t>(k * k));
  double total = 0;
  for (long i = -r; i <= r; ++i)
    for (long j = -r; j <= r; ++j) total += w[(i + r) * k + j + r] = std::exp(-(i * i + j * j) / (2 * sigma * sigma));
  const long n = static_cast<long>(img.dim(2));
  auto refl = [n](long i) {
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
    return i;
  };
  std::vector<double> out(img.numel());
  for (long y = 0; y < n; ++y)
    for (long x = 0; x < n; ++x) {
      double acc = 0;
      for (long i = -r; i <= r; ++i)
        for (long j = -r; j <= r; ++j) acc += w[(i + r) * k + j + r] / total * img[refl(y + i) * n + refl(x + j)];
      out[y * n + x] = std::clamp(acc, 0.0, 1.0);
    }
  return out;
}

}  // namespace

TEST_CASE("drop sets have the exact size and are deterministic") {
  for (double ratio : kRatios) {
    PatchGrid g;
    g.ratio = ratio;
    g.seed = 3;
    CAPTURE(ratio);
    CHECK(g.dropped_count() == static_cast<std::size_t>(std::floor(ratio * 16)));
    for (std::uint64_t i = 0; i < 200; ++i) {
      const auto s = drop_set(g, i);
      CHECK(s.size() == g.dropped_count());
      const std::set<std::size_t> distinct(s.begin(), s.end());
      CHECK(distinct.size() == s.size());
      CHECK((s.empty() || *distinct.rbegin() < 16));
      CHECK(drop_set(g, i) == s);
    }
  }
  PatchGrid g;
  g.grid_n = 10;
  g.ratio = 0.29;
  CHECK(g.dropped_count() == 29);
  g.ratio = 1.0;
  CHECK(g.dropped_count() == 100);
}

TEST_CASE("patch drop replaces exactly the chosen patches") {
  SplitMix64 rng(9);
  const Tensor x = random_tensor({6, 3, 28, 28}, rng, 0, 1);
  for (double ratio : kRatios) {
    PatchGrid g;
    g.ratio = ratio;
    g.seed = 77;
    g.fill = 0.25F;
    const Tensor y = patch_drop(x, g, 100);
    for (std::size_t b = 0; b < 6; ++b) {
      const auto mask = dropped_mask(g, 100 + b, 28);
      std::size_t dropped_px = 0;
      for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t i = 0; i < 784; ++i) {
          const std::size_t at = (b * 3 + ch) * 784 + i;
          if (mask[i]) {
            REQUIRE(y[at] == 0.25F);
            dropped_px += ch == 0;
          } else {
            REQUIRE(y.bits(at) == x.bits(at));
          }
        }
      CHECK(dropped_px == g.dropped_count() * 49);
    }
  }
  PatchGrid g;
  g.ratio = 15.0 / 16;
  const Tensor y = patch_drop(x, g);
  std::size_t filled = 0;
  for (std::size_t i = 0; i < 784; ++i) filled += y[i] == 0.0F && x[i] != 0.0F;
  CHECK(filled == 735);

  g.ratio = 0.0;
  CHECK(bit_identical(patch_drop(x, g), x));
  g.grid_n = 5;
  CHECK_THROWS_AS(patch_drop(x, g), GridError);
  g.grid_n = 4;
  g.ratio = 1.5;
  CHECK_THROWS_AS(patch_drop(x, g), GridError);
}

TEST_CASE("zero drop ratio reproduces clean accuracy exactly") {
  SyntheticSpec spec;
  spec.samples_per_class = 6;
  const Dataset d = synthetic_dataset(spec, Split::test);
  ModelConfig cfg;
  cfg.num_classes = 4;
  cfg.embed_dim = 8;
  const ParameterTree params = init_model(cfg, 2);
  const EvalReport r = patchdrop_sweep(cfg, params, d, kRatios, PatchGrid{}, "toy", 5);
  REQUIRE(r.rows.size() == kRatios.size());
  CHECK(r.rows[0].accuracy == evaluate_accuracy(cfg, params, d).accuracy);
  CHECK(r.rows[3].labels == std::vector<std::string>{"0.25", "4", "0"});
}

TEST_CASE("gaussian noise statistics and seeding") {
  const Tensor x = Tensor::full({4, 1, 100, 100}, 0.5F);
  const double sigma = 0.05;
  const Tensor y = gaussian_noise(x, sigma, 12);
  double sum = 0, sum2 = 0;
  for (std::size_t i = 0; i < y.numel(); ++i) {
    const double d = double(y[i]) - 0.5;
    sum += d;
    sum2 += d * d;
  }
  const double n = double(y.numel()), mean = sum / n, sd = std::sqrt(sum2 / n - mean * mean);
  CHECK(std::fabs(mean) < 3 * sigma / std::sqrt(n) + 1e-6);
  CHECK(std::fabs(sd - sigma) / sigma < 0.02);

  // One z field per sample: the same draws scale with sigma.
  const Tensor y2 = gaussian_noise(x, 2 * sigma, 12);
  for (std::size_t i = 0; i < 1000; ++i) CHECK(double(y2[i]) - 0.5 == doctest::Approx(2 * (double(y[i]) - 0.5)).epsilon(1e-4));
  CHECK(bit_identical(gaussian_noise(x, sigma, 12), y));
  CHECK_FALSE(bit_identical(gaussian_noise(x, sigma, 13), y));
  // Sample b of a batch starting at index 2 equals sample 2 + b of the full batch.
  Tensor tail({2, 1, 100, 100});
  std::copy_n(x.ptr(), tail.numel(), tail.ptr());
  const Tensor yt = gaussian_noise(tail, sigma, 12, 2);
  for (std::size_t i = 0; i < tail.numel(); ++i) REQUIRE(yt[i] == y[2 * 10000 + i]);

  const Tensor clipped = gaussian_noise(x, 10.0, 1);
  for (float v : clipped.data()) REQUIRE((v >= 0.0F && v <= 1.0F));
  CHECK(bit_identical(gaussian_noise(x, 0.0, 5), x));
}

TEST_CASE("blur kernels") {
  const SeveritySchedule sched;
  for (double sigma : sched.blur_sigma) {
    const Tensor k = gaussian_kernel(sigma);
    CAPTURE(sigma);
    const std::size_t side = 2 * static_cast<std::size_t>(std::ceil(3 * sigma)) + 1;
    CHECK(k.shape() == Shape{side, side});
    double total = 0;
    for (float v : k.data()) total += v;
    CHECK(std::fabs(total - 1.0) <= 1e-7);
    for (std::size_t i = 0; i < side; ++i)
      for (std::size_t j = 0; j < side; ++j) CHECK(k[i * side + j] == k[j * side + (side - 1 - i)]);
  }
  CHECK(gaussian_kernel(0.0).numel() == 1);
  CHECK(gaussian_kernel(0.0)[0] == 1.0F);
  CHECK_THROWS_AS(gaussian_kernel(-1.0), ConfigError);
}

TEST_CASE("blur impulse response, DC preservation and borders") {
  Tensor impulse({1, 1, 28, 28});
  impulse[14 * 28 + 14] = 1.0F;
  const double sigma = 1.5;
  const Tensor k = gaussian_kernel(sigma);
  const std::size_t r = k.dim(0) / 2;
  const Tensor y = gaussian_blur(impulse, sigma);
  for (std::size_t i = 0; i < k.dim(0); ++i)
    for (std::size_t j = 0; j < k.dim(0); ++j)
      CHECK(y[(14 - r + i) * 28 + 14 - r + j] == doctest::Approx(k[i * k.dim(0) + j]).epsilon(1e-6));

  const Tensor flat = Tensor::full({2, 3, 28, 28}, 0.37F);
  for (double s : SeveritySchedule{}.blur_sigma) {
    const Tensor b = gaussian_blur(flat, s);
    for (float v : b.data()) REQUIRE(std::fabs(v - 0.37F) < 1e-6);
  }
  CHECK(bit_identical(gaussian_blur(flat, 0.0), flat));

  SplitMix64 rng(4);
  const Tensor img = random_tensor({1, 1, 28, 28}, rng, 0, 1);
  for (double s : SeveritySchedule{}.blur_sigma) {
    CHECK(oracle::max_abs_diff(gaussian_blur(img, s), blur_oracle(img, s)) < 1e-6);
  }
}

TEST_CASE("severity schedules") {
  SeveritySchedule s;
  CHECK_NOTHROW(s.validate());
  CHECK(s.strictly_increasing());
  CHECK(s.level(CorruptionFamily::blur, 5) == 2.5);
  CHECK_THROWS_AS(s.level(CorruptionFamily::noise, 0), ConfigError);
  CHECK_THROWS_AS(s.level(CorruptionFamily::noise, 6), ConfigError);
  s.noise_sigma[3] = 0.01;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = SeveritySchedule{};
  s.blur_sigma[0] = -0.1;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = SeveritySchedule{};
  s.blur_sigma[1] = s.blur_sigma[0];
  CHECK_NOTHROW(s.validate());
  CHECK_FALSE(s.strictly_increasing());
  CHECK(parse_corruption_family("blur") == CorruptionFamily::blur);
  CHECK_THROWS_AS(parse_corruption_family("fog"), ConfigError);
}

TEST_CASE("corruption sweep layout") {
  SyntheticSpec spec;
  spec.samples_per_class = 2;
  const Dataset d = synthetic_dataset(spec, Split::test);
  ModelConfig cfg;
  cfg.num_classes = 4;
  cfg.embed_dim = 4;
  const ParameterTree params = init_model(cfg, 2);
  const EvalReport r = corruption_sweep(cfg, params, d, SeveritySchedule{}, 5, "toy");
  REQUIRE(r.rows.size() == 11);
  CHECK(r.rows[0].labels == std::vector<std::string>{"clean", "0", "0"});
  CHECK(r.rows[1].labels == std::vector<std::string>{"noise", "1", "0.04"});
  CHECK(r.rows[10].labels == std::vector<std::string>{"blur", "5", "2.5"});
  CHECK(r.rows[0].accuracy == evaluate_accuracy(cfg, params, d).accuracy);
}
