#include <doctest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "robustssm/attacks.hpp"
#include "robustssm/errors.hpp"
#include "robustssm/rng.hpp"

using namespace rssm;
using oracle::random_tensor;

namespace {

ModelConfig tiny() {
  ModelConfig cfg;
  cfg.num_classes = 3;
  cfg.embed_dim = 4;
  cfg.state_dim = 2;
  return cfg;
}

std::vector<std::int32_t> random_labels(std::size_t n, SplitMix64& rng) {
  std::vector<std::int32_t> y(n);
  for (auto& v : y) v = static_cast<std::int32_t>(rng.below(3));
  return y;
}

}  // namespace

TEST_CASE("attack config") {
  AttackConfig ac;
  ac.epsilon = 8.0 / 255.0;
  ac.steps = 20;
  CHECK(ac.step_size() == doctest::Approx(2.5 * ac.epsilon / 20));
  CHECK_NOTHROW(ac.validate());
  ac.alpha = 3 * ac.epsilon;
  CHECK_THROWS_AS(ac.validate(), ConfigError);
  ac.steps = 1;
  CHECK_NOTHROW(ac.validate());
  ac = AttackConfig{};
  ac.epsilon = -1;
  CHECK_THROWS_AS(ac.validate(), ConfigError);
  ac = AttackConfig{};
  ac.epsilon = 0;
  ac.alpha = 0.01;
  CHECK_NOTHROW(ac.validate());
  CHECK(parse_attack_kind("pgd") == AttackKind::pgd);
  CHECK_THROWS_AS(parse_attack_kind("cw"), ConfigError);
}

TEST_CASE("adversarial examples stay inside the ball and the pixel box") {
  SplitMix64 rng(31);
  const ModelConfig cfg = tiny();
  const ParameterTree params = init_model(cfg, 2);
  const double tol = std::ldexp(1.0, -20);
  std::size_t inputs = 0;
  while (inputs < 1000) {
    const std::size_t n = 50;
    // Mass near the box edges exercises the clipping.
    Tensor x = random_tensor({n, 1, 28, 28}, rng, -0.2, 1.2);
    for (float& v : x.data()) v = std::clamp(v, 0.0F, 1.0F);
    const auto y = random_labels(n, rng);
    AttackConfig ac;
    ac.epsilon = rng.uniform(0.0, 16.0 / 255.0);
    ac.steps = 1 + rng.below(4);
    ac.random_start = rng.below(2) == 1;
    ac.seed = rng.next();
    for (const Tensor& adv : {fgsm(cfg, params, x, y, ac), pgd(cfg, params, x, y, ac, inputs)}) {
      double worst = 0.0;
      bool boxed = true;
      for (std::size_t i = 0; i < x.numel(); ++i) {
        worst = std::max(worst, std::fabs(double(adv[i]) - double(x[i])));
        boxed = boxed && adv[i] >= 0.0F && adv[i] <= 1.0F;
      }
      CHECK(worst <= ac.epsilon + tol);
      CHECK(boxed);
    }
    inputs += n;
  }
}

TEST_CASE("fgsm is one projected step of size epsilon") {
  SplitMix64 rng(5);
  const ModelConfig cfg = tiny();
  const ParameterTree params = init_model(cfg, 4);
  const Tensor x = random_tensor({8, 1, 28, 28}, rng, 0, 1);
  const auto y = random_labels(8, rng);
  AttackConfig ac;
  ac.epsilon = 4.0 / 255.0;
  const Tensor a = fgsm(cfg, params, x, y, ac);

  AttackConfig one = ac;
  one.steps = 1;
  one.alpha = ac.epsilon;
  CHECK(bit_identical(a, pgd(cfg, params, x, y, one)));

  // Oracle: clip(x + eps * sign(grad)).
  const Tensor g = input_gradient(cfg, params, x, y);
  const float eps = static_cast<float>(ac.epsilon);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const float s = g[i] > 0 ? 1.0F : (g[i] < 0 ? -1.0F : 0.0F);
    const float want = std::clamp(x[i] + eps * s, std::max(0.0F, x[i] - eps), std::min(1.0F, x[i] + eps));
    REQUIRE(a[i] == want);
  }
}

TEST_CASE("zero gradient and zero epsilon leave the input unchanged") {
  SplitMix64 rng(6);
  ModelConfig cfg = tiny();
  ParameterTree params = init_model(cfg, 1);
  const Tensor x = random_tensor({3, 1, 28, 28}, rng, 0, 1);
  const auto y = random_labels(3, rng);
  AttackConfig ac;
  ac.epsilon = 0.0;
  CHECK(bit_identical(fgsm(cfg, params, x, y, ac), x));
  ac.random_start = true;
  CHECK(bit_identical(pgd(cfg, params, x, y, ac), x));

  // A zero head makes the loss constant in x; sign(0) = 0.
  for (float& v : params.at("classifier_head.weight").data()) v = 0.0F;
  ac = AttackConfig{};
  ac.epsilon = 0.1;
  CHECK(bit_identical(fgsm(cfg, params, x, y, ac), x));
}

TEST_CASE("random starts are seeded per stream") {
  SplitMix64 rng(7);
  const ModelConfig cfg = tiny();
  const ParameterTree params = init_model(cfg, 3);
  const Tensor x = random_tensor({2, 1, 28, 28}, rng, 0, 1);
  const auto y = random_labels(2, rng);
  AttackConfig ac;
  ac.epsilon = 0.05;
  ac.steps = 2;
  ac.random_start = true;
  ac.seed = 10;
  CHECK(bit_identical(pgd(cfg, params, x, y, ac, 3), pgd(cfg, params, x, y, ac, 3)));
  CHECK_FALSE(bit_identical(pgd(cfg, params, x, y, ac, 3), pgd(cfg, params, x, y, ac, 4)));
  ac.seed = 11;
  CHECK_FALSE(bit_identical(pgd(cfg, params, x, y, ac, 3), pgd(cfg, params, x, y, ac, 4)));
}

TEST_CASE("deterministic attacks do not depend on the batch size") {
  SyntheticSpec spec;
  spec.samples_per_class = 5;
  const Dataset d = synthetic_dataset(spec, Split::test);
  ModelConfig cfg = tiny();
  cfg.num_classes = 4;
  const ParameterTree params = init_model(cfg, 8);
  AttackConfig ac;
  ac.epsilon = 8.0 / 255.0;
  ac.steps = 3;
  for (AttackKind k : {AttackKind::fgsm, AttackKind::pgd}) {
    const AccuracyResult a = attacked_accuracy(cfg, params, d, k, ac, 20);
    const AccuracyResult b = attacked_accuracy(cfg, params, d, k, ac, 3);
    CHECK(a.predictions == b.predictions);
  }
  const AccuracyResult clean = evaluate_accuracy(cfg, params, d);
  ac.epsilon = 0.0;
  CHECK(attacked_accuracy(cfg, params, d, AttackKind::pgd, ac).accuracy == clean.accuracy);
}

TEST_CASE("epsilon sweep layout") {
  SyntheticSpec spec;
  spec.samples_per_class = 2;
  const Dataset d = synthetic_dataset(spec, Split::test);
  ModelConfig cfg = tiny();
  cfg.num_classes = 4;
  const ParameterTree params = init_model(cfg, 8);
  const std::vector<double> eps{0.0, 2.0 / 255.0};
  AttackConfig base;
  base.steps = 2;
  const EvalReport r = epsilon_sweep(cfg, params, d, eps, base, "toy");
  REQUIRE(r.rows.size() == 4);
  CHECK(r.kind == ReportKind::whitebox);
  CHECK(r.rows[0].labels[0] == "fgsm");
  CHECK(r.rows[2].labels[0] == "pgd");
  CHECK(r.rows[3].labels[2] == "2");
  CHECK(r.rows[0].dataset == "toy");
  CHECK(r.header_value("baseline").has_value());
  CHECK(std::stod(*r.header_value("baseline")) == r.rows[0].accuracy);
  const std::vector<double> unsorted{0.1, 0.0};
  CHECK_THROWS_AS(epsilon_sweep(cfg, params, d, unsorted, base), ConfigError);
}
