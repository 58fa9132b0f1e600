#include "robustssm/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "robustssm/errors.hpp"
#include "robustssm/ops.hpp"
#include "robustssm/rng.hpp"

namespace rssm {

double AttackConfig::step_size() const {
  return alpha > 0.0 ? alpha : 2.5 * epsilon / static_cast<double>(std::max<std::size_t>(steps, 1));
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("epsilon must be a finite value >= 0");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be >= 0 (0 selects the default)");
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (steps > 1 && epsilon > 0.0 && step_size() > 2.0 * epsilon + 1e-12) throw ConfigError("alpha must not exceed 2 * epsilon");
  if (!(lower < upper)) throw ConfigError("pixel bounds must satisfy lower < upper");
}

std::string_view to_string(AttackKind k) noexcept { return k == AttackKind::fgsm ? "fgsm" : "pgd"; }

AttackKind parse_attack_kind(std::string_view s) {
  if (s == "fgsm") return AttackKind::fgsm;
  if (s == "pgd") return AttackKind::pgd;
  throw ConfigError("unknown attack '" + std::string(s) + "' (expected fgsm or pgd)");
}

Tensor input_gradient(const ModelConfig& cfg, const ParameterTree& params, const Tensor& x,
                      std::span<const std::int32_t> labels) {
  Tape tape;
  BoundParameters bound(tape, params, false);
  const Var input = tape.leaf(x, true);
  const Var loss = ops::softmax_cross_entropy(forward(cfg, bound, input), labels);
  return std::move(tape.backward(loss, std::span<const Var>(&input, 1)).front());
}

namespace {

float sign_of(float g) { return g > 0.0F ? 1.0F : (g < 0.0F ? -1.0F : 0.0F); }

// One signed step from `cur`, projected onto the ball around `x` and the
// pixel box.
void step_and_project(Tensor& cur, const Tensor& x, const Tensor& grad, float step, float eps, float lo,
                      float hi) {
  for (std::size_t i = 0; i < cur.numel(); ++i) {
    const float lower = std::max(lo, x[i] - eps);
    const float upper = std::min(hi, x[i] + eps);
    cur[i] = std::clamp(cur[i] + step * sign_of(grad[i]), lower, upper);
  }
}

}  // namespace

Tensor fgsm(const ModelConfig& cfg, const ParameterTree& params, const Tensor& x,
            std::span<const std::int32_t> labels, const AttackConfig& ac) {
  AttackConfig one = ac;
  one.steps = 1;
  one.alpha = ac.epsilon;
  one.random_start = false;
  return pgd(cfg, params, x, labels, one);
}

Tensor pgd(const ModelConfig& cfg, const ParameterTree& params, const Tensor& x,
           std::span<const std::int32_t> labels, const AttackConfig& ac, std::uint64_t stream) {
  if (ac.steps < 1) throw ConfigError("steps must be >= 1");
  const float eps = static_cast<float>(ac.epsilon);
  const float step = static_cast<float>(ac.step_size());
  Tensor cur = x;
  if (eps == 0.0F) return cur;
  if (ac.random_start) {
    SplitMix64 rng(derive_seed(derive_seed(ac.seed, "pgd-start"), stream));
    for (std::size_t i = 0; i < cur.numel(); ++i) {
      cur[i] = std::clamp(static_cast<float>(x[i] + rng.uniform(-ac.epsilon, ac.epsilon)), ac.lower, ac.upper);
    }
  }
  for (std::size_t t = 0; t < ac.steps; ++t) {
    const Tensor grad = input_gradient(cfg, params, cur, labels);
    step_and_project(cur, x, grad, step, eps, ac.lower, ac.upper);
  }
  return cur;
}

AccuracyResult attacked_accuracy(const ModelConfig& cfg, const ParameterTree& params, const Dataset& split,
                                 AttackKind kind, const AttackConfig& ac, std::size_t batch_size) {
  ac.validate();
  if (split.size() == 0) throw ConfigError("cannot attack an empty split");
  AccuracyResult r;
  r.total = split.size();
  for (std::size_t b = 0; b < split.num_batches(batch_size); ++b) {
    const Dataset batch = split.batch(b, batch_size);
    const Tensor adv = kind == AttackKind::fgsm ? fgsm(cfg, params, batch.images, batch.labels, ac)
                                                : pgd(cfg, params, batch.images, batch.labels, ac, b);
    Predictions p = predict(cfg, params, adv);
    r.nonfinite += p.nonfinite_rows;
    for (std::size_t i = 0; i < p.labels.size(); ++i) r.correct += p.labels[i] == batch.labels[i] ? 1 : 0;
    r.predictions.insert(r.predictions.end(), p.labels.begin(), p.labels.end());
  }
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
  return r;
}

EvalReport epsilon_sweep(const ModelConfig& cfg, const ParameterTree& params, const Dataset& split,
                         std::span<const double> eps_list, const AttackConfig& base, std::string_view dataset_name,
                         std::size_t batch_size) {
  if (!std::is_sorted(eps_list.begin(), eps_list.end())) throw ConfigError("epsilon list must be ascending");
  EvalReport report;
  report.kind = ReportKind::whitebox;
  report.set_header("baseline", format_number(evaluate_accuracy(cfg, params, split).accuracy));
  for (AttackKind kind : {AttackKind::fgsm, AttackKind::pgd}) {
    for (double eps : eps_list) {
      AttackConfig ac = base;
      ac.epsilon = eps;
      const bool single = kind == AttackKind::fgsm;
      const AccuracyResult r = attacked_accuracy(cfg, params, split, kind, ac, batch_size);
      report.rows.push_back({std::string(dataset_name),
                             {std::string(to_string(kind)), format_number(eps), std::to_string(single ? 1 : ac.steps),
                              format_number(single ? eps : ac.step_size())},
                             r.accuracy, 0.0, 1, r.nonfinite});
    }
  }
  return report;
}

}  // namespace rssm
