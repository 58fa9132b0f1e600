#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "robustssm/dataset.hpp"
#include "robustssm/model.hpp"
#include "robustssm/report.hpp"
#include "robustssm/train.hpp"

namespace rssm {

struct AttackConfig {
  double epsilon = 1.0 / 255.0;
  // PGD step size; 0 selects 2.5 * epsilon / steps.
  double alpha = 0.0;
  std::size_t steps = 20;
  bool random_start = false;
  std::uint64_t seed = 0;
  float lower = 0.0F;
  float upper = 1.0F;

  double step_size() const;
  // Throws ConfigError.
  void validate() const;
};

enum class AttackKind { fgsm, pgd };
std::string_view to_string(AttackKind k) noexcept;
AttackKind parse_attack_kind(std::string_view s);

// Gradient of the mean cross-entropy w.r.t. the input batch.
Tensor input_gradient(const ModelConfig& cfg, const ParameterTree& params, const Tensor& x,
                      std::span<const std::int32_t> labels);

// clip(x + epsilon * sign(grad)), with sign(0) = 0. x is not modified.
Tensor fgsm(const ModelConfig& cfg, const ParameterTree& params, const Tensor& x,
            std::span<const std::int32_t> labels, const AttackConfig& ac);

// Signed-gradient ascent for ac.steps steps; every iterate is projected onto
// the intersection of the epsilon-ball around x and [lower, upper].
// `stream` selects an independent random-start stream (e.g. a batch index).
Tensor pgd(const ModelConfig& cfg, const ParameterTree& params, const Tensor& x,
           std::span<const std::int32_t> labels, const AttackConfig& ac, std::uint64_t stream = 0);

// Accuracy on adversarial versions of every batch of `split`.
AccuracyResult attacked_accuracy(const ModelConfig& cfg, const ParameterTree& params, const Dataset& split,
                                 AttackKind kind, const AttackConfig& ac, std::size_t batch_size = 100);

// Rows (fgsm, eps) for each eps, then (pgd, eps) for each eps.
EvalReport epsilon_sweep(const ModelConfig& cfg, const ParameterTree& params, const Dataset& split,
                         std::span<const double> eps_list, const AttackConfig& base,
                         std::string_view dataset_name = "dataset", std::size_t batch_size = 100);

}  // namespace rssm
