#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "robustssm/dataset.hpp"
#include "robustssm/model.hpp"
#include "robustssm/parameter_tree.hpp"
#include "robustssm/train.hpp"

namespace rssm {

enum class BitRegion { sign, exponent, mantissa, any };
std::string_view to_string(BitRegion r) noexcept;
BitRegion parse_bit_region(std::string_view s);

struct BitRange {
  unsigned lowest;
  unsigned count;
  bool contains(unsigned bit) const noexcept { return bit >= lowest && bit < lowest + count; }
};
// sign = 31, exponent = 23..30, mantissa = 0..22, any = 0..31.
BitRange bit_range(BitRegion r) noexcept;

// Toggles bit k of a raw 32-bit pattern. Throws ContractError for k > 31.
std::uint32_t flip_bit(std::uint32_t pattern, unsigned k);
float flip_bit(float value, unsigned k);

// Selects which parameters may receive faults.
class KeyFilter {
 public:
  enum class Mode { all, group, substring };

  static KeyFilter all() { return KeyFilter(Mode::all, {}); }
  static KeyFilter group(LayerGroup g);
  static KeyFilter substring(std::string text) { return KeyFilter(Mode::substring, std::move(text)); }
  // "all" (or empty) -> all; a layer-group name -> that group; anything
  // else -> substring match on the key.
  static KeyFilter parse(std::string_view spec);

  bool matches(std::string_view key) const;
  Mode mode() const noexcept { return mode_; }
  const std::string& text() const noexcept { return text_; }
  std::string describe() const;

 private:
  KeyFilter(Mode m, std::string t) : mode_(m), text_(std::move(t)) {}
  Mode mode_;
  std::string text_;
  LayerGroup group_ = LayerGroup::patch_embed;
};

struct FaultTarget {
  std::string key;
  std::size_t element = 0;
  unsigned bit = 0;

  auto operator<=>(const FaultTarget&) const = default;
};

struct FaultPlan {
  std::vector<FaultTarget> targets;
  std::uint64_t seed = 0;
  BitRegion region = BitRegion::any;
  std::string filter = "all";

  std::size_t budget() const noexcept { return targets.size(); }
};

// Draws K distinct (element, bit) targets uniformly from all pairs of
// parameters passing the filter, bits restricted to the region. Targets are
// drawn one at a time with duplicates redrawn, so the plan for K is a prefix
// of the plan for any larger budget with the same seed.
// Throws FilterError when no parameter matches and BudgetError when K
// exceeds the number of addressable pairs.
FaultPlan generate_plan(const ParameterTree& tree, std::size_t budget, BitRegion region, std::uint64_t seed,
                        const KeyFilter& filter = KeyFilter::all());

// Deep copy with every planned bit toggled. Throws PlanError for targets the
// tree does not have.
ParameterTree apply_plan(const ParameterTree& tree, const FaultPlan& plan);
void apply_plan_in_place(ParameterTree& tree, const FaultPlan& plan);

// Line-delimited "key<TAB>element<TAB>bit" records after "# " comment lines
// carrying seed, region and filter.
std::string format_manifest(const FaultPlan& plan);
FaultPlan parse_manifest(std::string_view text);

struct FaultTrial {
  std::size_t budget = 0;
  std::size_t trial = 0;
  FaultPlan plan;
  double accuracy = 0.0;
  std::size_t nonfinite = 0;
};

using TrialCallback = std::function<void(const FaultTrial&)>;

struct TrialStats {
  std::size_t budget = 0;
  double baseline = 0.0;
  double mean = 0.0;
  // Population standard deviation of `accuracies`.
  double std = 0.0;
  std::vector<double> accuracies;
  std::vector<std::uint64_t> seeds;
  std::size_t nonfinite = 0;
};

// Mean and population std of a list of accuracies.
void summarize(TrialStats& stats);

struct FaultRunOptions {
  BitRegion region = BitRegion::any;
  std::size_t trials = 5;
  // Trial t (1-based) uses seed seed_base + t.
  std::uint64_t seed_base = 1234;
  std::size_t batch_size = 256;
  TrialCallback on_trial;
};

// For every budget, `trials` independent faulty copies of the
// pristine parameters, each evaluated on the full split.
std::vector<TrialStats> random_bitflip_eval(const Checkpoint& ckpt, const Dataset& test,
                                            std::span<const std::size_t> budgets, const FaultRunOptions& opts,
                                            const KeyFilter& filter = KeyFilter::all());

struct GroupStats {
  std::string group;
  std::vector<TrialStats> per_budget;
};

// The seven layer groups, as filters.
std::vector<KeyFilter> default_group_filters();

// random_bitflip_eval restricted to each group in turn.
std::vector<GroupStats> layerwise_bitflip_eval(const Checkpoint& ckpt, const Dataset& test,
                                               std::span<const std::size_t> budgets, const FaultRunOptions& opts,
                                               std::span<const KeyFilter> groups);

struct SearchOptions {
  BitRegion region = BitRegion::exponent;
  std::size_t iterations = 200;
  std::size_t fast_batches = 1;
  std::size_t batch_size = 256;
  // Candidate i (1-based) uses seed seed_base + i.
  std::uint64_t seed_base = 9000;
  TrialCallback on_candidate;
};

struct WorstCase {
  std::size_t budget = 0;
  std::uint64_t best_seed = 0;
  double fast_accuracy = 0.0;
  double full_accuracy = 0.0;
  std::size_t nonfinite = 0;
  FaultPlan plan;
};

// Random search for the plan with the lowest accuracy on the
// first fast_batches batches (canonical order; ties keep the earlier seed),
// then a full-split evaluation of the winner.
std::vector<WorstCase> worstcase_bitflip_search(const Checkpoint& ckpt, const Dataset& test,
                                                std::span<const std::size_t> budgets, const SearchOptions& opts,
                                                const KeyFilter& filter = KeyFilter::all());

// K distinct (element, bit) pairs of an activation tensor with `numel`
// elements, drawn like generate_plan. Targets carry an empty key.
FaultPlan generate_activation_plan(std::size_t numel, std::size_t budget, BitRegion region, std::uint64_t seed);

// Hook that flips the planned bits of the target group's output tensor.
ActivationHook activation_fault_hook(LayerGroup target, std::size_t budget, BitRegion region, std::uint64_t seed);

// One forward pass with K flips in the target group's output. Throws
// TaxonomyError for groups without a single output tensor.
Tensor inject_activation_faults(const ModelConfig& cfg, const ParameterTree& params, const Tensor& x,
                                LayerGroup target, std::size_t budget, BitRegion region, std::uint64_t seed);

// Activation-fault analogue of random_bitflip_eval. Batch b of trial t is faulted
// with seed derive_seed(seed_base + t, b).
std::vector<TrialStats> activation_bitflip_eval(const Checkpoint& ckpt, const Dataset& test, LayerGroup target,
                                                std::span<const std::size_t> budgets,
                                                const FaultRunOptions& opts);

}  // namespace rssm
