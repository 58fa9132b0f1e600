#include "robustssm/faults.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <unordered_set>

#include "robustssm/errors.hpp"
#include "robustssm/rng.hpp"

namespace rssm {

std::string_view to_string(BitRegion r) noexcept {
  switch (r) {
    case BitRegion::sign: return "sign";
    case BitRegion::exponent: return "exponent";
    case BitRegion::mantissa: return "mantissa";
    case BitRegion::any: return "any";
  }
  return "?";
}

BitRegion parse_bit_region(std::string_view s) {
  for (BitRegion r : {BitRegion::sign, BitRegion::exponent, BitRegion::mantissa, BitRegion::any}) {
    if (to_string(r) == s) return r;
  }
  throw ConfigError("unknown bit region '" + std::string(s) + "' (expected sign, exponent, mantissa or any)");
}

BitRange bit_range(BitRegion r) noexcept {
  switch (r) {
    case BitRegion::sign: return {31, 1};
    case BitRegion::exponent: return {23, 8};
    case BitRegion::mantissa: return {0, 23};
    case BitRegion::any: return {0, 32};
  }
  return {0, 32};
}

std::uint32_t flip_bit(std::uint32_t pattern, unsigned k) {
  if (k > 31) throw ContractError("bit index " + std::to_string(k) + " outside 0..31");
  return pattern ^ (std::uint32_t{1} << k);
}

float flip_bit(float value, unsigned k) {
  return std::bit_cast<float>(flip_bit(std::bit_cast<std::uint32_t>(value), k));
}

KeyFilter KeyFilter::group(LayerGroup g) {
  KeyFilter f(Mode::group, std::string(to_string(g)));
  f.group_ = g;
  return f;
}

KeyFilter KeyFilter::parse(std::string_view spec) {
  if (spec.empty() || spec == "all") return all();
  for (LayerGroup g : kAllLayerGroups) {
    if (to_string(g) == spec) return group(g);
  }
  return substring(std::string(spec));
}

bool KeyFilter::matches(std::string_view key) const {
  switch (mode_) {
    case Mode::all: return true;
    case Mode::group:
      try {
        return group_of_key(key) == group_;
      } catch (const TaxonomyError&) {
        return false;
      }
    case Mode::substring: return key.find(text_) != std::string_view::npos;
  }
  return false;
}

std::string KeyFilter::describe() const {
  switch (mode_) {
    case Mode::all: return "all";
    case Mode::group: return text_;
    case Mode::substring: return "substring:" + text_;
  }
  return "?";
}

namespace {

// Sequential draw without replacement over [0, total); duplicates are
// redrawn so every prefix of the sequence is itself a valid draw.
std::vector<std::uint64_t> draw_distinct(std::uint64_t total, std::size_t k, std::uint64_t seed) {
  if (k > total) {
    throw BudgetError("budget " + std::to_string(k) + " exceeds the " + std::to_string(total) +
                      " addressable (element, bit) pairs");
  }
  std::vector<std::uint64_t> out;
  out.reserve(k);
  std::unordered_set<std::uint64_t> seen;
  SplitMix64 rng(seed);
  while (out.size() < k) {
    const std::uint64_t u = rng.below(total);
    if (seen.insert(u).second) out.push_back(u);
  }
  return out;
}

}  // namespace

FaultPlan generate_plan(const ParameterTree& tree, std::size_t budget, BitRegion region, std::uint64_t seed,
                        const KeyFilter& filter) {
  struct Span {
    const std::string* key;
    std::uint64_t start, pairs;
  };
  const BitRange bits = bit_range(region);
  std::vector<Span> spans;
  std::uint64_t total = 0;
  for (const auto& [key, t] : tree) {
    if (!filter.matches(key) || t.numel() == 0) continue;
    const std::uint64_t pairs = static_cast<std::uint64_t>(t.numel()) * bits.count;
    spans.push_back({&key, total, pairs});
    total += pairs;
  }
  if (spans.empty()) throw FilterError("filter '" + filter.describe() + "' matches no parameters");

  FaultPlan plan;
  plan.seed = seed;
  plan.region = region;
  plan.filter = filter.describe();
  for (std::uint64_t u : draw_distinct(total, budget, seed)) {
    std::size_t lo = 0, hi = spans.size();
    while (hi - lo > 1) {
      const std::size_t mid = (lo + hi) / 2;
      if (spans[mid].start <= u) lo = mid;
      else hi = mid;
    }
    const std::uint64_t local = u - spans[lo].start;
    plan.targets.push_back({*spans[lo].key, static_cast<std::size_t>(local / bits.count),
                            bits.lowest + static_cast<unsigned>(local % bits.count)});
  }
  return plan;
}

void apply_plan_in_place(ParameterTree& tree, const FaultPlan& plan) {
  for (const auto& t : plan.targets) {
    if (!tree.contains(t.key)) throw PlanError("plan targets unknown parameter '" + t.key + "'");
    Tensor& v = tree.at(t.key);
    if (t.element >= v.numel()) {
      throw PlanError("plan targets element " + std::to_string(t.element) + " of '" + t.key + "' which has " +
                      std::to_string(v.numel()));
    }
    if (t.bit > 31) throw PlanError("plan targets bit " + std::to_string(t.bit));
  }
  for (const auto& t : plan.targets) {
    Tensor& v = tree.at(t.key);
    v.set_bits(t.element, flip_bit(v.bits(t.element), t.bit));
  }
}

ParameterTree apply_plan(const ParameterTree& tree, const FaultPlan& plan) {
  ParameterTree copy = tree;
  apply_plan_in_place(copy, plan);
  return copy;
}

std::string format_manifest(const FaultPlan& plan) {
  std::string out = "# seed: " + std::to_string(plan.seed) + "\n# region: " + std::string(to_string(plan.region)) +
                    "\n# filter: " + plan.filter + "\n# budget: " + std::to_string(plan.budget()) + "\n";
  for (const auto& t : plan.targets) {
    out += t.key + "\t" + std::to_string(t.element) + "\t" + std::to_string(t.bit) + "\n";
  }
  return out;
}

namespace {

template <typename T>
T manifest_number(std::string_view s, std::size_t line) {
  T v{};
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) {
    throw PlanError("bad number '" + std::string(s) + "' on manifest line " + std::to_string(line));
  }
  return v;
}

}  // namespace

FaultPlan parse_manifest(std::string_view text) {
  FaultPlan plan;
  std::size_t pos = 0, line = 0;
  while (pos < text.size()) {
    ++line;
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view l = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
    if (l.empty()) continue;
    if (l.front() == '#') {
      l.remove_prefix(1);
      if (!l.empty() && l.front() == ' ') l.remove_prefix(1);
      const std::size_t colon = l.find(": ");
      if (colon == std::string_view::npos) continue;
      const std::string_view k = l.substr(0, colon), v = l.substr(colon + 2);
      if (k == "seed") plan.seed = manifest_number<std::uint64_t>(v, line);
      else if (k == "region") plan.region = parse_bit_region(v);
      else if (k == "filter") plan.filter = std::string(v);
      continue;
    }
    const std::size_t t1 = l.find('\t');
    const std::size_t t2 = t1 == std::string_view::npos ? t1 : l.find('\t', t1 + 1);
    if (t2 == std::string_view::npos) throw PlanError("manifest line " + std::to_string(line) + " needs 3 fields");
    FaultTarget t{std::string(l.substr(0, t1)), manifest_number<std::size_t>(l.substr(t1 + 1, t2 - t1 - 1), line),
                  manifest_number<unsigned>(l.substr(t2 + 1), line)};
    if (t.bit > 31) throw PlanError("bit " + std::to_string(t.bit) + " on manifest line " + std::to_string(line));
    plan.targets.push_back(std::move(t));
  }
  return plan;
}

void summarize(TrialStats& s) {
  if (s.accuracies.empty()) {
    s.mean = s.std = 0.0;
    return;
  }
  double sum = 0.0;
  for (double a : s.accuracies) sum += a;
  s.mean = sum / static_cast<double>(s.accuracies.size());
  double sq = 0.0;
  for (double a : s.accuracies) sq += (a - s.mean) * (a - s.mean);
  s.std = std::sqrt(sq / static_cast<double>(s.accuracies.size()));
}

namespace {

void check_trials(const FaultRunOptions& o) {
  if (o.trials < 1) throw ConfigError("trials must be >= 1");
}

TrialStats run_budget(const Checkpoint& ckpt, const Dataset& test, std::size_t budget, double baseline,
                      const FaultRunOptions& opts, const KeyFilter& filter) {
  TrialStats st;
  st.budget = budget;
  st.baseline = baseline;
  ParameterTree work = ckpt.params;
  for (std::size_t t = 1; t <= opts.trials; ++t) {
    const std::uint64_t seed = opts.seed_base + t;
    FaultPlan plan = generate_plan(ckpt.params, budget, opts.region, seed, filter);
    apply_plan_in_place(work, plan);
    const AccuracyResult r = evaluate_accuracy(ckpt.model, work, test, opts.batch_size);
    apply_plan_in_place(work, plan);
    st.accuracies.push_back(r.accuracy);
    st.seeds.push_back(seed);
    st.nonfinite += r.nonfinite;
    if (opts.on_trial) opts.on_trial({budget, t, std::move(plan), r.accuracy, r.nonfinite});
  }
  summarize(st);
  return st;
}

}  // namespace

std::vector<TrialStats> random_bitflip_eval(const Checkpoint& ckpt, const Dataset& test,
                                            std::span<const std::size_t> budgets, const FaultRunOptions& opts,
                                            const KeyFilter& filter) {
  check_trials(opts);
  if (budgets.empty()) throw ConfigError("at least one budget is required");
  const double baseline = evaluate_accuracy(ckpt.model, ckpt.params, test, opts.batch_size).accuracy;
  std::vector<TrialStats> out;
  for (std::size_t k : budgets) out.push_back(run_budget(ckpt, test, k, baseline, opts, filter));
  return out;
}

std::vector<KeyFilter> default_group_filters() {
  std::vector<KeyFilter> out;
  for (LayerGroup g : kAllLayerGroups) out.push_back(KeyFilter::group(g));
  return out;
}

std::vector<GroupStats> layerwise_bitflip_eval(const Checkpoint& ckpt, const Dataset& test,
                                               std::span<const std::size_t> budgets, const FaultRunOptions& opts,
                                               std::span<const KeyFilter> groups) {
  check_trials(opts);
  if (budgets.empty()) throw ConfigError("at least one budget is required");
  if (groups.empty()) throw ConfigError("at least one group is required");
  for (const KeyFilter& g : groups) generate_plan(ckpt.params, 0, opts.region, 0, g);
  const double baseline = evaluate_accuracy(ckpt.model, ckpt.params, test, opts.batch_size).accuracy;
  std::vector<GroupStats> out;
  for (const KeyFilter& g : groups) {
    GroupStats gs{g.describe(), {}};
    for (std::size_t k : budgets) gs.per_budget.push_back(run_budget(ckpt, test, k, baseline, opts, g));
    out.push_back(std::move(gs));
  }
  return out;
}

std::vector<WorstCase> worstcase_bitflip_search(const Checkpoint& ckpt, const Dataset& test,
                                                std::span<const std::size_t> budgets, const SearchOptions& opts,
                                                const KeyFilter& filter) {
  if (opts.iterations < 1) throw ConfigError("iterations must be >= 1");
  if (opts.fast_batches < 1 || opts.fast_batches > test.num_batches(opts.batch_size)) {
    throw ConfigError("fast_batches must lie in [1, " + std::to_string(test.num_batches(opts.batch_size)) + "]");
  }
  const Dataset fast = test.slice(0, std::min(test.size(), opts.fast_batches * opts.batch_size));
  std::vector<WorstCase> out;
  ParameterTree work = ckpt.params;
  for (std::size_t k : budgets) {
    WorstCase best;
    best.budget = k;
    bool have = false;
    for (std::size_t i = 1; i <= opts.iterations; ++i) {
      const std::uint64_t seed = opts.seed_base + i;
      FaultPlan plan = generate_plan(ckpt.params, k, opts.region, seed, filter);
      apply_plan_in_place(work, plan);
      const AccuracyResult r = evaluate_accuracy(ckpt.model, work, fast, opts.batch_size);
      apply_plan_in_place(work, plan);
      if (opts.on_candidate) opts.on_candidate({k, i, plan, r.accuracy, r.nonfinite});
      if (!have || r.accuracy < best.fast_accuracy) {
        have = true;
        best.best_seed = seed;
        best.fast_accuracy = r.accuracy;
        best.plan = std::move(plan);
      }
    }
    apply_plan_in_place(work, best.plan);
    const AccuracyResult full = evaluate_accuracy(ckpt.model, work, test, opts.batch_size);
    apply_plan_in_place(work, best.plan);
    best.full_accuracy = full.accuracy;
    best.nonfinite = full.nonfinite;
    out.push_back(std::move(best));
  }
  return out;
}

FaultPlan generate_activation_plan(std::size_t numel, std::size_t budget, BitRegion region, std::uint64_t seed) {
  const BitRange bits = bit_range(region);
  FaultPlan plan;
  plan.seed = seed;
  plan.region = region;
  plan.filter = "activation";
  for (std::uint64_t u : draw_distinct(static_cast<std::uint64_t>(numel) * bits.count, budget, seed)) {
    plan.targets.push_back({"", static_cast<std::size_t>(u / bits.count),
                            bits.lowest + static_cast<unsigned>(u % bits.count)});
  }
  return plan;
}

ActivationHook activation_fault_hook(LayerGroup target, std::size_t budget, BitRegion region, std::uint64_t seed) {
  const ActivationSite site = activation_site_of(target);
  return {site, [budget, region, seed](Tensor& t) {
            const FaultPlan plan = generate_activation_plan(t.numel(), budget, region, seed);
            for (const auto& f : plan.targets) t.set_bits(f.element, flip_bit(t.bits(f.element), f.bit));
          }};
}

Tensor inject_activation_faults(const ModelConfig& cfg, const ParameterTree& params, const Tensor& x,
                                LayerGroup target, std::size_t budget, BitRegion region, std::uint64_t seed) {
  const ActivationHook hook = activation_fault_hook(target, budget, region, seed);
  return forward(cfg, params, x, std::span<const ActivationHook>(&hook, 1));
}

std::vector<TrialStats> activation_bitflip_eval(const Checkpoint& ckpt, const Dataset& test, LayerGroup target,
                                                std::span<const std::size_t> budgets,
                                                const FaultRunOptions& opts) {
  check_trials(opts);
  if (budgets.empty()) throw ConfigError("at least one budget is required");
  activation_site_of(target);
  const double baseline = evaluate_accuracy(ckpt.model, ckpt.params, test, opts.batch_size).accuracy;
  std::vector<TrialStats> out;
  for (std::size_t k : budgets) {
    TrialStats st;
    st.budget = k;
    st.baseline = baseline;
    for (std::size_t t = 1; t <= opts.trials; ++t) {
      const std::uint64_t seed = opts.seed_base + t;
      std::size_t correct = 0, nonfinite = 0;
      for (std::size_t b = 0; b < test.num_batches(opts.batch_size); ++b) {
        const Dataset batch = test.batch(b, opts.batch_size);
        const ActivationHook hook = activation_fault_hook(target, k, opts.region, derive_seed(seed, b));
        const Predictions p = predict(ckpt.model, ckpt.params, batch.images, std::span<const ActivationHook>(&hook, 1));
        nonfinite += p.nonfinite_rows;
        for (std::size_t i = 0; i < p.labels.size(); ++i) correct += p.labels[i] == batch.labels[i] ? 1 : 0;
      }
      const double acc = static_cast<double>(correct) / static_cast<double>(test.size());
      st.accuracies.push_back(acc);
      st.seeds.push_back(seed);
      st.nonfinite += nonfinite;
      if (opts.on_trial) {
        FaultPlan plan;
        plan.seed = seed;
        plan.region = opts.region;
        plan.filter = std::string("activation:") + std::string(to_string(target));
        opts.on_trial({k, t, std::move(plan), acc, nonfinite});
      }
    }
    summarize(st);
    out.push_back(std::move(st));
  }
  return out;
}

}  // namespace rssm
