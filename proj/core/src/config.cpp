#include "robustssm/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "robustssm/errors.hpp"
#include "robustssm/report.hpp"
#include "robustssm/rng.hpp"

namespace rssm {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  s = trim(s);
  if (s.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = s.find(',', start);
    out.push_back(trim(s.substr(start, comma == std::string_view::npos ? s.npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename T>
T parse_integer(std::string_view s) {
  s = trim(s);
  T v{};
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc{} || r.ptr != s.data() + s.size()) {
    throw ConfigError("'" + std::string(s) + "' is not a valid integer");
  }
  return v;
}

bool parse_bool(std::string_view s) {
  s = trim(s);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("'" + std::string(s) + "' is not a boolean");
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ",") + s;
  return out;
}

template <typename T, typename F>
std::string join_map(const std::vector<T>& v, F f) {
  std::string out;
  for (const auto& x : v) out += (out.empty() ? "" : ",") + f(x);
  return out;
}

std::string opt_seed(const std::optional<std::uint64_t>& s) { return s ? std::to_string(*s) : "auto"; }

std::optional<std::uint64_t> parse_opt_seed(std::string_view v) {
  if (trim(v) == "auto") return std::nullopt;
  return parse_integer<std::uint64_t>(v);
}

std::vector<std::string> parse_names(std::string_view v) {
  std::vector<std::string> out;
  for (auto s : split_list(v)) out.emplace_back(s);
  return out;
}

template <std::size_t N>
std::array<double, N> parse_array(std::string_view v) {
  const auto items = split_list(v);
  if (items.size() != N) throw ConfigError("expected " + std::to_string(N) + " comma-separated values");
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = parse_real(items[i]);
  return out;
}

struct Field {
  std::function<void(ExperimentConfig&, std::string_view)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define RSSM_INT(path, member)                                                                            \
  {                                                                                                        \
    path, {                                                                                                \
      [](ExperimentConfig& c, std::string_view v) { c.member = parse_integer<decltype(c.member)>(v); },   \
          [](const ExperimentConfig& c) { return std::to_string(c.member); }                               \
    }                                                                                                      \
  }
#define RSSM_REAL(path, member)                                                                                  \
  {                                                                                                               \
    path, {                                                                                                       \
      [](ExperimentConfig& c, std::string_view v) { c.member = static_cast<decltype(c.member)>(parse_real(v)); }, \
          [](const ExperimentConfig& c) { return format_number(static_cast<double>(c.member)); }                  \
    }                                                                                                             \
  }
#define RSSM_TEXT(path, member)                                                                   \
  {                                                                                                \
    path, {                                                                                        \
      [](ExperimentConfig& c, std::string_view v) { c.member = std::string(trim(v)); },            \
          [](const ExperimentConfig& c) { return c.member; }                                       \
    }                                                                                              \
  }
#define RSSM_SEED(path, member)                                                                  \
  {                                                                                               \
    path, {                                                                                       \
      [](ExperimentConfig& c, std::string_view v) { c.member = parse_opt_seed(v); },              \
          [](const ExperimentConfig& c) { return opt_seed(c.member); }                            \
    }                                                                                             \
  }

const std::map<std::string, Field, std::less<>>& registry() {
  static const std::map<std::string, Field, std::less<>> fields{
      RSSM_INT("seed", seed),
      RSSM_TEXT("out", out),
      RSSM_TEXT("checkpoint", checkpoint),
      RSSM_INT("eval.batch_size", eval_batch_size),

      RSSM_TEXT("data.npz", data.npz),
      RSSM_TEXT("data.name", data.name),
      RSSM_INT("data.classes", data.classes),
      RSSM_INT("data.samples_per_class", data.samples_per_class),
      RSSM_INT("data.eval_per_class", data.eval_per_class),
      RSSM_INT("data.image_size", data.image_size),
      RSSM_INT("data.seed", data.seed),
      RSSM_REAL("data.contrast", data.contrast),

      RSSM_INT("model.patch_size", model.patch_size),
      RSSM_INT("model.embed_dim", model.embed_dim),
      RSSM_INT("model.state_dim", model.state_dim),
      RSSM_INT("model.conv_kernel", model.conv_kernel),
      {"model.stage_depths",
       {[](ExperimentConfig& c, std::string_view v) {
          const auto items = split_list(v);
          if (items.size() != 4) throw ConfigError("stage_depths needs exactly 4 entries");
          for (std::size_t i = 0; i < 4; ++i) c.model.stage_depths[i] = parse_integer<std::size_t>(items[i]);
        },
        [](const ExperimentConfig& c) {
          return join_map(std::vector<std::size_t>(c.model.stage_depths.begin(), c.model.stage_depths.end()),
                          [](std::size_t d) { return std::to_string(d); });
        }}},

      RSSM_INT("train.epochs", train.epochs),
      RSSM_INT("train.batch_size", train.batch_size),
      RSSM_REAL("train.learning_rate", train.learning_rate),
      RSSM_REAL("train.beta1", train.beta1),
      RSSM_REAL("train.beta2", train.beta2),
      RSSM_REAL("train.weight_decay", train.weight_decay),
      RSSM_SEED("train.seed", train_seed),

      {"attack.epsilons",
       {[](ExperimentConfig& c, std::string_view v) {
          c.epsilons.clear();
          for (auto s : split_list(v)) c.epsilons.push_back(parse_real(s));
        },
        [](const ExperimentConfig& c) { return join_map(c.epsilons, format_number); }}},
      {"attack.kinds",
       {[](ExperimentConfig& c, std::string_view v) {
          c.attacks = parse_names(v);
          for (const auto& a : c.attacks) parse_attack_kind(a);
        },
        [](const ExperimentConfig& c) { return join(c.attacks); }}},
      RSSM_REAL("attack.alpha", attack.alpha),
      RSSM_INT("attack.steps", attack.steps),
      {"attack.random_start",
       {[](ExperimentConfig& c, std::string_view v) { c.attack.random_start = parse_bool(v); },
        [](const ExperimentConfig& c) { return std::string(c.attack.random_start ? "true" : "false"); }}},
      RSSM_SEED("attack.seed", attack_seed),

      {"corruption.noise_sigmas",
       {[](ExperimentConfig& c, std::string_view v) { c.severities.noise_sigma = parse_array<5>(v); },
        [](const ExperimentConfig& c) {
          return join_map(std::vector<double>(c.severities.noise_sigma.begin(), c.severities.noise_sigma.end()),
                          format_number);
        }}},
      {"corruption.blur_sigmas",
       {[](ExperimentConfig& c, std::string_view v) { c.severities.blur_sigma = parse_array<5>(v); },
        [](const ExperimentConfig& c) {
          return join_map(std::vector<double>(c.severities.blur_sigma.begin(), c.severities.blur_sigma.end()),
                          format_number);
        }}},
      {"corruption.families",
       {[](ExperimentConfig& c, std::string_view v) {
          c.families = parse_names(v);
          for (const auto& f : c.families) parse_corruption_family(f);
        },
        [](const ExperimentConfig& c) { return join(c.families); }}},
      {"corruption.severities",
       {[](ExperimentConfig& c, std::string_view v) {
          c.severity_levels.clear();
          for (auto s : split_list(v)) c.severity_levels.push_back(parse_integer<int>(s));
        },
        [](const ExperimentConfig& c) {
          return join_map(c.severity_levels, [](int s) { return std::to_string(s); });
        }}},
      RSSM_SEED("corruption.seed", corruption_seed),

      {"patchdrop.ratios",
       {[](ExperimentConfig& c, std::string_view v) {
          c.ratios.clear();
          for (auto s : split_list(v)) c.ratios.push_back(parse_real(s));
        },
        [](const ExperimentConfig& c) { return join_map(c.ratios, format_number); }}},
      RSSM_INT("patchdrop.grid", patch.grid_n),
      RSSM_REAL("patchdrop.fill", patch.fill),
      RSSM_SEED("patchdrop.seed", patchdrop_seed),

      {"faults.budgets",
       {[](ExperimentConfig& c, std::string_view v) {
          c.faults.budgets.clear();
          for (auto s : split_list(v)) c.faults.budgets.push_back(parse_integer<std::size_t>(s));
        },
        [](const ExperimentConfig& c) {
          return join_map(c.faults.budgets, [](std::size_t k) { return std::to_string(k); });
        }}},
      RSSM_INT("faults.trials", faults.trials),
      {"faults.region",
       {[](ExperimentConfig& c, std::string_view v) { c.faults.region = parse_bit_region(trim(v)); },
        [](const ExperimentConfig& c) { return std::string(to_string(c.faults.region)); }}},
      {"faults.groups",
       {[](ExperimentConfig& c, std::string_view v) { c.faults.groups = parse_names(v); },
        [](const ExperimentConfig& c) { return join(c.faults.groups); }}},
      RSSM_TEXT("faults.filter", faults.filter),
      RSSM_INT("faults.iterations", faults.iterations),
      RSSM_INT("faults.fast_batches", faults.fast_batches),
      {"faults.search_region",
       {[](ExperimentConfig& c, std::string_view v) { c.faults.search_region = parse_bit_region(trim(v)); },
        [](const ExperimentConfig& c) { return std::string(to_string(c.faults.search_region)); }}},
      RSSM_TEXT("faults.activation_group", faults.activation_group),
      RSSM_TEXT("faults.manifest_dir", faults.manifest_dir),
  };
  return fields;
}

#undef RSSM_INT
#undef RSSM_REAL
#undef RSSM_TEXT
#undef RSSM_SEED

// Keys that only choose where files go; they do not change any result.
bool affects_results(std::string_view key) {
  return key != "out" && key != "checkpoint" && key != "faults.manifest_dir";
}

}  // namespace

double parse_real(std::string_view s) {
  s = trim(s);
  auto number = [&](std::string_view t) {
    double v = 0.0;
    auto r = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || r.ec != std::errc{} || r.ptr != t.data() + t.size()) {
      throw ConfigError("'" + std::string(s) + "' is not a valid number");
    }
    return v;
  };
  const std::size_t slash = s.find('/');
  if (slash == std::string_view::npos) return number(s);
  const double den = number(trim(s.substr(slash + 1)));
  if (den == 0.0) throw ConfigError("'" + std::string(s) + "' divides by zero");
  return number(trim(s.substr(0, slash))) / den;
}

void ExperimentConfig::set(std::string_view key, std::string_view value) {
  const auto it = registry().find(key);
  if (it == registry().end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  try {
    it->second.set(*this, value);
  } catch (const Error& e) {
    throw ConfigError("invalid value for '" + std::string(key) + "': " + e.what());
  }
}

std::vector<std::string> ExperimentConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [k, f] : registry()) out.push_back(k);
  return out;
}

std::string ExperimentConfig::canonical() const {
  std::string out;
  for (const auto& [k, f] : registry()) {
    if (affects_results(k)) out += k + " = " + f.get(*this) + "\n";
  }
  return out;
}

std::string ExperimentConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical())));
  return buf;
}

void ExperimentConfig::validate() const {
  if (eval_batch_size == 0) throw ConfigError("eval.batch_size must be positive");
  if (data.npz.empty()) {
    if (data.classes < 2) throw ConfigError("data.classes must be >= 2");
    if (data.samples_per_class == 0 || data.eval_per_class == 0) {
      throw ConfigError("data.samples_per_class and data.eval_per_class must be positive");
    }
  }
  train.validate();
  AttackConfig a = attack;
  for (double e : epsilons) {
    a.epsilon = e;
    a.validate();
  }
  if (!std::is_sorted(epsilons.begin(), epsilons.end())) throw ConfigError("attack.epsilons must be ascending");
  severities.validate();
  if (!severities.strictly_increasing()) {
    throw ConfigError("corruption severities must be strictly increasing within each family");
  }
  for (int s : severity_levels) {
    if (s < 1 || s > 5) throw ConfigError("corruption.severities entries must lie in 1..5");
  }
  for (double r : ratios) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("patchdrop.ratios entries must lie in [0, 1]");
  }
  if (patch.grid_n == 0) throw ConfigError("patchdrop.grid must be positive");
  if (faults.trials == 0) throw ConfigError("faults.trials must be >= 1");
  if (faults.iterations == 0) throw ConfigError("faults.iterations must be >= 1");
  if (faults.fast_batches == 0) throw ConfigError("faults.fast_batches must be >= 1");
  for (const auto& g : faults.groups) KeyFilter::parse(g);
}

std::string ExperimentConfig::checkpoint_path() const {
  return checkpoint.empty() ? (std::filesystem::path(out) / "model.ckpt").string() : checkpoint;
}

std::uint64_t ExperimentConfig::train_seed_value() const { return train_seed.value_or(derive_seed(seed, "train")); }
std::uint64_t ExperimentConfig::attack_seed_value() const {
  return attack_seed.value_or(derive_seed(seed, "attack"));
}
std::uint64_t ExperimentConfig::corruption_seed_value() const {
  return corruption_seed.value_or(derive_seed(seed, "corruption"));
}
std::uint64_t ExperimentConfig::patchdrop_seed_value() const {
  return patchdrop_seed.value_or(derive_seed(seed, "patchdrop"));
}

void apply_config_text(ExperimentConfig& cfg, std::string_view text) {
  std::string section;
  std::size_t pos = 0, line = 0;
  while (pos <= text.size()) {
    ++line;
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const std::string_view l = trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    if (l.empty() || l.front() == '#' || l.front() == ';') continue;
    if (l.front() == '[') {
      if (l.back() != ']') throw ConfigError("line " + std::to_string(line) + ": unterminated section header");
      section = std::string(trim(l.substr(1, l.size() - 2)));
      continue;
    }
    const std::size_t eq = l.find('=');
    if (eq == std::string_view::npos) throw ConfigError("line " + std::to_string(line) + ": expected key = value");
    const std::string_view key = trim(l.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(line) + ": empty key");
    const std::string full = section.empty() ? std::string(key) : section + "." + std::string(key);
    try {
      cfg.set(full, trim(l.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line) + ": " + e.what());
    }
  }
}

void apply_config_file(ExperimentConfig& cfg, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_config_text(cfg, ss.str());
}

}  // namespace rssm
