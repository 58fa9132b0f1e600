#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "robustssm/attacks.hpp"
#include "robustssm/corruptions.hpp"
#include "robustssm/faults.hpp"
#include "robustssm/model.hpp"
#include "robustssm/train.hpp"

namespace rssm {

struct DataSettings {
  // Empty selects the synthetic generator.
  std::string npz;
  // Dataset label used in reports; defaults to the archive stem or
  // "synthetic".
  std::string name;
  std::size_t classes = 4;
  std::size_t samples_per_class = 200;
  std::size_t eval_per_class = 100;
  std::size_t image_size = 28;
  std::uint64_t seed = 7;
  double contrast = 0.12;
};

struct FaultSettings {
  std::vector<std::size_t> budgets{1, 2, 4, 8, 16};
  std::size_t trials = 5;
  BitRegion region = BitRegion::any;
  std::vector<std::string> groups{"patch_embed", "stage0",          "stage1",     "stage2",
                                  "stage3",      "classifier_head", "ssm_related"};
  std::string filter = "all";
  std::size_t iterations = 200;
  std::size_t fast_batches = 1;
  BitRegion search_region = BitRegion::exponent;
  std::string activation_group = "classifier_head";
  // Directory for per-trial plan manifests; empty disables them.
  std::string manifest_dir;
};

struct ExperimentConfig {
  std::uint64_t seed = 42;
  std::string out = "out";
  std::string checkpoint;  // empty -> <out>/model.ckpt
  std::size_t eval_batch_size = 256;

  DataSettings data;
  ModelConfig model;  // image_size, in_channels and num_classes follow the data
  TrainConfig train;
  std::optional<std::uint64_t> train_seed;

  std::vector<double> epsilons{0.0, 1.0 / 255.0, 2.0 / 255.0, 4.0 / 255.0, 8.0 / 255.0};
  std::vector<std::string> attacks{"fgsm", "pgd"};
  AttackConfig attack;
  std::optional<std::uint64_t> attack_seed;

  SeveritySchedule severities;
  std::vector<std::string> families{"noise", "blur"};
  std::vector<int> severity_levels{1, 2, 3, 4, 5};
  std::optional<std::uint64_t> corruption_seed;

  std::vector<double> ratios{0.0, 0.0625, 0.1875, 0.25, 0.375, 0.5, 0.5625};
  PatchGrid patch;
  std::optional<std::uint64_t> patchdrop_seed;

  FaultSettings faults;

  // Applies one "key = value" assignment. Throws ConfigError naming the key
  // when it is unknown or the value does not parse.
  void set(std::string_view key, std::string_view value);
  // Every key with its resolved value, sorted by key, one "key = value" per
  // line. Two configs with the same canonical text run identically.
  std::string canonical() const;
  // 16 hex digits of FNV-1a over canonical().
  std::string hash() const;
  // Throws ConfigError on inconsistent settings.
  void validate() const;

  std::string checkpoint_path() const;
  std::uint64_t train_seed_value() const;
  std::uint64_t attack_seed_value() const;
  std::uint64_t corruption_seed_value() const;
  std::uint64_t patchdrop_seed_value() const;

  static std::vector<std::string> keys();
};

// Parses the config grammar:
//   # comment      ; comment
//   [section]      prefixes following keys with "section."
//   key = value    dotted keys allowed; surrounding whitespace trimmed
// Throws ConfigError with the line number on malformed lines.
void apply_config_text(ExperimentConfig& cfg, std::string_view text);
void apply_config_file(ExperimentConfig& cfg, const std::string& path);

// Accepts decimal numbers and fractions such as "4/255".
double parse_real(std::string_view s);

}  // namespace rssm
