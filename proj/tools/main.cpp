#include <iostream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "robustssm/errors.hpp"
#include "robustssm/harness.hpp"

namespace {

struct FlagSpec {
  const char* flag;
  const char* key;
  const char* help;
};

// Subcommand flags and the config keys they set.
const std::map<std::string, std::vector<FlagSpec>>& flag_table() {
  static const std::map<std::string, std::vector<FlagSpec>> table{
      {"train",
       {{"--epochs", "train.epochs", "training epochs"},
        {"--batch-size", "train.batch_size", "minibatch size"},
        {"--lr", "train.learning_rate", "Adam learning rate"}}},
      {"eval", {}},
      {"attack",
       {{"--eps", "attack.epsilons", "comma-separated epsilons, fractions like 4/255 allowed"},
        {"--alpha", "attack.alpha", "PGD step size (0 = 2.5*eps/steps)"},
        {"--steps", "attack.steps", "PGD steps"},
        {"--attack", "attack.kinds", "fgsm, pgd or both (comma-separated)"}}},
      {"patchdrop",
       {{"--ratios", "patchdrop.ratios", "comma-separated drop ratios"},
        {"--grid", "patchdrop.grid", "patches per side"},
        {"--baseline", "patchdrop.fill", "fill value of dropped patches"},
        {"--seed", "patchdrop.seed", "drop-set seed"}}},
      {"corrupt",
       {{"--family", "corruption.families", "noise, blur or both (comma-separated)"},
        {"--severity", "corruption.severities", "severities 1..5 (comma-separated)"},
        {"--seed", "corruption.seed", "noise seed"}}},
      {"bitflip-random",
       {{"--budgets", "faults.budgets", "comma-separated flip budgets"},
        {"--trials", "faults.trials", "trials per budget"},
        {"--region", "faults.region", "sign, exponent, mantissa or any"},
        {"--filter", "faults.filter", "all, a layer group, or a key substring"},
        {"--manifests", "faults.manifest_dir", "directory for per-trial plan manifests"}}},
      {"bitflip-layerwise",
       {{"--budgets", "faults.budgets", "comma-separated flip budgets"},
        {"--trials", "faults.trials", "trials per budget"},
        {"--region", "faults.region", "sign, exponent, mantissa or any"},
        {"--groups", "faults.groups", "comma-separated layer groups"},
        {"--manifests", "faults.manifest_dir", "directory for per-trial plan manifests"}}},
      {"bitflip-worst",
       {{"--budgets", "faults.budgets", "comma-separated flip budgets"},
        {"--iters", "faults.iterations", "search candidates per budget"},
        {"--fast-batches", "faults.fast_batches", "batches used to rank candidates"},
        {"--filter", "faults.filter", "all, a layer group, or a key substring"},
        {"--region", "faults.search_region", "sign, exponent, mantissa or any"},
        {"--manifests", "faults.manifest_dir", "directory for candidate plan manifests"}}},
      {"bitflip-activations",
       {{"--group", "faults.activation_group", "layer group whose output is faulted"},
        {"--budget", "faults.budgets", "comma-separated flip budgets"},
        {"--trials", "faults.trials", "trials per budget"},
        {"--region", "faults.region", "sign, exponent, mantissa or any"}}},
      {"report-merge", {}},
  };
  return table;
}

const char* kDescriptions[][2] = {
    {"train", "train the model and save the best-validation checkpoint"},
    {"eval", "clean test accuracy of a checkpoint"},
    {"attack", "FGSM / PGD epsilon sweep"},
    {"patchdrop", "accuracy under random patch occlusion"},
    {"corrupt", "accuracy under Gaussian noise and blur"},
    {"bitflip-random", "random weight bit flips over all parameters"},
    {"bitflip-layerwise", "random weight bit flips per layer group"},
    {"bitflip-worst", "random-search worst-case weight bit flips"},
    {"bitflip-activations", "random bit flips in one module's output"},
    {"report-merge", "concatenate per-dataset CSV reports"},
};

const char* kFooter =
    "Config files hold 'key = value' lines; '[section]' prefixes following keys\n"
    "with 'section.'; '#' and ';' start comments. --set key=value overrides the\n"
    "file, and subcommand flags override both. Run with --list-keys to print\n"
    "every key with its default.\n\n";

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robustness harness for a compact selective-scan image classifier"};
  app.footer(std::string(kFooter) + rssm::exit_code_table());
  app.require_subcommand(0, 1);

  std::vector<std::string> config_files, overrides;
  std::string out, checkpoint, seed;
  bool list_keys = false;
  app.add_option("--config", config_files, "config file (repeatable, applied in order)");
  app.add_option("--set", overrides, "key=value override (repeatable)");
  app.add_option("--out", out, "output directory");
  app.add_option("--checkpoint", checkpoint, "checkpoint path (default <out>/model.ckpt)");
  app.add_option("--seed", seed, "global seed");
  app.add_flag("--list-keys", list_keys, "print every config key with its default and exit");

  std::map<std::string, std::map<std::string, std::string>> values;
  std::map<std::string, CLI::App*> subs;
  bool random_start = false;
  std::vector<std::string> merge_inputs;
  std::string merge_output;
  for (const auto& [name, help] : kDescriptions) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->fallthrough();
    subs[name] = sub;
    for (const FlagSpec& f : flag_table().at(name)) sub->add_option(f.flag, values[name][f.key], f.help);
  }
  subs["attack"]->add_flag("--random-start", random_start, "start PGD from a uniform point in the ball");
  subs["report-merge"]->add_option("inputs", merge_inputs, "CSV reports to merge")->required();
  subs["report-merge"]->add_option("--output", merge_output, "output stem (default <out>/merged)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? rssm::kExitOk : rssm::kExitUsage;
  }

  rssm::RunRequest req;
  try {
    if (list_keys) {
      std::cout << req.config.canonical();
      return rssm::kExitOk;
    }
    if (app.get_subcommands().empty()) {
      std::cerr << "error: a subcommand is required\n" << app.help();
      return rssm::kExitUsage;
    }
    req.subcommand = app.get_subcommands().front()->get_name();
    for (const auto& f : config_files) rssm::apply_config_file(req.config, f);
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) throw rssm::ConfigError("--set expects key=value, got '" + o + "'");
      req.config.set(o.substr(0, eq), o.substr(eq + 1));
    }
    if (!out.empty()) req.config.set("out", out);
    if (!checkpoint.empty()) req.config.set("checkpoint", checkpoint);
    if (!seed.empty()) req.config.set("seed", seed);
    for (const auto& [key, value] : values[req.subcommand]) {
      if (!value.empty()) req.config.set(key, value);
    }
    if (random_start) req.config.set("attack.random_start", "true");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return rssm::exit_code_for(e);
  }
  req.inputs = merge_inputs;
  req.merge_output = merge_output;
  return rssm::run(req, std::cout, std::cerr);
}
