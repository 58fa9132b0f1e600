#include "robustssm/harness.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "robustssm/attacks.hpp"
#include "robustssm/corruptions.hpp"
#include "robustssm/errors.hpp"
#include "robustssm/faults.hpp"
#include "robustssm/medmnist.hpp"
#include "robustssm/train.hpp"

namespace fs = std::filesystem;

namespace rssm {

int exit_code_for(const std::exception& e) noexcept {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const MissingCheckpointError*>(&e)) return kExitMissingCheckpoint;
  if (dynamic_cast<const FormatError*>(&e) || dynamic_cast<const SchemaError*>(&e)) return kExitDataFormat;
  if (dynamic_cast<const IoError*>(&e)) return kExitIo;
  return kExitFailure;
}

std::string exit_code_table() {
  return "Exit codes:\n"
         "  0  success\n"
         "  1  other failure (training divergence, invalid plan, ...)\n"
         "  2  usage error (unknown subcommand or flag)\n"
         "  3  invalid config key or value\n"
         "  4  checkpoint missing\n"
         "  5  malformed data, checkpoint or report file\n"
         "  6  file-system I/O error\n";
}

const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names{"train",           "eval",           "attack",
                                              "patchdrop",       "corrupt",        "bitflip-random",
                                              "bitflip-layerwise", "bitflip-worst", "bitflip-activations",
                                              "report-merge"};
  return names;
}

std::string dataset_name(const ExperimentConfig& cfg) {
  if (!cfg.data.name.empty()) return cfg.data.name;
  if (cfg.data.npz.empty()) return "synthetic";
  std::string stem = fs::path(cfg.data.npz).stem().string();
  std::transform(stem.begin(), stem.end(), stem.begin(), [](unsigned char c) { return std::tolower(c); });
  return stem;
}

DatasetSplits load_data(const ExperimentConfig& cfg) {
  if (!cfg.data.npz.empty()) return load_medmnist(cfg.data.npz);
  SyntheticSpec spec;
  spec.classes = cfg.data.classes;
  spec.samples_per_class = cfg.data.samples_per_class;
  spec.image_size = cfg.data.image_size;
  spec.seed = cfg.data.seed;
  spec.contrast = cfg.data.contrast;
  return synthetic_splits(spec, cfg.data.eval_per_class);
}

namespace {

Checkpoint require_checkpoint(const ExperimentConfig& cfg) {
  const std::string path = cfg.checkpoint_path();
  if (!fs::exists(path)) {
    throw MissingCheckpointError("checkpoint '" + path + "' not found; run the train subcommand first");
  }
  return load_checkpoint(path);
}

void stamp(EvalReport& r, const ExperimentConfig& cfg, const std::string& seeds) {
  // Keep any baseline produced by the evaluation itself, after the fixed keys.
  auto old = std::move(r.header);
  r.header.clear();
  r.set_header("tool_version", std::string(tool_version()));
  r.set_header("config_hash", cfg.hash());
  r.set_header("dataset", dataset_name(cfg));
  r.set_header("seeds", seeds);
  for (auto& [k, v] : old) r.set_header(k, v);
}

std::string data_seeds(const ExperimentConfig& cfg) {
  return cfg.data.npz.empty() ? "data=" + std::to_string(cfg.data.seed) : std::string("data=archive");
}

void write_manifest(const ExperimentConfig& cfg, const std::string& name, const FaultPlan& plan) {
  if (cfg.faults.manifest_dir.empty()) return;
  fs::create_directories(cfg.faults.manifest_dir);
  const fs::path path = fs::path(cfg.faults.manifest_dir) / (name + ".tsv");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
  out << format_manifest(plan);
}

void check_matches(const Checkpoint& ckpt, const Dataset& test) {
  const ModelConfig& m = ckpt.model;
  if (test.channels() != m.in_channels || test.height() != m.image_size || test.width() != m.image_size ||
      test.num_classes > m.num_classes) {
    throw ConfigError("checkpoint model does not match the configured dataset");
  }
}

std::string fault_seeds(std::size_t trials) {
  return "plan seed 1234+t for t=1.." + std::to_string(trials);
}

void stats_report(ReportKind kind, const std::string& name, const std::vector<std::string>& prefix,
                  const std::vector<TrialStats>& stats, BitRegion region, EvalReport& r) {
  for (const TrialStats& s : stats) {
    std::vector<std::string> labels = prefix;
    labels.emplace_back(to_string(region));
    labels.push_back(std::to_string(s.budget));
    r.rows.push_back({name, std::move(labels), s.mean, s.std, s.accuracies.size(), s.nonfinite});
  }
  r.kind = kind;
  if (!stats.empty()) r.set_header("baseline", format_number(stats.front().baseline));
}

EvalReport do_train(const ExperimentConfig& cfg, std::ostream& log) {
  const DatasetSplits data = load_data(cfg);
  ModelConfig model = cfg.model;
  model.image_size = data.train.height();
  model.in_channels = data.train.channels();
  model.num_classes = data.train.num_classes;
  TrainConfig tc = cfg.train;
  tc.seed = cfg.train_seed_value();
  tc.checkpoint_path = cfg.checkpoint_path();
  const TrainResult result = train(model, tc, data.train, data.val, [&](std::size_t e, std::size_t s, double loss) {
    if (s == 0) log << "epoch " << e << " first-step loss " << format_number(loss) << "\n";
  });
  for (const EpochLog& e : result.history) {
    log << "epoch " << e.epoch << " mean loss " << format_number(e.mean_loss) << " val accuracy "
        << format_number(e.val_accuracy) << "\n";
  }
  if (fs::path(tc.checkpoint_path).has_parent_path()) fs::create_directories(fs::path(tc.checkpoint_path).parent_path());
  save_checkpoint(result.best, tc.checkpoint_path);
  log << "saved epoch " << result.best.epoch << " to " << tc.checkpoint_path << "\n";

  EvalReport r;
  r.kind = ReportKind::clean;
  const std::string name = dataset_name(cfg);
  const AccuracyResult test = evaluate_accuracy(model, result.best.params, data.test, cfg.eval_batch_size);
  r.set_header("best_epoch", std::to_string(result.best.epoch));
  r.rows.push_back({name, {"val"}, result.best.val_accuracy, 0.0, 1, 0});
  r.rows.push_back({name, {"test"}, test.accuracy, 0.0, 1, test.nonfinite});
  stamp(r, cfg, "train=" + std::to_string(tc.seed) + " " + data_seeds(cfg));
  return r;
}

EvalReport do_eval(const ExperimentConfig& cfg) {
  const Checkpoint ckpt = require_checkpoint(cfg);
  const Dataset test = load_data(cfg).test;
  check_matches(ckpt, test);
  const AccuracyResult a = evaluate_accuracy(ckpt.model, ckpt.params, test, cfg.eval_batch_size);
  EvalReport r;
  r.kind = ReportKind::clean;
  r.rows.push_back({dataset_name(cfg), {"test"}, a.accuracy, 0.0, 1, a.nonfinite});
  stamp(r, cfg, data_seeds(cfg));
  return r;
}

EvalReport do_attack(const ExperimentConfig& cfg) {
  const Checkpoint ckpt = require_checkpoint(cfg);
  const Dataset test = load_data(cfg).test;
  check_matches(ckpt, test);
  AttackConfig ac = cfg.attack;
  ac.seed = cfg.attack_seed_value();
  EvalReport r;
  r.kind = ReportKind::whitebox;
  const std::string name = dataset_name(cfg);
  r.set_header("baseline", format_number(evaluate_accuracy(ckpt.model, ckpt.params, test, cfg.eval_batch_size).accuracy));
  for (const std::string& kind_name : cfg.attacks) {
    const AttackKind kind = parse_attack_kind(kind_name);
    for (double eps : cfg.epsilons) {
      AttackConfig one = ac;
      one.epsilon = eps;
      const bool single = kind == AttackKind::fgsm;
      const AccuracyResult a = attacked_accuracy(ckpt.model, ckpt.params, test, kind, one, cfg.eval_batch_size);
      r.rows.push_back({name,
                        {kind_name, format_number(eps), std::to_string(single ? 1 : one.steps),
                         format_number(single ? eps : one.step_size())},
                        a.accuracy, 0.0, 1, a.nonfinite});
    }
  }
  stamp(r, cfg, ac.random_start ? "attack=" + std::to_string(ac.seed) + " (random start)" : "none");
  return r;
}

EvalReport do_patchdrop(const ExperimentConfig& cfg) {
  const Checkpoint ckpt = require_checkpoint(cfg);
  const Dataset test = load_data(cfg).test;
  check_matches(ckpt, test);
  PatchGrid grid = cfg.patch;
  grid.seed = cfg.patchdrop_seed_value();
  EvalReport r = patchdrop_sweep(ckpt.model, ckpt.params, test, cfg.ratios, grid, dataset_name(cfg),
                                 cfg.eval_batch_size);
  stamp(r, cfg, "patchdrop=" + std::to_string(grid.seed) + " per-sample derived");
  return r;
}

EvalReport do_corrupt(const ExperimentConfig& cfg) {
  const Checkpoint ckpt = require_checkpoint(cfg);
  const Dataset test = load_data(cfg).test;
  check_matches(ckpt, test);
  std::vector<CorruptionFamily> families;
  for (const auto& f : cfg.families) families.push_back(parse_corruption_family(f));
  const std::uint64_t seed = cfg.corruption_seed_value();
  EvalReport r = corruption_eval(ckpt.model, ckpt.params, test, cfg.severities, seed, families, cfg.severity_levels,
                                 dataset_name(cfg), cfg.eval_batch_size);
  stamp(r, cfg, "noise=" + std::to_string(seed) + " per-sample derived");
  return r;
}

EvalReport do_bitflip_random(const ExperimentConfig& cfg, std::ostream& log) {
  const Checkpoint ckpt = require_checkpoint(cfg);
  const Dataset test = load_data(cfg).test;
  check_matches(ckpt, test);
  FaultRunOptions o;
  o.region = cfg.faults.region;
  o.trials = cfg.faults.trials;
  o.batch_size = cfg.eval_batch_size;
  o.on_trial = [&](const FaultTrial& t) {
    log << "K=" << t.budget << " trial " << t.trial << " seed " << t.plan.seed << " accuracy "
        << format_number(t.accuracy) << "\n";
    write_manifest(cfg, "random_k" + std::to_string(t.budget) + "_t" + std::to_string(t.trial), t.plan);
  };
  const KeyFilter filter = KeyFilter::parse(cfg.faults.filter);
  const auto stats = random_bitflip_eval(ckpt, test, cfg.faults.budgets, o, filter);
  EvalReport r;
  stats_report(ReportKind::bitflip_random, dataset_name(cfg), {}, stats, o.region, r);
  r.set_header("filter", filter.describe());
  stamp(r, cfg, fault_seeds(o.trials));
  return r;
}

EvalReport do_bitflip_layerwise(const ExperimentConfig& cfg, std::ostream& log) {
  const Checkpoint ckpt = require_checkpoint(cfg);
  const Dataset test = load_data(cfg).test;
  check_matches(ckpt, test);
  std::vector<KeyFilter> groups;
  for (const auto& g : cfg.faults.groups) groups.push_back(KeyFilter::parse(g));
  FaultRunOptions o;
  o.region = cfg.faults.region;
  o.trials = cfg.faults.trials;
  o.batch_size = cfg.eval_batch_size;
  o.on_trial = [&](const FaultTrial& t) {
    log << t.plan.filter << " K=" << t.budget << " trial " << t.trial << " accuracy " << format_number(t.accuracy)
        << "\n";
    write_manifest(cfg, "layerwise_" + t.plan.filter + "_k" + std::to_string(t.budget) + "_t" + std::to_string(t.trial),
                   t.plan);
  };
  const auto result = layerwise_bitflip_eval(ckpt, test, cfg.faults.budgets, o, groups);
  EvalReport r;
  r.kind = ReportKind::bitflip_layerwise;
  for (const GroupStats& g : result) stats_report(ReportKind::bitflip_layerwise, dataset_name(cfg), {g.group}, g.per_budget, o.region, r);
  stamp(r, cfg, fault_seeds(o.trials));
  return r;
}

EvalReport do_bitflip_worst(const ExperimentConfig& cfg, std::ostream& log) {
  const Checkpoint ckpt = require_checkpoint(cfg);
  const Dataset test = load_data(cfg).test;
  check_matches(ckpt, test);
  SearchOptions o;
  o.region = cfg.faults.search_region;
  o.iterations = cfg.faults.iterations;
  o.fast_batches = cfg.faults.fast_batches;
  o.batch_size = cfg.eval_batch_size;
  o.on_candidate = [&](const FaultTrial& t) {
    write_manifest(cfg, "worst_k" + std::to_string(t.budget) + "_i" + std::to_string(t.trial), t.plan);
  };
  const KeyFilter filter = KeyFilter::parse(cfg.faults.filter);
  const auto result = worstcase_bitflip_search(ckpt, test, cfg.faults.budgets, o, filter);
  EvalReport r;
  r.kind = ReportKind::bitflip_worst;
  r.set_header("baseline", format_number(evaluate_accuracy(ckpt.model, ckpt.params, test, cfg.eval_batch_size).accuracy));
  r.set_header("iterations", std::to_string(o.iterations));
  r.set_header("fast_batches", std::to_string(o.fast_batches));
  for (const WorstCase& w : result) {
    log << "K=" << w.budget << " best seed " << w.best_seed << " fast " << format_number(w.fast_accuracy) << " full "
        << format_number(w.full_accuracy) << "\n";
    r.rows.push_back({dataset_name(cfg),
                      {std::string(to_string(o.region)), std::to_string(w.budget), filter.describe(),
                       std::to_string(w.best_seed), format_number(w.fast_accuracy)},
                      w.full_accuracy, 0.0, 1, w.nonfinite});
  }
  stamp(r, cfg, "candidate seed 9000+i for i=1.." + std::to_string(o.iterations));
  return r;
}

EvalReport do_bitflip_activations(const ExperimentConfig& cfg, std::ostream& log) {
  const Checkpoint ckpt = require_checkpoint(cfg);
  const Dataset test = load_data(cfg).test;
  check_matches(ckpt, test);
  const LayerGroup group = parse_layer_group(cfg.faults.activation_group);
  FaultRunOptions o;
  o.region = cfg.faults.region;
  o.trials = cfg.faults.trials;
  o.batch_size = cfg.eval_batch_size;
  o.on_trial = [&](const FaultTrial& t) {
    log << "K=" << t.budget << " trial " << t.trial << " accuracy " << format_number(t.accuracy) << "\n";
  };
  const auto stats = activation_bitflip_eval(ckpt, test, group, cfg.faults.budgets, o);
  EvalReport r;
  stats_report(ReportKind::bitflip_activations, dataset_name(cfg), {std::string(to_string(group))}, stats, o.region,
               r);
  r.set_header("note", "activation faults are an extension beyond the weight-fault algorithms");
  stamp(r, cfg, "1234+t per trial, batch b uses derive(1234+t, b)");
  return r;
}

EvalReport do_merge(const RunRequest& req) {
  if (req.inputs.empty()) throw ConfigError("report-merge needs at least one input CSV");
  std::vector<EvalReport> reports;
  for (const auto& path : req.inputs) reports.push_back(read_report(path));
  return merge_reports(reports);
}

std::string output_stem(const RunRequest& req) {
  static const std::vector<std::pair<std::string, std::string>> stems{
      {"train", "train"},
      {"eval", "eval"},
      {"attack", "whitebox"},
      {"patchdrop", "patchdrop"},
      {"corrupt", "corruption"},
      {"bitflip-random", "bitflip_random"},
      {"bitflip-layerwise", "bitflip_layerwise"},
      {"bitflip-worst", "bitflip_worst"},
      {"bitflip-activations", "bitflip_activations"},
      {"report-merge", "merged"},
  };
  if (req.subcommand == "report-merge" && !req.merge_output.empty()) return req.merge_output;
  for (const auto& [cmd, stem] : stems) {
    if (cmd == req.subcommand) return (fs::path(req.config.out) / stem).string();
  }
  return (fs::path(req.config.out) / req.subcommand).string();
}

}  // namespace

EvalReport execute(const RunRequest& req, std::ostream& log) {
  const ExperimentConfig& cfg = req.config;
  cfg.validate();
  const std::string& cmd = req.subcommand;
  EvalReport r;
  if (cmd == "train") r = do_train(cfg, log);
  else if (cmd == "eval") r = do_eval(cfg);
  else if (cmd == "attack") r = do_attack(cfg);
  else if (cmd == "patchdrop") r = do_patchdrop(cfg);
  else if (cmd == "corrupt") r = do_corrupt(cfg);
  else if (cmd == "bitflip-random") r = do_bitflip_random(cfg, log);
  else if (cmd == "bitflip-layerwise") r = do_bitflip_layerwise(cfg, log);
  else if (cmd == "bitflip-worst") r = do_bitflip_worst(cfg, log);
  else if (cmd == "bitflip-activations") r = do_bitflip_activations(cfg, log);
  else if (cmd == "report-merge") r = do_merge(req);
  else throw ContractError("unknown subcommand '" + cmd + "'");
  const std::string stem = output_stem(req);
  write_report(r, stem);
  log << "wrote " << stem << ".csv and " << stem << ".md\n";
  return r;
}

int run(const RunRequest& req, std::ostream& log, std::ostream& err) {
  if (std::find(subcommands().begin(), subcommands().end(), req.subcommand) == subcommands().end()) {
    err << "error: unknown subcommand '" << req.subcommand << "'\n";
    return kExitUsage;
  }
  try {
    execute(req, log);
    return kExitOk;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
}

}  // namespace rssm
