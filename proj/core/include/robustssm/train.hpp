#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "robustssm/dataset.hpp"
#include "robustssm/model.hpp"
#include "robustssm/parameter_tree.hpp"

namespace rssm {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  // Decoupled (AdamW-style); 0 disables it.
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  std::string checkpoint_path;

  // Throws ConfigError.
  void validate() const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  ModelConfig model;
  ParameterTree params;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  double val_accuracy = 0.0;
  // Free-form description of the optimizer settings that produced it.
  std::string recipe;
};

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochLog> history;
};

// Invoked after every optimizer step with (epoch, step, loss).
using StepCallback = std::function<void(std::size_t, std::size_t, double)>;

// Adam on mean cross-entropy with a seeded per-epoch shuffle. Returns the
// epoch with the highest validation accuracy (ties keep the earlier one).
// Throws TrainingError when the loss becomes non-finite.
TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg, const Dataset& train_split,
                  const Dataset& val_split, const StepCallback& on_step = {});

struct AccuracyResult {
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  std::size_t nonfinite = 0;
  std::vector<std::int32_t> predictions;
};

// Batch size only affects memory; results do not depend on it.
AccuracyResult evaluate_accuracy(const ModelConfig& cfg, const ParameterTree& params, const Dataset& split,
                                 std::size_t batch_size = 256, std::span<const ActivationHook> hooks = {});

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
// Throws FormatError (with offset) or VersionError.
Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace rssm
