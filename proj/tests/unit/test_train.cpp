#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <vector>

#include "oracles.hpp"
#include "robustssm/errors.hpp"
#include "robustssm/rng.hpp"
#include "robustssm/train.hpp"

using namespace rssm;

namespace {

// Two classes: dark and bright blobs in the image centre with pixel noise.
Dataset blobs(std::size_t per_class, std::uint64_t seed, Split split) {
  SplitMix64 rng(seed);
  Dataset d;
  d.split = split;
  d.num_classes = 2;
  d.images = Tensor({2 * per_class, 1, 28, 28});
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const std::int32_t y = static_cast<std::int32_t>(i % 2);
    d.labels.push_back(y);
    for (std::size_t r = 0; r < 28; ++r)
      for (std::size_t c = 0; c < 28; ++c) {
        const bool inside = (r - 14.0) * (r - 14.0) + (c - 14.0) * (c - 14.0) < 36.0;
        const double base = inside ? (y == 0 ? 0.35 : 0.65) : 0.5;
        d.images[i * 784 + r * 28 + c] = static_cast<float>(std::clamp(base + 0.05 * rng.normal(), 0.0, 1.0));
      }
  }
  return d;
}

ModelConfig blob_model() {
  ModelConfig cfg;
  cfg.num_classes = 2;
  cfg.embed_dim = 8;
  cfg.state_dim = 4;
  return cfg;
}

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.model = blob_model();
  c.model.stage_depths = {1, 2, 1, 1};
  c.params = init_model(c.model, 3);
  c.seed = 99;
  c.epoch = 4;
  c.val_accuracy = 0.1 + 0.2;
  c.recipe = "adam lr=0.001";
  return c;
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.learning_rate = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.beta2 = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("a linearly separable problem is learned") {
  const Dataset train_split = blobs(40, 1, Split::train), val = blobs(40, 2, Split::val);
  TrainConfig tc;
  tc.epochs = 5;
  tc.batch_size = 16;
  tc.seed = 5;
  std::vector<double> losses;
  const TrainResult r = train(blob_model(), tc, train_split, val,
                              [&](std::size_t, std::size_t, double loss) { losses.push_back(loss); });
  CHECK(r.history.size() == 5);
  CHECK(losses.size() == 5 * 5);
  CHECK(r.best.val_accuracy >= 0.95);
  CHECK(r.history.back().mean_loss < r.history.front().mean_loss);
  // The returned epoch is the first one with the best validation accuracy.
  double best = -1;
  std::size_t first = 0;
  for (const EpochLog& e : r.history) {
    if (e.val_accuracy > best) {
      best = e.val_accuracy;
      first = e.epoch;
    }
  }
  CHECK(r.best.epoch == first);
  CHECK(evaluate_accuracy(blob_model(), r.best.params, val).accuracy == r.best.val_accuracy);
}

TEST_CASE("training is deterministic") {
  const Dataset train_split = blobs(8, 3, Split::train), val = blobs(4, 4, Split::val);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 5;
  tc.seed = 11;
  const TrainResult a = train(blob_model(), tc, train_split, val);
  const TrainResult b = train(blob_model(), tc, train_split, val);
  CHECK(serialize_checkpoint(a.best) == serialize_checkpoint(b.best));
  tc.seed = 12;
  const TrainResult c = train(blob_model(), tc, train_split, val);
  CHECK_FALSE(bit_identical(a.best.params, c.best.params));
}

TEST_CASE("non-finite loss stops training with its position") {
  const Dataset train_split = blobs(8, 3, Split::train), val = blobs(4, 4, Split::val);
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 4;
  tc.learning_rate = 1e38;
  try {
    train(blob_model(), tc, train_split, val);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(e.epoch() >= 1);
    CHECK(e.step() >= 0);
  }
}

TEST_CASE("split contracts") {
  Dataset wrong = blobs(2, 1, Split::train);
  wrong.labels[0] = 5;
  CHECK_THROWS(train(blob_model(), TrainConfig{}, wrong, blobs(2, 2, Split::val)));
  ModelConfig three = blob_model();
  three.in_channels = 3;
  CHECK_THROWS_AS(train(three, TrainConfig{}, blobs(2, 1, Split::train), blobs(2, 2, Split::val)), DimensionError);
}

TEST_CASE("evaluation does not depend on batch size and recounts exactly") {
  const ModelConfig cfg = blob_model();
  const ParameterTree params = init_model(cfg, 17);
  const Dataset d = blobs(13, 9, Split::test);
  const AccuracyResult ref = evaluate_accuracy(cfg, params, d, 256);
  for (std::size_t bs : {1, 7, 26}) {
    const AccuracyResult r = evaluate_accuracy(cfg, params, d, bs);
    CHECK(r.predictions == ref.predictions);
    CHECK(r.accuracy == ref.accuracy);
  }
  std::size_t recount = 0;
  for (std::size_t i = 0; i < d.size(); ++i) recount += ref.predictions[i] == d.labels[i];
  CHECK(recount == ref.correct);
  CHECK(ref.total == d.size());
  CHECK(ref.accuracy == double(ref.correct) / double(ref.total));
}

TEST_CASE("checkpoint round trip") {
  const Checkpoint c = sample_checkpoint();
  const auto bytes = serialize_checkpoint(c);
  CHECK(std::memcmp(bytes.data(), "SSMF", 4) == 0);
  const Checkpoint back = parse_checkpoint(bytes);
  CHECK(back.model == c.model);
  CHECK(bit_identical(back.params, c.params));
  CHECK(back.seed == 99);
  CHECK(back.epoch == 4);
  CHECK(back.val_accuracy == c.val_accuracy);
  CHECK(back.recipe == c.recipe);
  CHECK(serialize_checkpoint(back) == bytes);

  const auto path = std::filesystem::temp_directory_path() / "robustssm_test_ckpt.bin";
  save_checkpoint(c, path);
  CHECK(serialize_checkpoint(load_checkpoint(path)) == bytes);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), IoError);
}

TEST_CASE("checkpoint corruption is reported with an offset") {
  const auto bytes = serialize_checkpoint(sample_checkpoint());
  for (std::size_t cut = 0; cut < bytes.size(); cut += 1 + cut / 16) {
    CAPTURE(cut);
    const std::vector<std::uint8_t> shorter(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    try {
      parse_checkpoint(shorter);
      FAIL("truncated checkpoint accepted");
    } catch (const FormatError& e) {
      CHECK(e.offset() <= cut);
    }
  }
  auto longer = bytes;
  longer.push_back(0);
  CHECK_THROWS_AS(parse_checkpoint(longer), FormatError);

  auto bumped = bytes;
  bumped[4] += 1;
  try {
    parse_checkpoint(bumped);
    FAIL("newer version accepted");
  } catch (const VersionError& e) {
    CHECK(e.offset() == 4);
  }

  auto magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(parse_checkpoint(magic), FormatError);
}
