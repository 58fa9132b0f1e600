#include "robustssm/train.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>

#include "robustssm/autodiff.hpp"
#include "robustssm/errors.hpp"
#include "robustssm/npy.hpp"
#include "robustssm/ops.hpp"
#include "robustssm/rng.hpp"

namespace rssm {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("adam betas must lie in [0, 1)");
  }
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
}

namespace {

void check_split(const ModelConfig& cfg, const Dataset& d, const char* what) {
  if (d.size() == 0) throw ConfigError(std::string(what) + " split is empty");
  if (d.images.rank() != 4 || d.channels() != cfg.in_channels || d.height() != cfg.image_size ||
      d.width() != cfg.image_size) {
    throw DimensionError(std::string(what) + " images " + shape_to_string(d.images.shape()) +
                         " do not match the model input");
  }
  for (std::int32_t y : d.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= cfg.num_classes) {
      throw IndexError(std::string(what) + " label " + std::to_string(y) + " outside [0, " +
                       std::to_string(cfg.num_classes) + ")");
    }
  }
}

struct AdamState {
  std::vector<std::vector<float>> m, v;
  std::size_t t = 0;
};

void adam_step(ParameterTree& params, const std::vector<Tensor>& grads, AdamState& st, const TrainConfig& c) {
  ++st.t;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.t));
  const float b1 = static_cast<float>(c.beta1), b2 = static_cast<float>(c.beta2);
  const float step = static_cast<float>(c.learning_rate / bc1);
  const float inv_bc2 = static_cast<float>(1.0 / bc2);
  const float eps = static_cast<float>(c.adam_epsilon);
  const float decay = static_cast<float>(c.learning_rate * c.weight_decay);
  auto& entries = params.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    float* p = entries[i].second.ptr();
    const float* g = grads[i].ptr();
    float* m = st.m[i].data();
    float* v = st.v[i].data();
    for (std::size_t j = 0; j < st.m[i].size(); ++j) {
      m[j] = b1 * m[j] + (1.0F - b1) * g[j];
      v[j] = b2 * v[j] + (1.0F - b2) * g[j] * g[j];
      if (decay != 0.0F) p[j] -= decay * p[j];
      p[j] -= step * m[j] / (std::sqrt(v[j] * inv_bc2) + eps);
    }
  }
}

std::string recipe_of(const TrainConfig& c) {
  return "adam beta1=" + std::to_string(c.beta1) + " beta2=" + std::to_string(c.beta2) +
         " lr=" + std::to_string(c.learning_rate) + " weight_decay=" + std::to_string(c.weight_decay) +
         " batch=" + std::to_string(c.batch_size) + " epochs=" + std::to_string(c.epochs);
}

}  // namespace

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg, const Dataset& train_split,
                  const Dataset& val_split, const StepCallback& on_step) {
  model_cfg.validate();
  train_cfg.validate();
  check_split(model_cfg, train_split, "train");
  check_split(model_cfg, val_split, "validation");

  ParameterTree params = init_model(model_cfg, derive_seed(train_cfg.seed, "init"));
  AdamState adam;
  for (const auto& [key, t] : params) {
    adam.m.emplace_back(t.numel(), 0.0F);
    adam.v.emplace_back(t.numel(), 0.0F);
  }

  TrainResult result;
  bool have_best = false;
  std::vector<std::size_t> order(train_split.size());
  const std::uint64_t shuffle_seed = derive_seed(train_cfg.seed, "shuffle");
  for (std::size_t epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    SplitMix64 rng(derive_seed(shuffle_seed, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double loss_sum = 0.0;
    const std::size_t steps = (order.size() + train_cfg.batch_size - 1) / train_cfg.batch_size;
    for (std::size_t step = 0; step < steps; ++step) {
      const std::size_t begin = step * train_cfg.batch_size;
      const std::size_t end = std::min(begin + train_cfg.batch_size, order.size());
      const Dataset batch = train_split.gather({order.begin() + static_cast<std::ptrdiff_t>(begin),
                                                order.begin() + static_cast<std::ptrdiff_t>(end)});
      Tape tape;
      BoundParameters bound(tape, params, true);
      const Var x = tape.constant(batch.images);
      const Var loss = ops::softmax_cross_entropy(forward(model_cfg, bound, x), batch.labels);
      const double value = loss.value().item();
      if (!std::isfinite(value)) {
        throw TrainingError("training loss became non-finite", static_cast<int>(epoch), static_cast<long>(step));
      }
      adam_step(params, tape.backward(loss, bound.vars()), adam, train_cfg);
      loss_sum += value;
      if (on_step) on_step(epoch, step, value);
    }

    const double val = evaluate_accuracy(model_cfg, params, val_split).accuracy;
    result.history.push_back({epoch, loss_sum / static_cast<double>(steps), val});
    if (!have_best || val > result.best.val_accuracy) {
      have_best = true;
      result.best.params = params;
      result.best.epoch = epoch;
      result.best.val_accuracy = val;
    }
  }
  result.best.model = model_cfg;
  result.best.seed = train_cfg.seed;
  result.best.recipe = recipe_of(train_cfg);
  return result;
}

AccuracyResult evaluate_accuracy(const ModelConfig& cfg, const ParameterTree& params, const Dataset& split,
                                 std::size_t batch_size, std::span<const ActivationHook> hooks) {
  if (split.size() == 0) throw ConfigError("cannot evaluate an empty split");
  AccuracyResult r;
  r.total = split.size();
  r.predictions.reserve(r.total);
  for (std::size_t b = 0; b < split.num_batches(batch_size); ++b) {
    const Dataset batch = split.batch(b, batch_size);
    Predictions p = predict(cfg, params, batch.images, hooks);
    r.nonfinite += p.nonfinite_rows;
    r.predictions.insert(r.predictions.end(), p.labels.begin(), p.labels.end());
  }
  for (std::size_t i = 0; i < r.total; ++i) r.correct += r.predictions[i] == split.labels[i] ? 1 : 0;
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
  return r;
}

// ---- checkpoint format ----

namespace {

constexpr char kMagic[4] = {'S', 'S', 'M', 'F'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return b_.size() - pos_; }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (remaining() < n) throw FormatError(std::string("truncated checkpoint: expected ") + what, pos_);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename T>
  T le(const char* what) {
    auto s = take(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(s[i]) << (8 * i));
    return v;
  }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

std::string format_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}

std::string metadata_text(const Checkpoint& c) {
  const ModelConfig& m = c.model;
  std::string s;
  auto line = [&](std::string_view k, const std::string& v) {
    s.append(k).append("=").append(v).append("\n");
  };
  line("model.image_size", std::to_string(m.image_size));
  line("model.in_channels", std::to_string(m.in_channels));
  line("model.num_classes", std::to_string(m.num_classes));
  line("model.patch_size", std::to_string(m.patch_size));
  line("model.embed_dim", std::to_string(m.embed_dim));
  line("model.stage_depths", std::to_string(m.stage_depths[0]) + "," + std::to_string(m.stage_depths[1]) + "," +
                                 std::to_string(m.stage_depths[2]) + "," + std::to_string(m.stage_depths[3]));
  line("model.state_dim", std::to_string(m.state_dim));
  line("model.conv_kernel", std::to_string(m.conv_kernel));
  line("train.seed", std::to_string(c.seed));
  line("train.epoch", std::to_string(c.epoch));
  line("train.val_accuracy", format_double(c.val_accuracy));
  line("train.recipe", c.recipe);
  return s;
}

template <typename T>
T parse_number(std::string_view v, std::size_t offset) {
  T out{};
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc{} || r.ptr != v.data() + v.size()) {
    throw FormatError("bad checkpoint metadata value '" + std::string(v) + "'", offset);
  }
  return out;
}

void apply_metadata(Checkpoint& c, std::string_view text, std::size_t base) {
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) throw FormatError("unterminated checkpoint metadata line", base + pos);
    const std::string_view line = text.substr(pos, nl - pos);
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) throw FormatError("checkpoint metadata line lacks '='", base + pos);
    const std::string_view k = line.substr(0, eq), v = line.substr(eq + 1);
    const std::size_t at = base + pos;
    ModelConfig& m = c.model;
    if (k == "model.image_size") m.image_size = parse_number<std::size_t>(v, at);
    else if (k == "model.in_channels") m.in_channels = parse_number<std::size_t>(v, at);
    else if (k == "model.num_classes") m.num_classes = parse_number<std::size_t>(v, at);
    else if (k == "model.patch_size") m.patch_size = parse_number<std::size_t>(v, at);
    else if (k == "model.embed_dim") m.embed_dim = parse_number<std::size_t>(v, at);
    else if (k == "model.state_dim") m.state_dim = parse_number<std::size_t>(v, at);
    else if (k == "model.conv_kernel") m.conv_kernel = parse_number<std::size_t>(v, at);
    else if (k == "model.stage_depths") {
      std::size_t start = 0;
      for (std::size_t i = 0; i < 4; ++i) {
        const std::size_t comma = i < 3 ? v.find(',', start) : v.size();
        if (comma == std::string_view::npos) throw FormatError("stage_depths needs 4 entries", at);
        m.stage_depths[i] = parse_number<std::size_t>(v.substr(start, comma - start), at);
        start = comma + 1;
      }
    } else if (k == "train.seed") c.seed = parse_number<std::uint64_t>(v, at);
    else if (k == "train.epoch") c.epoch = parse_number<std::size_t>(v, at);
    else if (k == "train.val_accuracy") c.val_accuracy = parse_number<double>(v, at);
    else if (k == "train.recipe") c.recipe = std::string(v);
    else throw FormatError("unknown checkpoint metadata key '" + std::string(k) + "'", at);
    pos = nl + 1;
  }
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, 4);
  w.le<std::uint32_t>(ckpt.version);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& [key, t] : ckpt.params) {
    if (key.size() > 0xFFFF) throw ContractError("parameter key too long for checkpoint: " + key);
    if (t.rank() > 0xFF) throw ContractError("tensor rank too large for checkpoint: " + key);
    w.le<std::uint16_t>(static_cast<std::uint16_t>(key.size()));
    w.bytes(key.data(), key.size());
    w.le<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (std::size_t i = 0; i < t.numel(); ++i) w.le<std::uint32_t>(t.bits(i));
  }
  const std::string meta = metadata_text(ckpt);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(meta.size()));
  w.bytes(meta.data(), meta.size());
  return w.take();
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.take(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), kMagic)) throw FormatError("bad checkpoint magic", 0);
  Checkpoint c;
  const std::size_t version_at = r.offset();
  c.version = r.le<std::uint32_t>("version");
  if (c.version != kCheckpointVersion) {
    throw VersionError("unsupported checkpoint version " + std::to_string(c.version), version_at);
  }
  const std::uint32_t count = r.le<std::uint32_t>("entry count");
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::uint16_t key_len = r.le<std::uint16_t>("key length");
    const auto key_bytes = r.take(key_len, "key");
    std::string key(key_bytes.begin(), key_bytes.end());
    const std::uint8_t ndim = r.le<std::uint8_t>("rank");
    Shape shape(ndim);
    std::uint64_t numel = 1;
    for (auto& d : shape) {
      d = r.le<std::uint32_t>("dimension");
      numel *= d;
    }
    if (numel * 4 > r.remaining()) throw FormatError("truncated checkpoint: tensor data of '" + key + "'", r.offset());
    Tensor t(shape);
    for (std::size_t i = 0; i < numel; ++i) t.set_bits(i, r.le<std::uint32_t>("tensor data"));
    const std::size_t at = r.offset();
    try {
      c.params.insert(std::move(key), std::move(t));
    } catch (const ContractError& err) {
      throw FormatError(err.what(), at);
    }
  }
  const std::uint32_t meta_len = r.le<std::uint32_t>("metadata length");
  const std::size_t meta_at = r.offset();
  const auto meta = r.take(meta_len, "metadata");
  apply_metadata(c, {reinterpret_cast<const char*>(meta.data()), meta.size()}, meta_at);
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint", r.offset());
  try {
    c.model.validate();
  } catch (const ConfigError& err) {
    throw FormatError(std::string("checkpoint model config invalid: ") + err.what(), meta_at);
  }
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path.string());
  return parse_checkpoint(bytes);
}

}  // namespace rssm
