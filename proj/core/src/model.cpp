#include "robustssm/model.hpp"

#include <algorithm>
#include <cmath>

#include "robustssm/errors.hpp"
#include "robustssm/ops.hpp"
#include "robustssm/rng.hpp"

namespace rssm {

void ModelConfig::validate() const {
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    throw ConfigError("image_size " + std::to_string(image_size) +
                      " must be a positive multiple of patch_size " + std::to_string(patch_size));
  }
  if (in_channels != 1 && in_channels != 3) {
    throw ConfigError("in_channels must be 1 or 3, got " + std::to_string(in_channels));
  }
  if (num_classes == 0) throw ConfigError("num_classes must be positive");
  if (embed_dim == 0 || state_dim == 0) throw ConfigError("embed_dim and state_dim must be positive");
  if (conv_kernel == 0 || conv_kernel % 2 == 0) throw ConfigError("conv_kernel must be odd");
  for (std::size_t d : stage_depths) {
    if (d == 0) throw ConfigError("every stage needs at least one block");
  }
}

namespace {

constexpr std::array<std::pair<std::string_view, LayerGroup>, 6> kPrefixes{{
    {"patch_embed", LayerGroup::patch_embed},
    {"stage0_layers", LayerGroup::stage0},
    {"stage1_layers", LayerGroup::stage1},
    {"stage2_layers", LayerGroup::stage2},
    {"stage3_layers", LayerGroup::stage3},
    {"classifier_head", LayerGroup::classifier_head},
}};

std::string join(std::string_view a, std::string_view b) {
  std::string s(a);
  s += '.';
  s += b;
  return s;
}

}  // namespace

std::string_view to_string(LayerGroup g) noexcept {
  switch (g) {
    case LayerGroup::patch_embed: return "patch_embed";
    case LayerGroup::stage0: return "stage0";
    case LayerGroup::stage1: return "stage1";
    case LayerGroup::stage2: return "stage2";
    case LayerGroup::stage3: return "stage3";
    case LayerGroup::classifier_head: return "classifier_head";
    case LayerGroup::ssm_related: return "ssm_related";
  }
  return "?";
}

LayerGroup parse_layer_group(std::string_view name) {
  for (LayerGroup g : kAllLayerGroups) {
    if (to_string(g) == name) return g;
  }
  throw TaxonomyError("unknown layer group '" + std::string(name) + "'");
}

LayerGroup group_of_key(std::string_view key) {
  if (key.find("ssm") != std::string_view::npos) return LayerGroup::ssm_related;
  std::size_t best_len = 0;
  LayerGroup best = LayerGroup::patch_embed;
  for (const auto& [prefix, group] : kPrefixes) {
    if (key.size() < prefix.size() || key.substr(0, prefix.size()) != prefix) continue;
    if (key.size() > prefix.size() && key[prefix.size()] != '.') continue;
    if (prefix.size() > best_len) {
      best_len = prefix.size();
      best = group;
    }
  }
  if (best_len == 0) {
    throw TaxonomyError("parameter key '" + std::string(key) + "' matches no layer group");
  }
  return best;
}

ActivationSite activation_site_of(LayerGroup g) {
  switch (g) {
    case LayerGroup::patch_embed: return ActivationSite::patch_embed;
    case LayerGroup::stage0: return ActivationSite::stage0;
    case LayerGroup::stage1: return ActivationSite::stage1;
    case LayerGroup::stage2: return ActivationSite::stage2;
    case LayerGroup::stage3: return ActivationSite::stage3;
    case LayerGroup::classifier_head: return ActivationSite::classifier_head;
    case LayerGroup::ssm_related: break;
  }
  throw TaxonomyError("group '" + std::string(to_string(g)) +
                      "' spans several tensors and has no single activation site");
}

std::string_view to_string(ActivationSite s) noexcept {
  switch (s) {
    case ActivationSite::patch_embed: return "patch_embed";
    case ActivationSite::stage0: return "stage0";
    case ActivationSite::stage1: return "stage1";
    case ActivationSite::stage2: return "stage2";
    case ActivationSite::stage3: return "stage3";
    case ActivationSite::classifier_head: return "classifier_head";
  }
  return "?";
}

std::string block_prefix(std::size_t stage, std::size_t block) {
  return "stage" + std::to_string(stage) + "_layers." + std::to_string(block);
}

ParameterTree init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParameterTree tree;

  auto uniform = [seed](const std::string& key, Shape shape, double bound) {
    SplitMix64 rng(derive_seed(seed, key));
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<float>(rng.uniform(-bound, bound));
    return t;
  };
  auto fan_in_bound = [](std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };
  auto add_uniform = [&](const std::string& key, Shape shape, std::size_t fan_in) {
    tree.insert(key, uniform(key, std::move(shape), fan_in_bound(fan_in)));
  };

  const std::size_t p = cfg.patch_size, e = cfg.embed_dim, c = cfg.in_channels, n = cfg.state_dim;
  add_uniform("patch_embed.proj.weight", {e, c, p, p}, c * p * p);
  tree.insert("patch_embed.proj.bias", Tensor({e}));

  std::size_t global_block = 0;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t d = cfg.stage_dim(s);
    const std::string stage = "stage" + std::to_string(s) + "_layers";
    if (s > 0) {
      const std::size_t prev = cfg.stage_dim(s - 1);
      tree.insert(stage + ".merge.norm.weight", Tensor::full({prev}, 1.0F));
      tree.insert(stage + ".merge.norm.bias", Tensor({prev}));
      add_uniform(stage + ".merge.weight", {d, cfg.stage_dim(s - 1)}, cfg.stage_dim(s - 1));
      tree.insert(stage + ".merge.bias", Tensor({d}));
    }
    for (std::size_t b = 0; b < cfg.stage_depths[s]; ++b, ++global_block) {
      const std::string pre = block_prefix(s, global_block);
      tree.insert(pre + ".norm.weight", Tensor::full({d}, 1.0F));
      tree.insert(pre + ".norm.bias", Tensor({d}));
      add_uniform(pre + ".in_proj.weight", {2 * d, d}, d);
      add_uniform(pre + ".ssm.conv1d.weight", {d, cfg.conv_kernel}, cfg.conv_kernel);
      tree.insert(pre + ".ssm.conv1d.bias", Tensor({d}));
      add_uniform(pre + ".ssm.dt_proj.weight", {d, d}, d);
      {
        // softplus(bias) is log-uniform in [1e-3, 1e-1].
        const std::string key = pre + ".ssm.dt_proj.bias";
        SplitMix64 rng(derive_seed(seed, key));
        Tensor bias({d});
        for (std::size_t i = 0; i < d; ++i) {
          const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
          bias[i] = static_cast<float>(dt + std::log(-std::expm1(-dt)));
        }
        tree.insert(key, std::move(bias));
      }
      add_uniform(pre + ".ssm.B_proj.weight", {n, d}, d);
      add_uniform(pre + ".ssm.C_proj.weight", {n, d}, d);
      {
        // A = -(1..N) per channel.
        Tensor a_log({d, n});
        for (std::size_t i = 0; i < d; ++i)
          for (std::size_t j = 0; j < n; ++j) a_log[i * n + j] = static_cast<float>(std::log(j + 1.0));
        tree.insert(pre + ".ssm.A_log", std::move(a_log));
      }
      tree.insert(pre + ".ssm.D", Tensor::full({d}, 1.0F));
      add_uniform(pre + ".out_proj.weight", {d, d}, d);
    }
  }
  tree.insert("classifier_head.norm.weight", Tensor::full({cfg.final_dim()}, 1.0F));
  tree.insert("classifier_head.norm.bias", Tensor({cfg.final_dim()}));
  add_uniform("classifier_head.weight", {cfg.num_classes, cfg.final_dim()}, cfg.final_dim());
  tree.insert("classifier_head.bias", Tensor({cfg.num_classes}));
  return tree;
}

BoundParameters::BoundParameters(Tape& tape, const ParameterTree& tree, bool requires_grad)
    : tree_(&tree) {
  vars_.reserve(tree.size());
  for (const auto& [key, value] : tree) vars_.push_back(tape.leaf(value, requires_grad));
}

const Var& BoundParameters::operator[](std::string_view key) const {
  // Trees are small (tens of entries); a linear scan keeps binding cheap.
  const auto& entries = tree_->entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].first == key) return vars_[i];
  }
  throw IndexError("no parameter named '" + std::string(key) + "'");
}

ScanInputs scan_inputs(const BoundParameters& p, std::string_view prefix, const Var& u) {
  const std::string ssm = join(prefix, "ssm");
  ScanInputs in;
  in.u = u;
  in.delta = ops::softplus(ops::linear(u, p[join(ssm, "dt_proj.weight")], p[join(ssm, "dt_proj.bias")]));
  in.b_in = ops::linear(u, p[join(ssm, "B_proj.weight")]);
  in.c_out = ops::linear(u, p[join(ssm, "C_proj.weight")]);
  return in;
}

namespace {

Var scan_direction(const BoundParameters& p, std::string_view prefix, const ScanInputs& in,
                   bool reverse) {
  const std::string ssm = join(prefix, "ssm");
  return ops::selective_scan(in.u, in.delta, p[join(ssm, "A_log")], in.b_in, in.c_out,
                             p[join(ssm, "D")], reverse);
}

Var ssm_block(const BoundParameters& p, std::string_view prefix, const Var& x, std::size_t d) {
  const Var h = ops::layer_norm(x, p[join(prefix, "norm.weight")], p[join(prefix, "norm.bias")]);
  const Var xz = ops::linear(h, p[join(prefix, "in_proj.weight")]);
  const Var z = ops::slice_last(xz, d, d);
  Var u = ops::slice_last(xz, 0, d);
  u = ops::silu(ops::depthwise_conv1d(u, p[join(prefix, "ssm.conv1d.weight")],
                                      p[join(prefix, "ssm.conv1d.bias")]));
  const ScanInputs in = scan_inputs(p, prefix, u);
  const Var fwd = scan_direction(p, prefix, in, false);
  const Var bwd = scan_direction(p, prefix, in, true);
  const Var y = ops::mul(ops::scale(ops::add(fwd, bwd), 0.5F), ops::silu(z));
  return ops::add(x, ops::linear(y, p[join(prefix, "out_proj.weight")]));
}

Var run_hooks(const Var& v, ActivationSite site, std::span<const ActivationHook> hooks) {
  bool any = false;
  for (const ActivationHook& h : hooks) any = any || h.site == site;
  if (!any) return v;
  Tensor t = v.value();
  for (const ActivationHook& h : hooks) {
    if (h.site == site) h.apply(t);
  }
  return ops::replace_value(v, std::move(t));
}

}  // namespace

Var selective_scan(const BoundParameters& p, std::string_view prefix, const Var& u, bool reverse) {
  return scan_direction(p, prefix, scan_inputs(p, prefix, u), reverse);
}

Var forward(const ModelConfig& cfg, const BoundParameters& p, const Var& x,
            std::span<const ActivationHook> hooks) {
  const Shape& xs = x.shape();
  if (xs.size() != 4 || xs[1] != cfg.in_channels || xs[2] != cfg.image_size ||
      xs[3] != cfg.image_size) {
    throw DimensionError("forward: input " + shape_to_string(xs) + " does not match [B x " +
                         std::to_string(cfg.in_channels) + " x " + std::to_string(cfg.image_size) +
                         " x " + std::to_string(cfg.image_size) + "]");
  }
  // Pixels in [0, 1] are standardized to [-1, 1] before the patch embedding.
  const Var centered = ops::scale(ops::add(x, x.tape()->constant(Tensor::scalar(-0.5F))), 2.0F);
  Var t = ops::conv2d(centered, p["patch_embed.proj.weight"], cfg.patch_size, 0);
  t = ops::add_channel_bias(t, p["patch_embed.proj.bias"]);
  t = run_hooks(t, ActivationSite::patch_embed, hooks);
  Var tokens = ops::image_to_tokens(t);

  std::size_t gh = cfg.token_grid(), gw = cfg.token_grid();
  std::size_t global_block = 0;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::string stage = "stage" + std::to_string(s) + "_layers";
    if (s > 0) {
      tokens = ops::merge_pool2x2(tokens, gh, gw);
      gh = (gh + 1) / 2;
      gw = (gw + 1) / 2;
      tokens = ops::layer_norm(tokens, p[stage + ".merge.norm.weight"], p[stage + ".merge.norm.bias"]);
      tokens = ops::linear(tokens, p[stage + ".merge.weight"], p[stage + ".merge.bias"]);
    }
    for (std::size_t b = 0; b < cfg.stage_depths[s]; ++b, ++global_block) {
      tokens = ssm_block(p, block_prefix(s, global_block), tokens, cfg.stage_dim(s));
    }
    tokens = run_hooks(tokens, static_cast<ActivationSite>(static_cast<int>(ActivationSite::stage0) + s),
                       hooks);
  }
  tokens = ops::layer_norm(tokens, p["classifier_head.norm.weight"], p["classifier_head.norm.bias"]);
  Var features = ops::mean_tokens(tokens);
  features = run_hooks(features, ActivationSite::classifier_head, hooks);
  return ops::linear(features, p["classifier_head.weight"], p["classifier_head.bias"]);
}

Tensor forward(const ModelConfig& cfg, const ParameterTree& params, const Tensor& x,
               std::span<const ActivationHook> hooks) {
  Tape tape(false);
  BoundParameters p(tape, params, false);
  return forward(cfg, p, tape.constant(x), hooks).value();
}

Predictions predict_from_logits(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("predict: logits must be [B x C]");
  const std::size_t nb = logits.dim(0), nc = logits.dim(1);
  Predictions out;
  out.labels.resize(nb, 0);
  for (std::size_t b = 0; b < nb; ++b) {
    const float* row = logits.ptr() + b * nc;
    std::ptrdiff_t best = -1;
    bool nonfinite = false;
    for (std::size_t c = 0; c < nc; ++c) {
      const float v = row[c];
      if (!std::isfinite(v)) nonfinite = true;
      if (std::isnan(v)) continue;
      if (best < 0 || v > row[best]) best = static_cast<std::ptrdiff_t>(c);
    }
    out.labels[b] = best < 0 ? 0 : static_cast<std::int32_t>(best);
    if (nonfinite) ++out.nonfinite_rows;
  }
  return out;
}

Predictions predict(const ModelConfig& cfg, const ParameterTree& params, const Tensor& x,
                    std::span<const ActivationHook> hooks) {
  return predict_from_logits(forward(cfg, params, x, hooks));
}

}  // namespace rssm
