#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "robustssm/autodiff.hpp"
#include "robustssm/parameter_tree.hpp"
#include "robustssm/tensor.hpp"

namespace rssm {

struct ModelConfig {
  std::size_t image_size = 28;
  std::size_t in_channels = 1;
  std::size_t num_classes = 2;
  std::size_t patch_size = 4;
  std::size_t embed_dim = 32;
  std::array<std::size_t, 4> stage_depths{1, 1, 1, 1};
  std::size_t state_dim = 8;
  std::size_t conv_kernel = 3;

  // Throws ConfigError on an invalid configuration.
  void validate() const;
  std::size_t token_grid() const { return image_size / patch_size; }
  std::size_t stage_dim(std::size_t stage) const { return embed_dim << stage; }
  std::size_t final_dim() const { return stage_dim(3); }

  bool operator==(const ModelConfig&) const = default;
};

// The seven layer groups used for layer-wise fault experiments.
enum class LayerGroup {
  patch_embed,
  stage0,
  stage1,
  stage2,
  stage3,
  classifier_head,
  ssm_related,
};

inline constexpr std::array<LayerGroup, 7> kAllLayerGroups{
    LayerGroup::patch_embed, LayerGroup::stage0,          LayerGroup::stage1,
    LayerGroup::stage2,      LayerGroup::stage3,          LayerGroup::classifier_head,
    LayerGroup::ssm_related};

std::string_view to_string(LayerGroup g) noexcept;
// Accepts the canonical names above. Throws TaxonomyError otherwise.
LayerGroup parse_layer_group(std::string_view name);

// Any key containing "ssm" belongs to ssm_related; every other key is
// assigned by its leading component. Throws TaxonomyError for keys that
// fit no group.
LayerGroup group_of_key(std::string_view key);

ParameterTree init_model(const ModelConfig& cfg, std::uint64_t seed);

// Activation sites a fault hook can intercept. classifier_head is the pooled
// feature vector consumed by the head; the others are module outputs.
enum class ActivationSite { patch_embed, stage0, stage1, stage2, stage3, classifier_head };
ActivationSite activation_site_of(LayerGroup g);
std::string_view to_string(ActivationSite s) noexcept;

// Called with the activation tensor at a site; may modify it in place.
// Hooks run in registration order.
struct ActivationHook {
  ActivationSite site;
  std::function<void(Tensor&)> apply;
};

// Parameters bound onto a tape, aligned with the tree's entry order.
class BoundParameters {
 public:
  BoundParameters(Tape& tape, const ParameterTree& tree, bool requires_grad);
  const Var& operator[](std::string_view key) const;
  const std::vector<Var>& vars() const noexcept { return vars_; }

 private:
  const ParameterTree* tree_;
  std::vector<Var> vars_;
};

// Inputs and per-position parameters of one directional selective scan.
struct ScanInputs {
  Var u;      // [B x L x D]
  Var delta;  // softplus(dt_proj(u))
  Var b_in;   // B_proj(u), [B x L x N]
  Var c_out;  // C_proj(u), [B x L x N]
};

// Builds delta, B and C from u with the block's projections.
ScanInputs scan_inputs(const BoundParameters& p, std::string_view block_prefix, const Var& u);

// One directional selective scan of block `block_prefix` (e.g.
// "stage0_layers.0") over u[B x L x D].
Var selective_scan(const BoundParameters& p, std::string_view block_prefix, const Var& u,
                   bool reverse);

// Logits [B x num_classes] for x[B x C x H x W].
Var forward(const ModelConfig& cfg, const BoundParameters& p, const Var& x,
            std::span<const ActivationHook> hooks = {});

// Untaped convenience forward.
Tensor forward(const ModelConfig& cfg, const ParameterTree& params, const Tensor& x,
               std::span<const ActivationHook> hooks = {});

struct Predictions {
  std::vector<std::int32_t> labels;
  // Rows with at least one non-finite logit.
  std::size_t nonfinite_rows = 0;
};

// Argmax with ties to the lowest index; NaN entries never win. A row with
// no comparable entry predicts class 0.
Predictions predict_from_logits(const Tensor& logits);
Predictions predict(const ModelConfig& cfg, const ParameterTree& params, const Tensor& x,
                    std::span<const ActivationHook> hooks = {});

// Key of the block with global index `block` in stage `stage`.
std::string block_prefix(std::size_t stage, std::size_t block);

}  // namespace rssm
