#pragma once

// Small random instances of every differentiable primitive, shared by the
// unit tests and the acceptance binary.

#include <cstdint>
#include <vector>

#include "oracles.hpp"
#include "robustssm/ops.hpp"

namespace oracle {

struct GradCase {
  const char* name;
  std::vector<rssm::Tensor> inputs;
  Graph graph;
};

inline std::vector<GradCase> primitive_cases() {
  using namespace rssm;
  SplitMix64 r(1);
  using V = const std::vector<Var>&;
  static const std::int32_t labels[4] = {0, 2, 1, 2};
  std::vector<GradCase> cases{
      {"matmul", {oracle::random_tensor({3, 4}, r), oracle::random_tensor({4, 2}, r)},
       [](Tape&, V v) { return ops::matmul(v[0], v[1]); }},
      {"linear", {oracle::random_tensor({2, 3, 4}, r), oracle::random_tensor({5, 4}, r), oracle::random_tensor({5}, r)},
       [](Tape&, V v) { return ops::linear(v[0], v[1], v[2]); }},
      {"conv2d", {oracle::random_tensor({1, 2, 5, 5}, r), oracle::random_tensor({3, 2, 3, 3}, r)},
       [](Tape&, V v) { return ops::conv2d(v[0], v[1], 2, 1); }},
      {"channel bias", {oracle::random_tensor({2, 3, 2, 2}, r), oracle::random_tensor({3}, r)},
       [](Tape&, V v) { return ops::add_channel_bias(v[0], v[1]); }},
      {"add", {oracle::random_tensor({6}, r), oracle::random_tensor({6}, r)}, [](Tape&, V v) { return ops::add(v[0], v[1]); }},
      {"mul", {oracle::random_tensor({6}, r), oracle::random_tensor({6}, r)}, [](Tape&, V v) { return ops::mul(v[0], v[1]); }},
      {"mul broadcast", {oracle::random_tensor({6}, r), oracle::random_tensor({}, r)},
       [](Tape&, V v) { return ops::mul(v[0], v[1]); }},
      {"scale", {oracle::random_tensor({6}, r)}, [](Tape&, V v) { return ops::scale(v[0], -1.5F); }},
      {"silu", {oracle::random_tensor({7}, r, -3, 3)}, [](Tape&, V v) { return ops::silu(v[0]); }},
      {"sigmoid", {oracle::random_tensor({7}, r, -3, 3)}, [](Tape&, V v) { return ops::sigmoid(v[0]); }},
      {"exp", {oracle::random_tensor({7}, r)}, [](Tape&, V v) { return ops::exp(v[0]); }},
      {"softplus", {oracle::random_tensor({7}, r, -3, 3)}, [](Tape&, V v) { return ops::softplus(v[0]); }},
      {"clip", {oracle::random_tensor({7}, r, -2, 2)}, [](Tape&, V v) { return ops::clip(v[0], -0.73F, 0.81F); }},
      {"sum", {oracle::random_tensor({2, 3}, r)}, [](Tape&, V v) { return ops::sum(v[0]); }},
      {"mean", {oracle::random_tensor({2, 5, 3}, r)}, [](Tape&, V v) { return ops::mean(v[0]); }},
      {"cross-entropy", {oracle::random_tensor({4, 3}, r, -2, 2)},
       [](Tape&, V v) { return ops::softmax_cross_entropy(v[0], labels); }},
      {"layer norm", {oracle::random_tensor({3, 6}, r), oracle::random_tensor({6}, r), oracle::random_tensor({6}, r)},
       [](Tape&, V v) { return ops::layer_norm(v[0], v[1], v[2]); }},
      {"depthwise conv1d", {oracle::random_tensor({2, 5, 3}, r), oracle::random_tensor({3, 3}, r), oracle::random_tensor({3}, r)},
       [](Tape&, V v) { return ops::depthwise_conv1d(v[0], v[1], v[2]); }},
      {"slice", {oracle::random_tensor({2, 6}, r)}, [](Tape&, V v) { return ops::slice_last(v[0], 2, 3); }},
      {"image to tokens", {oracle::random_tensor({2, 3, 2, 2}, r)}, [](Tape&, V v) { return ops::image_to_tokens(v[0]); }},
      {"merge pool", {oracle::random_tensor({2, 9, 3}, r)}, [](Tape&, V v) { return ops::merge_pool2x2(v[0], 3, 3); }},
      {"mean tokens", {oracle::random_tensor({2, 5, 3}, r)}, [](Tape&, V v) { return ops::mean_tokens(v[0]); }},
  };
  for (bool rev : {false, true}) {
    cases.push_back({rev ? "scan reverse" : "scan forward",
                     {oracle::random_tensor({2, 4, 3}, r), oracle::random_tensor({2, 4, 3}, r, 0.05, 0.8),
                      oracle::random_tensor({3, 2}, r), oracle::random_tensor({2, 4, 2}, r), oracle::random_tensor({2, 4, 2}, r),
                      oracle::random_tensor({3}, r)},
                     [rev](Tape&, V v) { return ops::selective_scan(v[0], v[1], v[2], v[3], v[4], v[5], rev); }});
  }
  return cases;
}

}  // namespace oracle
