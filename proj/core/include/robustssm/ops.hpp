#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "robustssm/autodiff.hpp"

// Differentiable primitives. Every op reads its operands, computes the
// result with a fixed summation order, and registers its backward rule on
// the operands' tape. Non-finite inputs propagate; nothing traps.
namespace rssm::ops {

// a[m x k] * b[k x n].
Var matmul(const Var& a, const Var& b);

// x[..., in] * w[out x in]^T + bias[out]. bias may be an invalid Var.
Var linear(const Var& x, const Var& w, const Var& bias = {});

// Cross-correlation. x[B x C x H x W], w[O x C x kh x kw].
Var conv2d(const Var& x, const Var& w, std::size_t stride, std::size_t pad);

// x[B x C x H x W] + b[C] broadcast over batch and space.
Var add_channel_bias(const Var& x, const Var& b);

// Binary ops: equal shapes, or one side a single element.
Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, float factor);

Var silu(const Var& x);
Var sigmoid(const Var& x);
Var exp(const Var& x);
Var softplus(const Var& x);
// Gradient passes through on [lo, hi] and is zero outside.
Var clip(const Var& x, float lo, float hi);

enum class Unary { silu, sigmoid, exp, softplus };
Var elementwise(const Var& x, Unary f);

Var sum(const Var& x);
Var mean(const Var& x);

// Mean over the batch of -log softmax(logits)[label]; max-subtracted.
Var softmax_cross_entropy(const Var& logits, std::span<const std::int32_t> labels);

// Normalizes over the last axis, then applies per-feature gain and bias.
Var layer_norm(const Var& x, const Var& gain, const Var& bias, float eps = 1e-5F);

// x[B x L x D], w[D x K], b[D]; zero padding of (K-1)/2 on both ends.
Var depthwise_conv1d(const Var& x, const Var& w, const Var& b);

// Discretized selective state-space recurrence over x[B x L x D]:
//   h_t = exp(delta_t * A) * h_{t-1} + delta_t * B_t * u_t
//   y_t = <C_t, h_t> + skip * u_t,  A = -exp(a_log),  h_0 = 0
// with delta[B x L x D], a_log[D x N], b_in/c_out[B x L x N], skip[D].
// reverse scans right to left.
Var selective_scan(const Var& u, const Var& delta, const Var& a_log,
                   const Var& b_in, const Var& c_out, const Var& skip,
                   bool reverse);

// Columns [start, start+len) of the last axis.
Var slice_last(const Var& x, std::size_t start, std::size_t len);

// [B x C x H x W] -> [B x (H*W) x C], row-major over the grid.
Var image_to_tokens(const Var& x);

// Token grid [B x (h*w) x D] -> [B x (ceil(h/2)*ceil(w/2)) x D]; each output
// is the mean of the (up to four) tokens in its 2x2 window.
Var merge_pool2x2(const Var& x, std::size_t grid_h, std::size_t grid_w);

// [B x L x D] -> [B x D].
Var mean_tokens(const Var& x);

// Identity on values; lets the caller substitute a modified tensor for a
// recorded value without a gradient path (activation fault hooks).
Var replace_value(const Var& x, Tensor replacement);

// Plain (untaped) row softmax, computed in double and stored as float.
Tensor softmax_rows(const Tensor& logits);

}  // namespace rssm::ops
