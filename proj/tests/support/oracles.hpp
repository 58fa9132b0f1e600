#pragma once

// Reference implementations used as test oracles. Each one is a direct
// loop over the definition, accumulated in double, with no shared code
// from the library beyond Tensor storage.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "robustssm/autodiff.hpp"
#include "robustssm/model.hpp"
#include "robustssm/ops.hpp"
#include "robustssm/rng.hpp"
#include "robustssm/tensor.hpp"

namespace oracle {

using rssm::Shape;
using rssm::Tensor;

inline Tensor random_tensor(Shape shape, rssm::SplitMix64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

inline std::vector<double> matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) out[i * n + j] += double(a[i * k + p]) * b[p * n + j];
  return out;
}

inline std::vector<double> conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad) {
  const std::size_t nb = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
  std::vector<double> out(nb * o * oh * ow, 0.0);
  for (std::size_t n = 0; n < nb; ++n)
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = 0.0;
          for (std::size_t ic = 0; ic < c; ++ic)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const long r = long(i * stride + u) - long(pad), q = long(j * stride + v) - long(pad);
                if (r < 0 || q < 0 || r >= long(h) || q >= long(wd)) continue;
                acc += double(x[((n * c + ic) * h + r) * wd + q]) * w[((oc * c + ic) * kh + u) * kw + v];
              }
          out[((n * o + oc) * oh + i) * ow + j] = acc;
        }
  return out;
}

inline double silu(double v) { return v / (1.0 + std::exp(-v)); }

inline double softplus(double v) { return v > 20.0 ? v : std::log1p(std::exp(v)); }

// Mean over rows of -log softmax(logits)[label].
inline double cross_entropy(const Tensor& logits, std::span<const std::int32_t> labels) {
  const std::size_t nb = logits.dim(0), nc = logits.dim(1);
  double total = 0.0;
  for (std::size_t b = 0; b < nb; ++b) {
    double mx = -INFINITY;
    for (std::size_t c = 0; c < nc; ++c) mx = std::max(mx, double(logits[b * nc + c]));
    double z = 0.0;
    for (std::size_t c = 0; c < nc; ++c) z += std::exp(double(logits[b * nc + c]) - mx);
    total += std::log(z) + mx - logits[b * nc + std::size_t(labels[b])];
  }
  return total / double(nb);
}

// h_t = exp(delta*A) h_{t-1} + delta*B_t*u_t, y_t = <C_t, h_t> + skip*u_t.
inline std::vector<double> selective_scan(const Tensor& u, const Tensor& delta, const Tensor& a_log,
                                          const Tensor& b_in, const Tensor& c_out, const Tensor& skip,
                                          bool reverse) {
  const std::size_t nb = u.dim(0), len = u.dim(1), d = u.dim(2), n = a_log.dim(1);
  std::vector<double> y(nb * len * d, 0.0);
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t c = 0; c < d; ++c) {
      std::vector<double> h(n, 0.0);
      for (std::size_t step = 0; step < len; ++step) {
        const std::size_t t = reverse ? len - 1 - step : step;
        const double dt = delta[(b * len + t) * d + c], ut = u[(b * len + t) * d + c];
        double acc = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
          const double a = -std::exp(double(a_log[c * n + s]));
          h[s] = std::exp(dt * a) * h[s] + dt * b_in[(b * len + t) * n + s] * ut;
          acc += c_out[(b * len + t) * n + s] * h[s];
        }
        y[(b * len + t) * d + c] = acc + double(skip[c]) * ut;
      }
    }
  return y;
}

inline double max_abs_diff(const Tensor& got, const std::vector<double>& want) {
  double worst = 0.0;
  for (std::size_t i = 0; i < want.size(); ++i) worst = std::max(worst, std::fabs(got[i] - want[i]));
  return worst;
}

// Builds an op graph from leaves; used by gradient checks.
using Graph = std::function<rssm::Var(rssm::Tape&, const std::vector<rssm::Var>&)>;

// Worst relative error ||fd - g|| / max(||fd||, ||g||, floor) over the
// inputs, where g comes from the tape and fd from central differences of
// sum(out * probe) evaluated in float.
inline double gradcheck(const std::vector<Tensor>& inputs, const Graph& graph, double step = 1e-3,
                        double floor = 1e-4) {
  rssm::SplitMix64 rng(0xC0FFEE);
  rssm::Tape tape;
  std::vector<rssm::Var> leaves;
  for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t, true));
  const rssm::Var out = graph(tape, leaves);
  const Tensor probe = random_tensor(out.shape(), rng);
  const rssm::Var loss = rssm::ops::sum(rssm::ops::mul(out, tape.constant(probe)));
  const std::vector<Tensor> grads = tape.backward(loss, leaves);

  auto objective = [&](const std::vector<Tensor>& in) {
    rssm::Tape t(false);
    std::vector<rssm::Var> vs;
    for (const Tensor& v : in) vs.push_back(t.constant(v));
    const Tensor o = graph(t, vs).value();
    double s = 0.0;
    for (std::size_t i = 0; i < o.numel(); ++i) s += double(o[i]) * probe[i];
    return s;
  };

  double worst = 0.0;
  std::vector<Tensor> work = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    double diff2 = 0.0, fd2 = 0.0, g2 = 0.0;
    for (std::size_t j = 0; j < inputs[k].numel(); ++j) {
      const float x0 = inputs[k][j];
      work[k][j] = static_cast<float>(x0 + step);
      const double up = objective(work);
      work[k][j] = static_cast<float>(x0 - step);
      const double down = objective(work);
      work[k][j] = x0;
      const double fd = (up - down) / (2.0 * step);
      const double g = grads[k][j];
      diff2 += (fd - g) * (fd - g);
      fd2 += fd * fd;
      g2 += g * g;
    }
    const double scale = std::max({std::sqrt(fd2), std::sqrt(g2), floor});
    worst = std::max(worst, std::sqrt(diff2) / scale);
  }
  return worst;
}

// Relative error of the model's input gradient of mean cross-entropy
// against central differences on `coords` randomly chosen input entries.
inline double model_input_gradcheck(const rssm::ModelConfig& cfg, const rssm::ParameterTree& params,
                                    const Tensor& x, std::span<const std::int32_t> labels,
                                    std::size_t coords, double step = 1e-2) {
  auto loss_at = [&](const Tensor& in) {
    return cross_entropy(rssm::forward(cfg, params, in), labels);
  };
  rssm::Tape tape;
  rssm::BoundParameters p(tape, params, false);
  const rssm::Var xv = tape.leaf(x, true);
  const rssm::Var loss = rssm::ops::softmax_cross_entropy(rssm::forward(cfg, p, xv), labels);
  const Tensor grad = tape.backward(loss, std::vector<rssm::Var>{xv})[0];

  rssm::SplitMix64 rng(0xFD);
  Tensor work = x;
  double diff2 = 0.0, fd2 = 0.0, g2 = 0.0;
  for (std::size_t n = 0; n < coords; ++n) {
    const std::size_t j = rng.below(x.numel());
    const float x0 = x[j];
    work[j] = static_cast<float>(x0 + step);
    const double up = loss_at(work);
    work[j] = static_cast<float>(x0 - step);
    const double down = loss_at(work);
    work[j] = x0;
    const double fd = (up - down) / (2.0 * step);
    diff2 += (fd - grad[j]) * (fd - grad[j]);
    fd2 += fd * fd;
    g2 += double(grad[j]) * grad[j];
  }
  return std::sqrt(diff2) / std::max({std::sqrt(fd2), std::sqrt(g2), 1e-12});
}

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(ROBUSTSSM_FIXTURE_DIR) / name;
}

}  // namespace oracle
