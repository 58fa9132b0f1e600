#include "robustssm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "robustssm/errors.hpp"

namespace rssm::ops {
namespace {

Tape& tape_of(const Var& v) {
  if (!v.valid()) throw ContractError("operand is an unbound Var");
  return *v.tape();
}

std::size_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

std::size_t leading_rows(const Shape& s) {
  return s.empty() ? 1 : shape_numel(s) / std::max<std::size_t>(s.back(), 1);
}

void require_rank(const Var& v, std::size_t rank, const char* op, const char* name) {
  if (v.shape().size() != rank) {
    throw DimensionError(std::string(op) + ": " + name + " must have rank " +
                         std::to_string(rank) + ", got " + shape_to_string(v.shape()));
  }
}

float sigmoid_scalar(float x) {
  if (x >= 0.0F) {
    const float z = std::exp(-x);
    return 1.0F / (1.0F + z);
  }
  const float z = std::exp(x);
  return z / (1.0F + z);
}

float softplus_scalar(float x) {
  return std::max(x, 0.0F) + std::log1p(std::exp(-std::fabs(x)));
}

// Elementwise op whose derivative is expressed through input and output.
template <typename F, typename D>
Var unary(const Var& x, F f, D dfdx) {
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) y[i] = f(xv[i]);
  const std::size_t xid = x.id();
  // The rule reads the output back through a slot filled after recording.
  auto out_id = std::make_shared<std::size_t>(0);
  Var result = tape.record(
      std::move(y), {x},
      [&tape, xid, dfdx, out_id](const Tensor& g, const std::vector<bool>&) {
        const Tensor& xv2 = tape.value(xid);
        const Tensor& yv = tape.value(*out_id);
        Tensor dx(xv2.shape());
        for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] = g[i] * dfdx(xv2[i], yv[i]);
        return std::vector<Tensor>{std::move(dx)};
      });
  *out_id = result.id();
  return result;
}

enum class Broadcast { same, left_scalar, right_scalar };

Broadcast broadcast_kind(const Var& a, const Var& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (a.value().numel() == 1) return Broadcast::left_scalar;
  if (b.value().numel() == 1) return Broadcast::right_scalar;
  throw DimensionError(std::string(op) + ": shapes " + shape_to_string(a.shape()) +
                       " and " + shape_to_string(b.shape()) + " are not broadcastable");
}

float reduce_sum(const Tensor& t) {
  float s = 0.0F;
  for (std::size_t i = 0; i < t.numel(); ++i) s += t[i];
  return s;
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tape& tape = tape_of(a);
  require_rank(a, 2, "matmul", "lhs");
  require_rank(b, 2, "matmul", "rhs");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions disagree for " +
                         shape_to_string(a.shape()) + " and " + shape_to_string(b.shape()));
  }
  const float* av = a.value().ptr();
  const float* bv = b.value().ptr();
  Tensor c({m, n});
  float* cv = c.ptr();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const float aik = av[i * k + kk];
      const float* brow = bv + kk * n;
      float* crow = cv + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
  const std::size_t aid = a.id(), bid = b.id();
  return tape.record(std::move(c), {a, b},
                     [&tape, aid, bid, m, k, n](const Tensor& g, const std::vector<bool>& needs) {
                       const float* av2 = tape.value(aid).ptr();
                       const float* bv2 = tape.value(bid).ptr();
                       std::vector<Tensor> out(2);
                       if (needs[0]) {
                         Tensor da({m, k});
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t kk = 0; kk < k; ++kk) {
                             float s = 0.0F;
                             for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bv2[kk * n + j];
                             da[i * k + kk] = s;
                           }
                         out[0] = std::move(da);
                       }
                       if (needs[1]) {
                         Tensor db({k, n});
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t kk = 0; kk < k; ++kk) {
                             const float aik = av2[i * k + kk];
                             for (std::size_t j = 0; j < n; ++j) db[kk * n + j] += aik * g[i * n + j];
                           }
                         out[1] = std::move(db);
                       }
                       return out;
                     });
}

Var linear(const Var& x, const Var& w, const Var& bias) {
  Tape& tape = tape_of(x);
  require_rank(w, 2, "linear", "weight");
  const std::size_t out_f = w.shape()[0], in_f = w.shape()[1];
  if (x.shape().empty() || last_dim(x.shape()) != in_f) {
    throw DimensionError("linear: input " + shape_to_string(x.shape()) +
                         " does not match weight " + shape_to_string(w.shape()));
  }
  const bool has_bias = bias.valid();
  if (has_bias && bias.shape() != Shape{out_f}) {
    throw DimensionError("linear: bias " + shape_to_string(bias.shape()) +
                         " does not match weight " + shape_to_string(w.shape()));
  }
  const std::size_t rows = leading_rows(x.shape());
  const float* xv = x.value().ptr();
  const float* wv = w.value().ptr();

  std::vector<float> wt(in_f * out_f);
  for (std::size_t o = 0; o < out_f; ++o)
    for (std::size_t i = 0; i < in_f; ++i) wt[i * out_f + o] = wv[o * in_f + i];

  Shape ys = x.shape();
  ys.back() = out_f;
  Tensor y(ys);
  float* yv = y.ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    float* yrow = yv + r * out_f;
    const float* xrow = xv + r * in_f;
    for (std::size_t i = 0; i < in_f; ++i) {
      const float xi = xrow[i];
      const float* wrow = wt.data() + i * out_f;
      for (std::size_t o = 0; o < out_f; ++o) yrow[o] += xi * wrow[o];
    }
    if (has_bias) {
      const float* bv = bias.value().ptr();
      for (std::size_t o = 0; o < out_f; ++o) yrow[o] += bv[o];
    }
  }

  const std::size_t xid = x.id(), wid = w.id();
  return tape.record(
      std::move(y), {x, w, bias},
      [&tape, xid, wid, rows, in_f, out_f](const Tensor& g, const std::vector<bool>& needs) {
        const Tensor& xv2 = tape.value(xid);
        const float* wv2 = tape.value(wid).ptr();
        std::vector<Tensor> out(3);
        if (needs[0]) {
          Tensor dx(xv2.shape());
          for (std::size_t r = 0; r < rows; ++r) {
            float* dxrow = dx.ptr() + r * in_f;
            for (std::size_t o = 0; o < out_f; ++o) {
              const float go = g[r * out_f + o];
              const float* wrow = wv2 + o * in_f;
              for (std::size_t i = 0; i < in_f; ++i) dxrow[i] += go * wrow[i];
            }
          }
          out[0] = std::move(dx);
        }
        if (needs[1]) {
          Tensor dw({out_f, in_f});
          for (std::size_t r = 0; r < rows; ++r) {
            const float* xrow = xv2.ptr() + r * in_f;
            for (std::size_t o = 0; o < out_f; ++o) {
              const float go = g[r * out_f + o];
              float* dwrow = dw.ptr() + o * in_f;
              for (std::size_t i = 0; i < in_f; ++i) dwrow[i] += go * xrow[i];
            }
          }
          out[1] = std::move(dw);
        }
        if (needs[2]) {
          Tensor db({out_f});
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t o = 0; o < out_f; ++o) db[o] += g[r * out_f + o];
          out[2] = std::move(db);
        }
        return out;
      });
}

Var conv2d(const Var& x, const Var& w, std::size_t stride, std::size_t pad) {
  Tape& tape = tape_of(x);
  require_rank(x, 4, "conv2d", "input");
  require_rank(w, 4, "conv2d", "kernel");
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  const std::size_t nb = xs[0], c = xs[1], h = xs[2], wd = xs[3];
  const std::size_t o = ws[0], kh = ws[2], kw = ws[3];
  if (ws[1] != c) {
    throw DimensionError("conv2d: kernel " + shape_to_string(ws) +
                         " does not match input channels of " + shape_to_string(xs));
  }
  if (stride == 0) throw DimensionError("conv2d: stride must be >= 1");
  if (kh > h + 2 * pad || kw > wd + 2 * pad) {
    throw DimensionError("conv2d: kernel " + shape_to_string(ws) +
                         " larger than padded input " + shape_to_string(xs));
  }
  const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
  const std::size_t wo = (wd + 2 * pad - kw) / stride + 1;
  const float* xv = x.value().ptr();
  const float* wv = w.value().ptr();
  Tensor y({nb, o, ho, wo});

  // Visits every (output, kernel tap) pair whose input lies inside the
  // unpadded image, in the fixed order c, ky, kx.
  auto for_taps = [=](auto&& fn) {
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t oc = 0; oc < o; ++oc)
        for (std::size_t oy = 0; oy < ho; ++oy)
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::size_t yi = ((b * o + oc) * ho + oy) * wo + ox;
            for (std::size_t ic = 0; ic < c; ++ic)
              for (std::size_t ky = 0; ky < kh; ++ky) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                          static_cast<std::ptrdiff_t>(pad);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t kx = 0; kx < kw; ++kx) {
                  const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                            static_cast<std::ptrdiff_t>(pad);
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
                  const std::size_t xi =
                      ((b * c + ic) * h + static_cast<std::size_t>(iy)) * wd + static_cast<std::size_t>(ix);
                  const std::size_t wi = ((oc * c + ic) * kh + ky) * kw + kx;
                  fn(yi, xi, wi);
                }
              }
          }
  };
  float* yv = y.ptr();
  for_taps([&](std::size_t yi, std::size_t xi, std::size_t wi) { yv[yi] += xv[xi] * wv[wi]; });

  const std::size_t xid = x.id(), wid = w.id();
  return tape.record(std::move(y), {x, w},
                     [&tape, xid, wid, for_taps](const Tensor& g, const std::vector<bool>& needs) {
                       const Tensor& xv2 = tape.value(xid);
                       const Tensor& wv2 = tape.value(wid);
                       std::vector<Tensor> out(2);
                       if (needs[0]) out[0] = Tensor(xv2.shape());
                       if (needs[1]) out[1] = Tensor(wv2.shape());
                       for_taps([&](std::size_t yi, std::size_t xi, std::size_t wi) {
                         if (needs[0]) out[0][xi] += g[yi] * wv2[wi];
                         if (needs[1]) out[1][wi] += g[yi] * xv2[xi];
                       });
                       return out;
                     });
}

Var add_channel_bias(const Var& x, const Var& b) {
  Tape& tape = tape_of(x);
  require_rank(x, 4, "add_channel_bias", "input");
  const Shape xs = x.shape();
  if (b.shape() != Shape{xs[1]}) {
    throw DimensionError("add_channel_bias: bias " + shape_to_string(b.shape()) +
                         " does not match channels of " + shape_to_string(xs));
  }
  const std::size_t plane = xs[2] * xs[3], c = xs[1], nb = xs[0];
  Tensor y = x.value();
  const float* bv = b.value().ptr();
  for (std::size_t n = 0; n < nb; ++n)
    for (std::size_t ch = 0; ch < c; ++ch) {
      float* p = y.ptr() + (n * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] += bv[ch];
    }
  return tape.record(std::move(y), {x, b},
                     [xs, plane, c, nb](const Tensor& g, const std::vector<bool>& needs) {
                       std::vector<Tensor> out(2);
                       if (needs[0]) out[0] = g;
                       if (needs[1]) {
                         Tensor db({c});
                         for (std::size_t n = 0; n < nb; ++n)
                           for (std::size_t ch = 0; ch < c; ++ch) {
                             const float* p = g.ptr() + (n * c + ch) * plane;
                             for (std::size_t i = 0; i < plane; ++i) db[ch] += p[i];
                           }
                         out[1] = std::move(db);
                       }
                       return out;
                     });
}

Var add(const Var& a, const Var& b) {
  Tape& tape = tape_of(a);
  const Broadcast kind = broadcast_kind(a, b, "add");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor y(kind == Broadcast::left_scalar ? bv.shape() : av.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) {
    const float l = kind == Broadcast::left_scalar ? av[0] : av[i];
    const float r = kind == Broadcast::right_scalar ? bv[0] : bv[i];
    y[i] = l + r;
  }
  const Shape as = av.shape(), bs = bv.shape();
  return tape.record(std::move(y), {a, b},
                     [kind, as, bs](const Tensor& g, const std::vector<bool>& needs) {
                       std::vector<Tensor> out(2);
                       if (needs[0]) {
                         out[0] = kind == Broadcast::left_scalar ? Tensor(as, {reduce_sum(g)})
                                                                 : g;
                       }
                       if (needs[1]) {
                         out[1] = kind == Broadcast::right_scalar ? Tensor(bs, {reduce_sum(g)})
                                                                  : g;
                       }
                       return out;
                     });
}

Var mul(const Var& a, const Var& b) {
  Tape& tape = tape_of(a);
  const Broadcast kind = broadcast_kind(a, b, "mul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor y(kind == Broadcast::left_scalar ? bv.shape() : av.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) {
    const float l = kind == Broadcast::left_scalar ? av[0] : av[i];
    const float r = kind == Broadcast::right_scalar ? bv[0] : bv[i];
    y[i] = l * r;
  }
  const std::size_t aid = a.id(), bid = b.id();
  return tape.record(
      std::move(y), {a, b},
      [&tape, kind, aid, bid](const Tensor& g, const std::vector<bool>& needs) {
        const Tensor& av2 = tape.value(aid);
        const Tensor& bv2 = tape.value(bid);
        auto lhs = [&](std::size_t i) { return kind == Broadcast::left_scalar ? av2[0] : av2[i]; };
        auto rhs = [&](std::size_t i) { return kind == Broadcast::right_scalar ? bv2[0] : bv2[i]; };
        std::vector<Tensor> out(2);
        if (needs[0]) {
          Tensor da(av2.shape());
          if (kind == Broadcast::left_scalar) {
            float s = 0.0F;
            for (std::size_t i = 0; i < g.numel(); ++i) s += g[i] * rhs(i);
            da[0] = s;
          } else {
            for (std::size_t i = 0; i < g.numel(); ++i) da[i] = g[i] * rhs(i);
          }
          out[0] = std::move(da);
        }
        if (needs[1]) {
          Tensor db(bv2.shape());
          if (kind == Broadcast::right_scalar) {
            float s = 0.0F;
            for (std::size_t i = 0; i < g.numel(); ++i) s += g[i] * lhs(i);
            db[0] = s;
          } else {
            for (std::size_t i = 0; i < g.numel(); ++i) db[i] = g[i] * lhs(i);
          }
          out[1] = std::move(db);
        }
        return out;
      });
}

Var scale(const Var& x, float factor) {
  return unary(
      x, [factor](float v) { return v * factor; },
      [factor](float, float) { return factor; });
}

Var sigmoid(const Var& x) {
  return unary(x, sigmoid_scalar, [](float, float y) { return y * (1.0F - y); });
}

Var silu(const Var& x) {
  return unary(
      x, [](float v) { return v * sigmoid_scalar(v); },
      [](float v, float) {
        const float s = sigmoid_scalar(v);
        return s * (1.0F + v * (1.0F - s));
      });
}

Var exp(const Var& x) {
  return unary(
      x, [](float v) { return std::exp(v); }, [](float, float y) { return y; });
}

Var softplus(const Var& x) {
  return unary(x, softplus_scalar, [](float v, float) { return sigmoid_scalar(v); });
}

Var clip(const Var& x, float lo, float hi) {
  if (!(lo <= hi)) throw ContractError("clip: lo must not exceed hi");
  return unary(
      x, [lo, hi](float v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](float v, float) { return (v >= lo && v <= hi) ? 1.0F : 0.0F; });
}

Var elementwise(const Var& x, Unary f) {
  switch (f) {
    case Unary::silu: return silu(x);
    case Unary::sigmoid: return sigmoid(x);
    case Unary::exp: return exp(x);
    case Unary::softplus: return softplus(x);
  }
  throw ContractError("elementwise: unknown function");
}

Var sum(const Var& x) {
  Tape& tape = tape_of(x);
  const Shape xs = x.shape();
  return tape.record(Tensor::scalar(reduce_sum(x.value())), {x},
                     [xs](const Tensor& g, const std::vector<bool>&) {
                       return std::vector<Tensor>{Tensor::full(xs, g[0])};
                     });
}

Var mean(const Var& x) {
  const std::size_t n = x.value().numel();
  return scale(sum(x), n == 0 ? 0.0F : 1.0F / static_cast<float>(n));
}

Var softmax_cross_entropy(const Var& logits, std::span<const std::int32_t> labels) {
  Tape& tape = tape_of(logits);
  require_rank(logits, 2, "softmax_cross_entropy", "logits");
  const std::size_t nb = logits.shape()[0], nc = logits.shape()[1];
  if (labels.size() != nb) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                         " labels for logits " + shape_to_string(logits.shape()));
  }
  for (std::int32_t y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= nc) {
      throw IndexError("softmax_cross_entropy: label " + std::to_string(y) +
                       " outside [0, " + std::to_string(nc) + ")");
    }
  }
  const float* lv = logits.value().ptr();
  auto probs = std::make_shared<std::vector<double>>(nb * nc);
  double total = 0.0;
  for (std::size_t b = 0; b < nb; ++b) {
    const float* row = lv + b * nc;
    double m = row[0];
    for (std::size_t c = 1; c < nc; ++c)
      if (row[c] > m) m = row[c];
    double z = 0.0;
    for (std::size_t c = 0; c < nc; ++c) z += std::exp(static_cast<double>(row[c]) - m);
    const double lse = m + std::log(z);
    for (std::size_t c = 0; c < nc; ++c)
      (*probs)[b * nc + c] = std::exp(static_cast<double>(row[c]) - lse);
    total += lse - static_cast<double>(row[labels[b]]);
  }
  const float loss = static_cast<float>(total / static_cast<double>(nb));
  std::vector<std::int32_t> ys(labels.begin(), labels.end());
  const Shape ls = logits.shape();
  return tape.record(Tensor::scalar(loss), {logits},
                     [probs, ys, ls, nb, nc](const Tensor& g, const std::vector<bool>&) {
                       Tensor d(ls);
                       const double scale_b = static_cast<double>(g[0]) / static_cast<double>(nb);
                       for (std::size_t b = 0; b < nb; ++b)
                         for (std::size_t c = 0; c < nc; ++c) {
                           double p = (*probs)[b * nc + c];
                           if (static_cast<std::int32_t>(c) == ys[b]) p -= 1.0;
                           d[b * nc + c] = static_cast<float>(p * scale_b);
                         }
                       return std::vector<Tensor>{std::move(d)};
                     });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, float eps) {
  Tape& tape = tape_of(x);
  const std::size_t d = last_dim(x.shape());
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw DimensionError("layer_norm: gain/bias must be [" + std::to_string(d) + "] for input " +
                         shape_to_string(x.shape()));
  }
  const std::size_t rows = leading_rows(x.shape());
  const float* xv = x.value().ptr();
  const float* gv = gain.value().ptr();
  const float* bv = bias.value().ptr();
  auto xhat = std::make_shared<std::vector<float>>(rows * d);
  auto rstd = std::make_shared<std::vector<float>>(rows);
  Tensor y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = xv + r * d;
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += row[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double c = row[i] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + static_cast<double>(eps));
    (*rstd)[r] = static_cast<float>(rs);
    for (std::size_t i = 0; i < d; ++i) {
      const float xh = static_cast<float>((row[i] - mu) * rs);
      (*xhat)[r * d + i] = xh;
      y[r * d + i] = xh * gv[i] + bv[i];
    }
  }
  const std::size_t gid = gain.id();
  const Shape xs = x.shape();
  return tape.record(
      std::move(y), {x, gain, bias},
      [&tape, gid, xhat, rstd, rows, d, xs](const Tensor& g, const std::vector<bool>& needs) {
        const float* gv2 = tape.value(gid).ptr();
        std::vector<Tensor> out(3);
        if (needs[0]) {
          Tensor dx(xs);
          for (std::size_t r = 0; r < rows; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
              const double dxh = static_cast<double>(g[r * d + i]) * gv2[i];
              m1 += dxh;
              m2 += dxh * (*xhat)[r * d + i];
            }
            m1 /= static_cast<double>(d);
            m2 /= static_cast<double>(d);
            for (std::size_t i = 0; i < d; ++i) {
              const double dxh = static_cast<double>(g[r * d + i]) * gv2[i];
              dx[r * d + i] = static_cast<float>((*rstd)[r] * (dxh - m1 - (*xhat)[r * d + i] * m2));
            }
          }
          out[0] = std::move(dx);
        }
        if (needs[1]) {
          Tensor dg({d});
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < d; ++i) dg[i] += g[r * d + i] * (*xhat)[r * d + i];
          out[1] = std::move(dg);
        }
        if (needs[2]) {
          Tensor db({d});
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < d; ++i) db[i] += g[r * d + i];
          out[2] = std::move(db);
        }
        return out;
      });
}

Var depthwise_conv1d(const Var& x, const Var& w, const Var& b) {
  Tape& tape = tape_of(x);
  require_rank(x, 3, "depthwise_conv1d", "input");
  require_rank(w, 2, "depthwise_conv1d", "kernel");
  const std::size_t nb = x.shape()[0], len = x.shape()[1], d = x.shape()[2];
  const std::size_t k = w.shape()[1];
  if (w.shape()[0] != d || b.shape() != Shape{d} || k % 2 == 0) {
    throw DimensionError("depthwise_conv1d: kernel " + shape_to_string(w.shape()) + "/bias " +
                         shape_to_string(b.shape()) + " incompatible with input " +
                         shape_to_string(x.shape()) + " (kernel length must be odd)");
  }
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const float* xv = x.value().ptr();
  const float* wv = w.value().ptr();
  const float* bv = b.value().ptr();
  Tensor y(x.shape());
  for (std::size_t n = 0; n < nb; ++n)
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t c = 0; c < d; ++c) {
        float acc = 0.0F;
        for (std::size_t j = 0; j < k; ++j) {
          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - pad;
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
          acc += wv[c * k + j] * xv[(n * len + static_cast<std::size_t>(src)) * d + c];
        }
        y[(n * len + t) * d + c] = acc + bv[c];
      }
  const std::size_t xid = x.id(), wid = w.id();
  return tape.record(
      std::move(y), {x, w, b},
      [&tape, xid, wid, nb, len, d, k, pad](const Tensor& g, const std::vector<bool>& needs) {
        const Tensor& xv2 = tape.value(xid);
        const Tensor& wv2 = tape.value(wid);
        std::vector<Tensor> out(3);
        if (needs[0]) out[0] = Tensor(xv2.shape());
        if (needs[1]) out[1] = Tensor(wv2.shape());
        if (needs[2]) out[2] = Tensor({d});
        for (std::size_t n = 0; n < nb; ++n)
          for (std::size_t t = 0; t < len; ++t)
            for (std::size_t c = 0; c < d; ++c) {
              const float gy = g[(n * len + t) * d + c];
              if (needs[2]) out[2][c] += gy;
              for (std::size_t j = 0; j < k; ++j) {
                const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - pad;
                if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
                const std::size_t xi = (n * len + static_cast<std::size_t>(src)) * d + c;
                if (needs[0]) out[0][xi] += gy * wv2[c * k + j];
                if (needs[1]) out[1][c * k + j] += gy * xv2[xi];
              }
            }
        return out;
      });
}

Var selective_scan(const Var& u, const Var& delta, const Var& a_log, const Var& b_in,
                   const Var& c_out, const Var& skip, bool reverse) {
  Tape& tape = tape_of(u);
  require_rank(u, 3, "selective_scan", "u");
  const std::size_t nb = u.shape()[0], len = u.shape()[1], d = u.shape()[2];
  if (a_log.shape().size() != 2 || a_log.shape()[0] != d) {
    throw DimensionError("selective_scan: A_log " + shape_to_string(a_log.shape()) +
                         " does not match u " + shape_to_string(u.shape()));
  }
  const std::size_t ns = a_log.shape()[1];
  if (delta.shape() != u.shape() || b_in.shape() != Shape{nb, len, ns} ||
      c_out.shape() != Shape{nb, len, ns} || skip.shape() != Shape{d}) {
    throw DimensionError("selective_scan: operand shapes disagree (u " +
                         shape_to_string(u.shape()) + ", delta " + shape_to_string(delta.shape()) +
                         ", B " + shape_to_string(b_in.shape()) + ", C " +
                         shape_to_string(c_out.shape()) + ", D " + shape_to_string(skip.shape()) + ")");
  }
  if (len == 0) throw DimensionError("selective_scan: sequence length must be >= 1");

  const float* uv = u.value().ptr();
  const float* dv = delta.value().ptr();
  const float* alv = a_log.value().ptr();
  const float* bv = b_in.value().ptr();
  const float* cv = c_out.value().ptr();
  const float* sv = skip.value().ptr();

  std::vector<float> a_mat(d * ns);
  for (std::size_t i = 0; i < d * ns; ++i) a_mat[i] = -std::exp(alv[i]);

  const bool keep_states = tape.grad_enabled() &&
                           (tape.requires_grad(u) || tape.requires_grad(delta) ||
                            tape.requires_grad(a_log) || tape.requires_grad(b_in) ||
                            tape.requires_grad(c_out) || tape.requires_grad(skip));
  auto states = std::make_shared<std::vector<float>>(keep_states ? nb * len * d * ns : 0);

  Tensor y(u.shape());
  std::vector<float> h(ns);
  for (std::size_t n = 0; n < nb; ++n)
    for (std::size_t c = 0; c < d; ++c) {
      std::fill(h.begin(), h.end(), 0.0F);
      const float* arow = a_mat.data() + c * ns;
      for (std::size_t step = 0; step < len; ++step) {
        const std::size_t t = reverse ? len - 1 - step : step;
        const std::size_t ti = (n * len + t) * d + c;
        const float dt = dv[ti];
        const float ut = uv[ti];
        const float* brow = bv + (n * len + t) * ns;
        const float* crow = cv + (n * len + t) * ns;
        float acc = 0.0F;
        for (std::size_t s = 0; s < ns; ++s) {
          h[s] = std::exp(dt * arow[s]) * h[s] + dt * brow[s] * ut;
          acc += crow[s] * h[s];
        }
        y[ti] = acc + sv[c] * ut;
        if (keep_states) std::copy(h.begin(), h.end(), states->begin() + static_cast<std::ptrdiff_t>(ti * ns));
      }
    }

  const std::size_t uid = u.id(), did = delta.id(), aid = a_log.id(), bid = b_in.id(),
                    cid = c_out.id(), sid = skip.id();
  return tape.record(
      std::move(y), {u, delta, a_log, b_in, c_out, skip},
      [&tape, uid, did, aid, bid, cid, sid, states, nb, len, d, ns,
       reverse](const Tensor& g, const std::vector<bool>&) {
        const float* uv2 = tape.value(uid).ptr();
        const float* dv2 = tape.value(did).ptr();
        const float* alv2 = tape.value(aid).ptr();
        const float* bv2 = tape.value(bid).ptr();
        const float* cv2 = tape.value(cid).ptr();
        const float* sv2 = tape.value(sid).ptr();
        Tensor du({nb, len, d}), ddelta({nb, len, d}), da_log({d, ns}), db({nb, len, ns}),
            dc({nb, len, ns}), dskip({d});
        std::vector<float> dh(ns);
        for (std::size_t n = 0; n < nb; ++n)
          for (std::size_t c = 0; c < d; ++c) {
            std::fill(dh.begin(), dh.end(), 0.0F);
            for (std::size_t step = len; step-- > 0;) {
              const std::size_t t = reverse ? len - 1 - step : step;
              const std::size_t ti = (n * len + t) * d + c;
              const float gy = g[ti];
              const float dt = dv2[ti];
              const float ut = uv2[ti];
              const float* brow = bv2 + (n * len + t) * ns;
              const float* crow = cv2 + (n * len + t) * ns;
              const float* hrow = states->data() + ti * ns;
              const float* hprev = nullptr;
              if (step > 0) {
                const std::size_t tp = reverse ? t + 1 : t - 1;
                hprev = states->data() + ((n * len + tp) * d + c) * ns;
              }
              dskip[c] += gy * ut;
              float du_acc = gy * sv2[c];
              float ddt_acc = 0.0F;
              for (std::size_t s = 0; s < ns; ++s) {
                const float a = -std::exp(alv2[c * ns + s]);
                const float decay = std::exp(dt * a);
                dh[s] += gy * crow[s];
                dc[(n * len + t) * ns + s] += gy * hrow[s];
                const float hp = hprev != nullptr ? hprev[s] : 0.0F;
                const float g_decay = dh[s] * hp;
                ddt_acc += g_decay * decay * a + dh[s] * brow[s] * ut;
                // dA/dA_log = A.
                da_log[c * ns + s] += g_decay * decay * dt * a;
                db[(n * len + t) * ns + s] += dh[s] * dt * ut;
                du_acc += dh[s] * dt * brow[s];
                dh[s] *= decay;
              }
              du[ti] += du_acc;
              ddelta[ti] += ddt_acc;
            }
          }
        return std::vector<Tensor>{std::move(du), std::move(ddelta), std::move(da_log),
                                   std::move(db),  std::move(dc),     std::move(dskip)};
      });
}

Var slice_last(const Var& x, std::size_t start, std::size_t len) {
  Tape& tape = tape_of(x);
  const Shape xs = x.shape();
  const std::size_t d = last_dim(xs);
  if (xs.empty() || start + len > d) {
    throw DimensionError("slice_last: [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") outside " + shape_to_string(xs));
  }
  const std::size_t rows = leading_rows(xs);
  Shape ys = xs;
  ys.back() = len;
  Tensor y(ys);
  const float* xv = x.value().ptr();
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(xv + r * d + start, len, y.ptr() + r * len);
  return tape.record(std::move(y), {x},
                     [xs, rows, d, start, len](const Tensor& g, const std::vector<bool>&) {
                       Tensor dx(xs);
                       for (std::size_t r = 0; r < rows; ++r)
                         std::copy_n(g.ptr() + r * len, len, dx.ptr() + r * d + start);
                       return std::vector<Tensor>{std::move(dx)};
                     });
}

Var image_to_tokens(const Var& x) {
  Tape& tape = tape_of(x);
  require_rank(x, 4, "image_to_tokens", "input");
  const Shape xs = x.shape();
  const std::size_t nb = xs[0], c = xs[1], plane = xs[2] * xs[3];
  Tensor y({nb, plane, c});
  const float* xv = x.value().ptr();
  for (std::size_t n = 0; n < nb; ++n)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < plane; ++p)
        y[(n * plane + p) * c + ch] = xv[(n * c + ch) * plane + p];
  return tape.record(std::move(y), {x}, [xs, nb, c, plane](const Tensor& g, const std::vector<bool>&) {
    Tensor dx(xs);
    for (std::size_t n = 0; n < nb; ++n)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < plane; ++p)
          dx[(n * c + ch) * plane + p] = g[(n * plane + p) * c + ch];
    return std::vector<Tensor>{std::move(dx)};
  });
}

Var merge_pool2x2(const Var& x, std::size_t grid_h, std::size_t grid_w) {
  Tape& tape = tape_of(x);
  require_rank(x, 3, "merge_pool2x2", "input");
  const Shape xs = x.shape();
  const std::size_t nb = xs[0], d = xs[2];
  if (xs[1] != grid_h * grid_w) {
    throw DimensionError("merge_pool2x2: " + std::to_string(xs[1]) + " tokens do not form a " +
                         std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid");
  }
  const std::size_t oh = (grid_h + 1) / 2, ow = (grid_w + 1) / 2;
  Tensor y({nb, oh * ow, d});
  const float* xv = x.value().ptr();
  auto for_windows = [=](auto&& fn) {
    for (std::size_t n = 0; n < nb; ++n)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const std::size_t y0 = 2 * oy, x0 = 2 * ox;
          const std::size_t y1 = std::min(y0 + 2, grid_h), x1 = std::min(x0 + 2, grid_w);
          const float inv = 1.0F / static_cast<float>((y1 - y0) * (x1 - x0));
          const std::size_t out_tok = n * oh * ow + oy * ow + ox;
          for (std::size_t iy = y0; iy < y1; ++iy)
            for (std::size_t ix = x0; ix < x1; ++ix)
              fn(out_tok, n * grid_h * grid_w + iy * grid_w + ix, inv);
        }
  };
  for_windows([&](std::size_t o, std::size_t i, float inv) {
    for (std::size_t c = 0; c < d; ++c) y[o * d + c] += xv[i * d + c] * inv;
  });
  return tape.record(std::move(y), {x}, [xs, d, for_windows](const Tensor& g, const std::vector<bool>&) {
    Tensor dx(xs);
    for_windows([&](std::size_t o, std::size_t i, float inv) {
      for (std::size_t c = 0; c < d; ++c) dx[i * d + c] += g[o * d + c] * inv;
    });
    return std::vector<Tensor>{std::move(dx)};
  });
}

Var mean_tokens(const Var& x) {
  Tape& tape = tape_of(x);
  require_rank(x, 3, "mean_tokens", "input");
  const Shape xs = x.shape();
  const std::size_t nb = xs[0], len = xs[1], d = xs[2];
  const float inv = 1.0F / static_cast<float>(len);
  Tensor y({nb, d});
  const float* xv = x.value().ptr();
  for (std::size_t n = 0; n < nb; ++n) {
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t c = 0; c < d; ++c) y[n * d + c] += xv[(n * len + t) * d + c];
    for (std::size_t c = 0; c < d; ++c) y[n * d + c] *= inv;
  }
  return tape.record(std::move(y), {x}, [xs, nb, len, d, inv](const Tensor& g, const std::vector<bool>&) {
    Tensor dx(xs);
    for (std::size_t n = 0; n < nb; ++n)
      for (std::size_t t = 0; t < len; ++t)
        for (std::size_t c = 0; c < d; ++c) dx[(n * len + t) * d + c] = g[n * d + c] * inv;
    return std::vector<Tensor>{std::move(dx)};
  });
}

Var replace_value(const Var& x, Tensor replacement) {
  Tape& tape = tape_of(x);
  if (replacement.shape() != x.shape()) {
    throw DimensionError("replace_value: replacement " + shape_to_string(replacement.shape()) +
                         " does not match " + shape_to_string(x.shape()));
  }
  return tape.constant(std::move(replacement));
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("softmax_rows: expected rank-2 logits");
  const std::size_t nb = logits.dim(0), nc = logits.dim(1);
  Tensor p(logits.shape());
  for (std::size_t b = 0; b < nb; ++b) {
    const float* row = logits.ptr() + b * nc;
    double m = row[0];
    for (std::size_t c = 1; c < nc; ++c)
      if (row[c] > m) m = row[c];
    double z = 0.0;
    for (std::size_t c = 0; c < nc; ++c) z += std::exp(static_cast<double>(row[c]) - m);
    for (std::size_t c = 0; c < nc; ++c)
      p[b * nc + c] = static_cast<float>(std::exp(static_cast<double>(row[c]) - m) / z);
  }
  return p;
}

}  // namespace rssm::ops
