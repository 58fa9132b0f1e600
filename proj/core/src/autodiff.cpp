#include "robustssm/autodiff.hpp"

#include "robustssm/errors.hpp"

namespace rssm {

const Tensor& Var::value() const {
  if (tape_ == nullptr) throw ContractError("use of an unbound Var");
  return tape_->value(id_);
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (consumed_) throw ContractError("tape already consumed by backward()");
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad && grad_enabled_;
  n.is_root = n.requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn rule) {
  if (consumed_) throw ContractError("tape already consumed by backward()");
  Node n;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (!v.valid()) {
      n.inputs.push_back(static_cast<std::size_t>(-1));
      continue;
    }
    if (v.tape() != this) throw ContractError("operand recorded on a different tape");
    n.inputs.push_back(v.id());
    n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
  }
  if (n.requires_grad) n.rule = std::move(rule);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

namespace {
void accumulate(Tensor& into, const Tensor& g) {
  if (into.empty()) {
    into = g;
    return;
  }
  if (into.shape() != g.shape()) {
    throw DimensionError("gradient shape " + shape_to_string(g.shape()) +
                         " does not match " + shape_to_string(into.shape()));
  }
  float* dst = into.ptr();
  const float* src = g.ptr();
  for (std::size_t i = 0; i < into.numel(); ++i) dst[i] += src[i];
}
}  // namespace

std::vector<Tensor> Tape::backward(const Var& loss, std::span<const Var> roots) {
  if (consumed_) throw ContractError("tape already consumed by backward()");
  if (loss.tape() != this) throw ContractError("loss was not recorded on this tape");
  const Tensor& lv = nodes_[loss.id()].value;
  if (lv.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        shape_to_string(lv.shape()));
  }
  for (const Var& r : roots) {
    if (r.tape() != this || !nodes_[r.id()].is_root) {
      throw MissingRootError("tensor #" + std::to_string(r.id()) +
                             " was not marked as a differentiation root");
    }
  }

  std::vector<Tensor> grads(loss.id() + 1);
  grads[loss.id()] = Tensor::full(lv.shape(), 1.0F);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (grads[i].empty() || !n.requires_grad || !n.rule) continue;
    std::vector<bool> needs(n.inputs.size(), false);
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      const std::size_t in = n.inputs[k];
      needs[k] = in != static_cast<std::size_t>(-1) && nodes_[in].requires_grad;
    }
    std::vector<Tensor> in_grads = n.rule(grads[i], needs);
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      if (!needs[k] || k >= in_grads.size() || in_grads[k].empty()) continue;
      accumulate(grads[n.inputs[k]], in_grads[k]);
    }
    grads[i] = Tensor();
  }

  std::vector<Tensor> out;
  out.reserve(roots.size());
  for (const Var& r : roots) {
    if (r.id() < grads.size() && !grads[r.id()].empty()) {
      out.push_back(grads[r.id()]);
    } else {
      out.push_back(Tensor(nodes_[r.id()].value.shape()));
    }
  }
  consumed_ = true;
  for (Node& n : nodes_) n.rule = nullptr;
  return out;
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
}

}  // namespace rssm
