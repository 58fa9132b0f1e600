#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "robustssm/tensor.hpp"

namespace rssm {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid for the
// lifetime of the owning tape.
class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Backward rule of one primitive. Receives the gradient w.r.t. the op's
// output and a per-input mask; returns one gradient per input (an empty
// Tensor for inputs that need none).
using BackwardFn = std::function<std::vector<Tensor>(
    const Tensor& grad_out, const std::vector<bool>& needs)>;

// Records primitive ops in execution order and replays them in exact
// reverse order. A tape belongs to one thread; independent evaluations use
// independent tapes.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }

  // A leaf. requires_grad marks it as a differentiation root.
  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Records the result of a primitive. The rule is kept only if some input
  // requires a gradient.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn rule);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Gradients of the scalar `loss` w.r.t. each root, in the order given.
  // Roots unreachable from the loss get zero tensors. Consumes the tape.
  std::vector<Tensor> backward(const Var& loss, std::span<const Var> roots);

  void reset();

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn rule;
    bool requires_grad = false;
    bool is_root = false;
  };
  std::vector<Node> nodes_;
  bool grad_enabled_;
  bool consumed_ = false;
};

}  // namespace rssm
