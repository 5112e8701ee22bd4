#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tts/nn/tensor.hpp"

namespace tts::nn {

class Tape;

// Handle to a node recorded on a Tape. Cheap to copy; valid for the tape's lifetime.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double item() const;
  bool valid() const { return tape != nullptr; }
};

// Dynamic reverse-mode tape. Nodes are appended in evaluation order, so reverse
// insertion order is a valid topological order for backward(). A tape belongs to
// one thread; build a fresh tape per forward/backward pass.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::span<const double> grad_out)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Tensor value);
  // Differentiable leaf not bound to a ParamStore.
  Var leaf(Tensor value);
  // Leaf bound to a named parameter; repeated lookups return the same node.
  Var param(const ParamStore& store, const std::string& name);

  // Appends an op result. `fn` is kept only when recording and some parent needs a gradient.
  Var push(Tensor value, bool needs_grad, Backward fn);
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  bool any_needs_grad(std::initializer_list<Var> vars) const;

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  // Gradient buffer for accumulation during backward; empty span when the node takes no gradient.
  std::span<double> grad_buffer(Var v);
  std::span<const double> grad(Var v) const;

  // Seeds d(loss)/d(loss) = 1; loss must hold exactly one element.
  void backward(Var loss);

  // Gradients for every parameter in `params`; parameters never touched get zeros.
  ParamStore param_grads(const ParamStore& params) const;
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    Backward backward;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::uint32_t> param_ids_;
  bool record_;
};

}  // namespace tts::nn
