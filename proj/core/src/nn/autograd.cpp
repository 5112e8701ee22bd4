#include "tts/nn/autograd.hpp"

#include <stdexcept>

namespace tts::nn {

const Tensor& Var::value() const { return tape->value(*this); }

double Var::item() const {
  const auto& v = value();
  if (v.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(v.shape()));
  return v[0];
}

Var Tape::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Var Tape::leaf(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = record_;
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::param(const ParamStore& store, const std::string& name) {
  if (auto it = param_ids_.find(name); it != param_ids_.end()) return {this, it->second};
  Var v = leaf(store.at(name));
  param_ids_.emplace(name, v.id);
  return v;
}

Var Tape::push(Tensor value, bool needs_grad, Backward fn) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = record_ && needs_grad;
  if (n.needs_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

bool Tape::any_needs_grad(std::initializer_list<Var> vars) const {
  if (!record_) return false;
  for (auto v : vars) {
    if (nodes_[v.id].needs_grad) return true;
  }
  return false;
}

std::span<double> Tape::grad_buffer(Var v) {
  auto& n = nodes_[v.id];
  if (!n.needs_grad) return {};
  if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

std::span<const double> Tape::grad(Var v) const { return nodes_[v.id].grad; }

void Tape::backward(Var loss) {
  if (loss.tape != this) throw std::invalid_argument("backward() on a Var from another tape");
  if (nodes_[loss.id].value.size() != 1) throw ShapeError("backward() requires a scalar loss");
  if (!nodes_[loss.id].needs_grad) return;
  grad_buffer(loss)[0] += 1.0;
  for (std::int64_t i = loss.id; i >= 0; --i) {
    auto& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, n.grad);
    // the tape is single-use; release closure state eagerly
    n.backward = nullptr;
  }
}

ParamStore Tape::param_grads(const ParamStore& params) const {
  ParamStore out;
  for (const auto& [name, tensor] : params) {
    Tensor g(tensor.shape(), 0.0);
    if (auto it = param_ids_.find(name); it != param_ids_.end()) {
      const auto& src = nodes_[it->second].grad;
      if (!src.empty()) g.values() = src;
    }
    out.add(name, std::move(g));
  }
  return out;
}

}  // namespace tts::nn
