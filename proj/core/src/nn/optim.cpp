#include "tts/nn/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tts::nn {

void adam_step(AdamState& state, ParamStore& params, const ParamStore& grads) {
  for (const auto& [name, p] : params) {
    if (!grads.contains(name)) throw std::invalid_argument("adam_step: missing gradient for parameter " + name);
    if (grads.at(name).shape() != p.shape()) {
      throw ShapeError("adam_step: gradient shape " + shape_str(grads.at(name).shape()) + " differs from parameter " +
                       name + " " + shape_str(p.shape()));
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (auto& [name, p] : params) {
    if (!state.m.contains(name)) {
      state.m.add(name, Tensor(p.shape(), 0.0));
      state.v.add(name, Tensor(p.shape(), 0.0));
    }
    auto& m = state.m.at(name);
    auto& v = state.v.at(name);
    const auto& g = grads.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= state.lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

double noam_lr(const LrSchedule& s, std::uint64_t step) {
  if (step == 0) throw std::invalid_argument("noam_lr: step must be >= 1");
  const double st = static_cast<double>(step);
  const double w = static_cast<double>(s.warmup);
  return s.scale * std::pow(static_cast<double>(s.model_dim), -0.5) * std::min(std::pow(st, -0.5), st * std::pow(w, -1.5));
}

double learning_rate(const LrSchedule& s, std::uint64_t step) {
  if (s.kind == LrKind::noam) return noam_lr(s, step);
  if (step == 0) throw std::invalid_argument("learning_rate: step must be >= 1");
  return s.scale;
}

LrKind parse_lr_kind(const std::string& s) {
  if (s == "constant") return LrKind::constant;
  if (s == "noam") return LrKind::noam;
  throw std::invalid_argument("unknown learning-rate schedule: " + s);
}

std::string to_string(LrKind k) { return k == LrKind::noam ? "noam" : "constant"; }

double global_norm(const ParamStore& grads) {
  double s = 0.0;
  for (const auto& [name, g] : grads)
    for (double v : g.data()) s += v * v;
  return std::sqrt(s);
}

double clip_global_norm(ParamStore& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (auto& [name, g] : grads)
      for (auto& v : g.values()) v *= f;
  }
  return norm;
}

}  // namespace tts::nn
