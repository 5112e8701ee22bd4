#pragma once

#include <functional>
#include <map>
#include <string>

#include "tts/nn/autograd.hpp"

namespace tts::nn {

struct GradCheckReport {
  std::map<std::string, double> per_param;  // max relative error per parameter
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t checked = 0;
};

// Builds a scalar loss on the given tape, reading parameters via Tape::param.
using LossFn = std::function<Var(Tape&, const ParamStore&)>;

// Compares reverse-mode gradients with central differences (f(p+eps)-f(p-eps))/(2 eps)
// using |a-n| / max(|a|,|n|,1e-8). `params` is perturbed in place and restored.
GradCheckReport finite_diff_check(const LossFn& fn, ParamStore& params, double eps = 1e-5);

}  // namespace tts::nn
