#pragma once

#include <cstdint>
#include <string>

#include "tts/nn/tensor.hpp"

namespace tts::nn {

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  ParamStore m;
  ParamStore v;
};

// Bias-corrected Adam. Moment buffers are created lazily on the first call. Every
// parameter must have a gradient of matching shape; a missing one throws.
void adam_step(AdamState& state, ParamStore& params, const ParamStore& grads);

enum class LrKind { constant, noam };

struct LrSchedule {
  LrKind kind = LrKind::constant;
  double scale = 1e-3;
  std::uint64_t warmup = 4000;
  std::size_t model_dim = 256;
};

// scale * dim^-0.5 * min(step^-0.5, step * warmup^-1.5)
double noam_lr(const LrSchedule& schedule, std::uint64_t step);
// Dispatches on kind; constant schedules return `scale`.
double learning_rate(const LrSchedule& schedule, std::uint64_t step);

LrKind parse_lr_kind(const std::string& s);
std::string to_string(LrKind k);

double global_norm(const ParamStore& grads);
// Rescales in place so the global L2 norm is at most max_norm. Returns the pre-clip norm.
double clip_global_norm(ParamStore& grads, double max_norm);

}  // namespace tts::nn
