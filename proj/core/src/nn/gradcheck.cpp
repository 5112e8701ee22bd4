#include "tts/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tts::nn {
namespace {

double evaluate(const LossFn& fn, const ParamStore& params) {
  Tape t(false);
  const double v = fn(t, params).item();
  if (!std::isfinite(v)) throw std::runtime_error("finite_diff_check: loss is not finite");
  return v;
}

}  // namespace

GradCheckReport finite_diff_check(const LossFn& fn, ParamStore& params, double eps) {
  ParamStore analytic;
  {
    Tape t(true);
    Var loss = fn(t, params);
    if (!std::isfinite(loss.item())) throw std::runtime_error("finite_diff_check: loss is not finite");
    t.backward(loss);
    analytic = t.param_grads(params);
  }
  GradCheckReport report;
  for (auto& [name, p] : params) {
    const auto& a = analytic.at(name);
    double worst = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double orig = p[i];
      p[i] = orig + eps;
      const double fp = evaluate(fn, params);
      p[i] = orig - eps;
      const double fm = evaluate(fn, params);
      p[i] = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double denom = std::max({std::abs(a[i]), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a[i] - numeric) / denom);
      ++report.checked;
    }
    report.per_param[name] = worst;
    if (worst >= report.max_rel_error) {
      report.max_rel_error = worst;
      report.worst_param = name;
    }
  }
  return report;
}

}  // namespace tts::nn
