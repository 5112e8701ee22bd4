#include "tts/dsp/normalization.hpp"

#include <algorithm>
#include <cmath>

#include "tts/dsp/dsp.hpp"
#include "tts/nn/container.hpp"

namespace tts::dsp {

FeatureStats FeatureStats::compute(const std::vector<nn::Tensor>& features, double min_std) {
  if (features.empty()) throw DspError("cannot compute statistics of an empty corpus");
  const std::size_t dim = features.front().cols();
  std::vector<double> sum(dim, 0.0), sq(dim, 0.0);
  std::size_t n = 0;
  for (const auto& f : features) {
    if (f.cols() != dim) throw DspError("feature dimension differs across utterances");
    for (std::size_t r = 0; r < f.rows(); ++r) {
      for (std::size_t c = 0; c < dim; ++c) {
        sum[c] += f(r, c);
        sq[c] += f(r, c) * f(r, c);
      }
    }
    n += f.rows();
  }
  FeatureStats s;
  s.mean.resize(dim);
  s.std.resize(dim);
  for (std::size_t c = 0; c < dim; ++c) {
    s.mean[c] = sum[c] / static_cast<double>(n);
    const double var = std::max(0.0, sq[c] / static_cast<double>(n) - s.mean[c] * s.mean[c]);
    s.std[c] = std::max(std::sqrt(var), min_std);
  }
  return s;
}

nn::Tensor FeatureStats::normalize(const nn::Tensor& feats) const {
  if (feats.cols() != mean.size()) throw DspError("normalize: feature dimension mismatch");
  nn::Tensor out = feats;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) = (out(r, c) - mean[c]) / std[c];
  return out;
}

nn::Tensor FeatureStats::denormalize(const nn::Tensor& feats) const {
  if (feats.cols() != mean.size()) throw DspError("denormalize: feature dimension mismatch");
  nn::Tensor out = feats;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) = out(r, c) * std[c] + mean[c];
  return out;
}

void FeatureStats::save(const std::filesystem::path& path) const {
  nn::Container c;
  c.arrays.emplace("mean", nn::Tensor::row(mean));
  c.arrays.emplace("std", nn::Tensor::row(std));
  nn::write_container(path, c);
}

FeatureStats FeatureStats::load(const std::filesystem::path& path) {
  const auto c = nn::read_container(path);
  FeatureStats s;
  s.mean = c.at("mean").values();
  s.std = c.at("std").values();
  if (s.mean.size() != s.std.size()) throw DspError("statistics file has mismatched mean/std lengths");
  return s;
}

}  // namespace tts::dsp
