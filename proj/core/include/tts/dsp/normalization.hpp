#pragma once

#include <filesystem>
#include <vector>

#include "tts/nn/tensor.hpp"

namespace tts::dsp {

// Per-bin global mean/std over all frames of a corpus.
struct FeatureStats {
  std::vector<double> mean;
  std::vector<double> std;

  static FeatureStats compute(const std::vector<nn::Tensor>& features, double min_std = 1e-3);
  nn::Tensor normalize(const nn::Tensor& feats) const;
  nn::Tensor denormalize(const nn::Tensor& feats) const;

  // Container file with arrays "mean" and "std" of shape [1, dim].
  void save(const std::filesystem::path& path) const;
  static FeatureStats load(const std::filesystem::path& path);
};

}  // namespace tts::dsp
