#include "blocks.hpp"

#include <stdexcept>

namespace tts::models::detail {

using nn::Tape;
using nn::Var;

std::string key(const std::string& prefix, std::size_t i, const std::string& suffix) {
  return prefix + ".l" + std::to_string(i) + "." + suffix;
}

std::vector<std::size_t> token_indices(const text::TokenSequence& tokens, std::size_t vocab_size) {
  if (tokens.ids.empty()) throw std::invalid_argument("empty token sequence");
  std::vector<std::size_t> idx;
  idx.reserve(tokens.ids.size());
  for (std::size_t i = 0; i < tokens.ids.size(); ++i) {
    const auto id = tokens.ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
      throw std::out_of_range("token id " + std::to_string(id) + " at position " + std::to_string(i) +
                              " outside vocabulary of size " + std::to_string(vocab_size));
    }
    idx.push_back(static_cast<std::size_t>(id));
  }
  return idx;
}

void check_speaker(const SpeakerEmbedding* spk, std::size_t dim) {
  if (dim == 0) {
    if (spk != nullptr) throw std::invalid_argument("speaker embedding given to a model without speaker conditioning");
    return;
  }
  if (spk == nullptr) throw std::invalid_argument("model expects a speaker embedding of dimension " + std::to_string(dim));
  if (spk->size() != dim) {
    throw std::invalid_argument("speaker embedding has dimension " + std::to_string(spk->size()) + ", model expects " +
                                std::to_string(dim));
  }
}

Var add_speaker(Tape& t, const nn::ParamStore& p, Var x, const SpeakerEmbedding* spk, std::size_t dim) {
  check_speaker(spk, dim);
  if (dim == 0) return x;
  Var proj = nn::linear(t, p, "spk_proj", t.constant(Tensor::row(*spk)));
  return nn::add_row(x, proj);
}

Var maybe_dropout(Var x, double rate, std::mt19937_64* rng) {
  if (rng == nullptr || rate <= 0.0) return x;
  return nn::dropout(x, rate, *rng);
}

void init_prenet(nn::Initializer& init, nn::ParamStore& store, std::size_t in, std::size_t layers, std::size_t units) {
  for (std::size_t i = 0; i < layers; ++i) init.linear(store, key("prenet", i, "fc"), i == 0 ? in : units, units);
}

Var prenet(Tape& t, const nn::ParamStore& p, Var x, std::size_t layers, double rate, std::mt19937_64* rng) {
  for (std::size_t i = 0; i < layers; ++i) x = maybe_dropout(nn::relu(nn::linear(t, p, key("prenet", i, "fc"), x)), rate, rng);
  return x;
}

void init_postnet(nn::Initializer& init, nn::ParamStore& store, const PostnetConfig& cfg, std::size_t n_mels) {
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    const std::size_t in = i == 0 ? n_mels : cfg.channels;
    const std::size_t out = i + 1 == cfg.layers ? n_mels : cfg.channels;
    init.conv1d(store, key("post", i, "conv"), cfg.kernel, in, out);
  }
}

Var postnet(Tape& t, const nn::ParamStore& p, const PostnetConfig& cfg, Var mel) {
  if (cfg.layers == 0) return mel;
  Var y = mel;
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    y = nn::conv1d_layer(t, p, key("post", i, "conv"), y);
    if (i + 1 < cfg.layers) y = nn::tanh(y);
  }
  return nn::add(mel, y);
}

Var add_positions(Tape& t, const nn::ParamStore& p, const std::string& alpha_name, Var x) {
  Var pe = t.constant(nn::sinusoid_positions(x.rows(), x.cols()));
  return nn::add(x, nn::mul_scalar_var(pe, t.param(p, alpha_name)));
}

std::vector<std::uint8_t> causal_mask(std::size_t n) {
  std::vector<std::uint8_t> m(n * n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) m[i * n + j] = 1;
  return m;
}

Tensor shifted_decoder_inputs(const Tensor& targets, std::size_t r) {
  const std::size_t groups = targets.rows() / r;
  Tensor in = Tensor::matrix(groups, targets.cols());
  for (std::size_t g = 1; g < groups; ++g)
    for (std::size_t c = 0; c < targets.cols(); ++c) in(g, c) = targets(g * r - 1, c);
  return in;
}

void check_targets(const Tensor& targets, std::size_t n_mels, std::size_t r) {
  if (targets.rows() == 0) throw nn::ShapeError("teacher forcing needs at least one target frame");
  if (targets.cols() != n_mels) {
    throw nn::ShapeError("targets have " + std::to_string(targets.cols()) + " mel bins, model expects " +
                         std::to_string(n_mels));
  }
  if (targets.rows() % r != 0) {
    throw nn::ShapeError("target frame count " + std::to_string(targets.rows()) +
                         " not divisible by the reduction factor " + std::to_string(r));
  }
}

}  // namespace tts::models::detail
