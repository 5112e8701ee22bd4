#pragma once

// Building blocks shared by the three architectures.

#include <random>
#include <string>
#include <vector>

#include "tts/models/models.hpp"
#include "tts/nn/layers.hpp"

namespace tts::models::detail {

std::string key(const std::string& prefix, std::size_t i, const std::string& suffix);

// Validated embedding indices for `tokens`.
std::vector<std::size_t> token_indices(const text::TokenSequence& tokens, std::size_t vocab_size);

void check_speaker(const SpeakerEmbedding* spk, std::size_t dim);

// x + affine(spk) on every row, when spk_dim > 0.
nn::Var add_speaker(nn::Tape& t, const nn::ParamStore& p, nn::Var x, const SpeakerEmbedding* spk, std::size_t dim);

nn::Var maybe_dropout(nn::Var x, double rate, std::mt19937_64* rng);

void init_prenet(nn::Initializer& init, nn::ParamStore& store, std::size_t in, std::size_t layers, std::size_t units);
nn::Var prenet(nn::Tape& t, const nn::ParamStore& p, nn::Var x, std::size_t layers, double rate, std::mt19937_64* rng);

void init_postnet(nn::Initializer& init, nn::ParamStore& store, const PostnetConfig& cfg, std::size_t n_mels);
// mel + residual(mel); identity when the post-net has no layers.
nn::Var postnet(nn::Tape& t, const nn::ParamStore& p, const PostnetConfig& cfg, nn::Var mel);

// Scaled sinusoidal positions: x + alpha * PE.
nn::Var add_positions(nn::Tape& t, const nn::ParamStore& p, const std::string& alpha_name, nn::Var x);

// Causal mask for self-attention over `n` steps (row i admits columns <= i).
std::vector<std::uint8_t> causal_mask(std::size_t n);

// Teacher-forcing inputs: row g holds target frame g*r-1, zeros for g = 0.
Tensor shifted_decoder_inputs(const Tensor& targets, std::size_t r);

void check_targets(const Tensor& targets, std::size_t n_mels, std::size_t r);

}  // namespace tts::models::detail
