#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tts/nn/autograd.hpp"
#include "tts/nn/layers.hpp"

namespace tts::attention {

// Decoder-frames x encoder-positions; rows are probability distributions.
using AlignmentMatrix = nn::Tensor;

enum class AttentionKind { location, forward, forward_ta };
AttentionKind parse_attention_kind(const std::string& s);
std::string to_string(AttentionKind k);

struct LocationAttentionConfig {
  std::size_t query_dim = 0;
  std::size_t key_dim = 0;
  std::size_t att_dim = 128;
  std::size_t conv_channels = 32;
  std::size_t conv_kernel = 31;
};

// Registers under `prefix`: query.w [dq,A], key.w [dk,A], b [1,A], loc_conv.w [K,1,C],
// loc.w [C,A], v.w [A,1]; with the transition agent also ta.w [dk+dq+1,1], ta.b [1,1].
void init_location_attention(nn::Initializer& init, nn::ParamStore& store, const std::string& prefix,
                             const LocationAttentionConfig& cfg, bool transition_agent);

struct AttentionState {
  nn::Var prev_align;      // [1,N]
  nn::Var cumulative;      // [1,N], sum of emitted rows
  nn::Var processed_keys;  // [N,A], keys projected once per utterance
  nn::Var transition;      // [1,1] transition probability (forward_ta only)
};

// Location-sensitive models start from an all-zero history; forward attention starts
// one-hot at position 0 with transition 0.5.
AttentionState initial_state(nn::Tape& t, const nn::ParamStore& p, const std::string& prefix, nn::Var keys,
                             AttentionKind kind);

struct AttendResult {
  nn::Var context;    // [1,dk]
  nn::Var alignment;  // [1,N]
  AttentionState state;
};

// e_n = v^T tanh(W q + V k_n + U f_n + b), f = conv1d over the cumulative alignment.
nn::Var location_energies(nn::Tape& t, const nn::ParamStore& p, const std::string& prefix, nn::Var query,
                          const AttentionState& state);

// alignment = softmax(e); context = alignment * keys; cumulative += alignment.
AttendResult location_sensitive_attend(nn::Tape& t, const nn::ParamStore& p, const std::string& prefix, nn::Var query,
                                       nn::Var keys, const AttentionState& state);

// Forward attention on top of location-sensitive energies. With the transition agent,
// the next transition probability is sigmoid(affine([context, query, previous u])).
AttendResult forward_attend(nn::Tape& t, const nn::ParamStore& p, const std::string& prefix, nn::Var query,
                            nn::Var keys, const AttentionState& state, bool transition_agent);

AttendResult attend(nn::Tape& t, const nn::ParamStore& p, const std::string& prefix, AttentionKind kind,
                    nn::Var query, nn::Var keys, const AttentionState& state);

// Differentiable forward-attention recurrence on [1,N] rows:
//   no agent:  a_t(n) ~ (a_{t-1}(n) + a_{t-1}(n-1)) * p_t(n)
//   agent u:   a_t(n) ~ ((1-u) a_{t-1}(n) + u a_{t-1}(n-1)) * p_t(n)
// with a_{t-1}(-1) = 0 and 1e-10 added to every entry before renormalizing.
// Throws when the product carries no mass.
nn::Var forward_attention_step(nn::Var attn_probs, nn::Var prev_align, std::optional<nn::Var> transition);
std::vector<double> forward_attention_step(std::span<const double> attn_probs, std::span<const double> prev_align,
                                           std::optional<double> transition);

// Registers q/k/v/o projections ("<prefix>.{q,k,v,o}.w", each [d,d]) with biases on q, v and o.
void init_multi_head_attention(nn::Initializer& init, nn::ParamStore& store, const std::string& prefix, std::size_t dim);

struct MultiHeadResult {
  nn::Var output;                   // [Tq,d]
  std::vector<nn::Var> alignments;  // per head, [Tq,Tk]
};

// Scaled dot-product attention per head (scale 1/sqrt(d_head)); mask entries of 0 are
// excluded before the softmax. mask, when given, is Tq x Tk row-major.
MultiHeadResult multi_head_attention(nn::Tape& t, const nn::ParamStore& p, const std::string& prefix, nn::Var queries,
                                     nn::Var keys, nn::Var values, std::size_t heads,
                                     const std::vector<std::uint8_t>& mask = {});

struct GuidedAttentionConfig {
  double sigma = 0.2;
  double weight = 1.0;
};

// W[t,n] = 1 - exp(-(n/N - t/T)^2 / (2 g^2)), 0-based indices.
nn::Tensor guided_attention_weights(std::size_t frames, std::size_t positions, double sigma);
// mean over all (t,n) of align[t,n] * W[t,n]
nn::Var guided_attention_loss(nn::Var align, const GuidedAttentionConfig& cfg);
double guided_attention_loss(const AlignmentMatrix& align, const GuidedAttentionConfig& cfg);

// Mean over frames of the largest weight within +-max(1, ceil(0.1 N)) positions of
// round(t (N-1) / max(1, T-1)).
double diagonality(const AlignmentMatrix& align);

// Throws unless every row is nonnegative and sums to 1 within `tol`.
void check_alignment(const AlignmentMatrix& align, double tol = 1e-5);

}  // namespace tts::attention
