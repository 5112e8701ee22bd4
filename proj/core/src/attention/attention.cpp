#include "tts/attention/attention.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tts::attention {

using nn::Tape;
using nn::Tensor;
using nn::Var;

AttentionKind parse_attention_kind(const std::string& s) {
  if (s == "location") return AttentionKind::location;
  if (s == "forward") return AttentionKind::forward;
  if (s == "forward_ta") return AttentionKind::forward_ta;
  throw std::invalid_argument("unknown attention kind '" + s + "' (expected location|forward|forward_ta)");
}

std::string to_string(AttentionKind k) {
  switch (k) {
    case AttentionKind::location: return "location";
    case AttentionKind::forward: return "forward";
    case AttentionKind::forward_ta: return "forward_ta";
  }
  return "location";
}

void init_location_attention(nn::Initializer& init, nn::ParamStore& store, const std::string& prefix,
                             const LocationAttentionConfig& cfg, bool transition_agent) {
  init.linear(store, prefix + ".query", cfg.query_dim, cfg.att_dim, false);
  init.linear(store, prefix + ".key", cfg.key_dim, cfg.att_dim, false);
  store.add(prefix + ".b", init.zeros({1, cfg.att_dim}));
  store.add(prefix + ".loc_conv.w", init.glorot({cfg.conv_kernel, 1, cfg.conv_channels}, cfg.conv_kernel, cfg.conv_kernel * cfg.conv_channels));
  init.linear(store, prefix + ".loc", cfg.conv_channels, cfg.att_dim, false);
  init.linear(store, prefix + ".v", cfg.att_dim, 1, false);
  if (transition_agent) init.linear(store, prefix + ".ta", cfg.key_dim + cfg.query_dim + 1, 1, true);
}

AttentionState initial_state(Tape& t, const nn::ParamStore& p, const std::string& prefix, Var keys, AttentionKind kind) {
  if (keys.rows() == 0) throw nn::ShapeError("attention: no encoder positions");
  const std::size_t n = keys.rows();
  AttentionState s;
  Tensor prev = Tensor::matrix(1, n);
  if (kind != AttentionKind::location) prev[0] = 1.0;
  s.prev_align = t.constant(std::move(prev));
  s.cumulative = t.constant(Tensor::matrix(1, n));
  s.processed_keys = nn::matmul(keys, t.param(p, prefix + ".key.w"));
  s.transition = t.constant(Tensor::scalar(0.5));
  return s;
}

Var location_energies(Tape& t, const nn::ParamStore& p, const std::string& prefix, Var query, const AttentionState& state) {
  const std::size_t n = state.processed_keys.rows();
  if (state.cumulative.cols() != n || state.prev_align.cols() != n) {
    throw nn::ShapeError("attention: state rows have " + std::to_string(state.cumulative.cols()) + " positions, keys have " +
                         std::to_string(n));
  }
  Var wq = nn::add(nn::matmul(query, t.param(p, prefix + ".query.w")), t.param(p, prefix + ".b"));
  Var feats = nn::conv1d(nn::transpose(state.cumulative), t.param(p, prefix + ".loc_conv.w"), nn::Padding::same);
  Var uf = nn::matmul(feats, t.param(p, prefix + ".loc.w"));
  Var hidden = nn::tanh(nn::add_row(nn::add(state.processed_keys, uf), wq));
  return nn::transpose(nn::matmul(hidden, t.param(p, prefix + ".v.w")));
}

AttendResult location_sensitive_attend(Tape& t, const nn::ParamStore& p, const std::string& prefix, Var query, Var keys,
                                       const AttentionState& state) {
  Var align = nn::softmax_rows(location_energies(t, p, prefix, query, state));
  AttendResult r;
  r.alignment = align;
  r.context = nn::matmul(align, keys);
  r.state = state;
  r.state.prev_align = align;
  r.state.cumulative = nn::add(state.cumulative, align);
  return r;
}

AttendResult forward_attend(Tape& t, const nn::ParamStore& p, const std::string& prefix, Var query, Var keys,
                            const AttentionState& state, bool transition_agent) {
  Var probs = nn::softmax_rows(location_energies(t, p, prefix, query, state));
  Var align = forward_attention_step(probs, state.prev_align,
                                     transition_agent ? std::optional<Var>(state.transition) : std::nullopt);
  AttendResult r;
  r.alignment = align;
  r.context = nn::matmul(align, keys);
  r.state = state;
  r.state.prev_align = align;
  r.state.cumulative = nn::add(state.cumulative, align);
  if (transition_agent) {
    Var in = nn::concat_cols({r.context, query, state.transition});
    r.state.transition = nn::sigmoid(nn::linear(t, p, prefix + ".ta", in));
  }
  return r;
}

AttendResult attend(Tape& t, const nn::ParamStore& p, const std::string& prefix, AttentionKind kind, Var query, Var keys,
                    const AttentionState& state) {
  switch (kind) {
    case AttentionKind::location: return location_sensitive_attend(t, p, prefix, query, keys, state);
    case AttentionKind::forward: return forward_attend(t, p, prefix, query, keys, state, false);
    case AttentionKind::forward_ta: return forward_attend(t, p, prefix, query, keys, state, true);
  }
  throw std::logic_error("unreachable attention kind");
}

Var forward_attention_step(Var attn_probs, Var prev_align, std::optional<Var> transition) {
  Tape& t = *attn_probs.tape;
  if (attn_probs.rows() != 1 || prev_align.rows() != 1 || attn_probs.cols() != prev_align.cols()) {
    throw nn::ShapeError("forward_attention_step: expected two [1,N] rows of equal length");
  }
  Var shifted = nn::shift_cols_right(prev_align, 1);
  Var moved;
  if (transition) {
    Var u = *transition;
    Var stay = nn::mul_scalar_var(prev_align, nn::add_scalar(nn::scale(u, -1.0), 1.0));
    moved = nn::add(stay, nn::mul_scalar_var(shifted, u));
  } else {
    moved = nn::add(prev_align, shifted);
  }
  Var product = nn::mul(moved, attn_probs);
  double mass = 0.0;
  for (double v : product.value().data()) mass += v;
  if (!(mass > 0.0)) throw std::runtime_error("forward attention: alignment has no mass (dead alignment)");
  (void)t;
  return nn::normalize_rows(nn::add_scalar(product, 1e-10));
}

std::vector<double> forward_attention_step(std::span<const double> attn_probs, std::span<const double> prev_align,
                                           std::optional<double> transition) {
  Tape t(false);
  Var probs = t.constant(Tensor::row({attn_probs.begin(), attn_probs.end()}));
  Var prev = t.constant(Tensor::row({prev_align.begin(), prev_align.end()}));
  std::optional<Var> u;
  if (transition) u = t.constant(Tensor::scalar(*transition));
  return forward_attention_step(probs, prev, u).value().values();
}

void init_multi_head_attention(nn::Initializer& init, nn::ParamStore& store, const std::string& prefix, std::size_t dim) {
  // A key bias only shifts each score row by a constant, which the softmax ignores.
  for (const char* n : {".q", ".k", ".v", ".o"}) init.linear(store, prefix + n, dim, dim, std::string_view(n) != ".k");
}

MultiHeadResult multi_head_attention(Tape& t, const nn::ParamStore& p, const std::string& prefix, Var queries, Var keys,
                                     Var values, std::size_t heads, const std::vector<std::uint8_t>& mask) {
  const std::size_t dim = p.at(prefix + ".q.w").cols();
  if (heads == 0 || dim % heads != 0) {
    throw nn::ShapeError("multi_head_attention: " + std::to_string(heads) + " heads do not divide model dim " +
                         std::to_string(dim));
  }
  const std::size_t tq = queries.rows(), tk = keys.rows();
  if (!mask.empty() && mask.size() != tq * tk) {
    throw nn::ShapeError("multi_head_attention: mask has " + std::to_string(mask.size()) + " entries, expected " +
                         std::to_string(tq) + "x" + std::to_string(tk));
  }
  if (values.rows() != tk) throw nn::ShapeError("multi_head_attention: keys and values differ in length");
  const std::size_t dh = dim / heads;
  Var q = nn::linear(t, p, prefix + ".q", queries);
  Var k = nn::linear(t, p, prefix + ".k", keys, false);
  Var v = nn::linear(t, p, prefix + ".v", values);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  MultiHeadResult r;
  std::vector<Var> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = nn::slice_cols(q, h * dh, dh);
    Var kh = nn::slice_cols(k, h * dh, dh);
    Var vh = nn::slice_cols(v, h * dh, dh);
    Var scores = nn::scale(nn::matmul(qh, nn::transpose(kh)), scale);
    Var a = nn::softmax_rows(scores, mask);
    r.alignments.push_back(a);
    outs.push_back(nn::matmul(a, vh));
  }
  r.output = nn::linear(t, p, prefix + ".o", heads == 1 ? outs.front() : nn::concat_cols(outs));
  return r;
}

Tensor guided_attention_weights(std::size_t frames, std::size_t positions, double sigma) {
  Tensor w = Tensor::matrix(frames, positions);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t n = 0; n < positions; ++n) {
      const double d = static_cast<double>(n) / static_cast<double>(positions) - static_cast<double>(t) / static_cast<double>(frames);
      w(t, n) = 1.0 - std::exp(-d * d / (2.0 * sigma * sigma));
    }
  }
  return w;
}

Var guided_attention_loss(Var align, const GuidedAttentionConfig& cfg) {
  if (!(cfg.sigma > 0.0)) throw std::invalid_argument("guided attention sigma must be positive");
  Tape& t = *align.tape;
  const std::size_t frames = align.rows(), positions = align.cols();
  Var w = t.constant(guided_attention_weights(frames, positions, cfg.sigma));
  return nn::mean(nn::mul(align, w));
}

double guided_attention_loss(const AlignmentMatrix& align, const GuidedAttentionConfig& cfg) {
  Tape t(false);
  return guided_attention_loss(t.constant(align), cfg).item();
}

double diagonality(const AlignmentMatrix& align) {
  const std::size_t frames = align.rows(), positions = align.cols();
  if (frames == 0 || positions == 0) throw std::invalid_argument("diagonality of an empty alignment");
  const auto band = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(positions))));
  const double denom = static_cast<double>(std::max<std::size_t>(1, frames - 1));
  double total = 0.0;
  for (std::size_t t = 0; t < frames; ++t) {
    const auto center = static_cast<std::ptrdiff_t>(std::llround(static_cast<double>(t) * static_cast<double>(positions - 1) / denom));
    const auto lo = std::max<std::ptrdiff_t>(0, center - static_cast<std::ptrdiff_t>(band));
    const auto hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(positions) - 1, center + static_cast<std::ptrdiff_t>(band));
    double best = 0.0;
    for (auto n = lo; n <= hi; ++n) best = std::max(best, align(t, static_cast<std::size_t>(n)));
    total += best;
  }
  return total / static_cast<double>(frames);
}

void check_alignment(const AlignmentMatrix& align, double tol) {
  for (std::size_t t = 0; t < align.rows(); ++t) {
    double s = 0.0;
    for (std::size_t n = 0; n < align.cols(); ++n) {
      if (align(t, n) < 0.0 || !std::isfinite(align(t, n))) {
        throw std::runtime_error("alignment row " + std::to_string(t) + " has a negative or non-finite entry");
      }
      s += align(t, n);
    }
    if (std::abs(s - 1.0) > tol) throw std::runtime_error("alignment row " + std::to_string(t) + " sums to " + std::to_string(s));
  }
}

}  // namespace tts::attention
