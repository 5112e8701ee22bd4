#include "tts/nn/layers.hpp"

#include <cmath>

namespace tts::nn {

Tensor Initializer::glorot(Shape shape, std::size_t fan_in, std::size_t fan_out) {
  Tensor t(std::move(shape));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : t.values()) v = dist(rng_);
  return t;
}

void Initializer::linear(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out, bool bias) {
  store.add(prefix + ".w", glorot({in, out}, in, out));
  if (bias) store.add(prefix + ".b", zeros({1, out}));
}

void Initializer::lstm(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t hidden) {
  store.add(prefix + ".w_ih", glorot({in, 4 * hidden}, in, hidden));
  store.add(prefix + ".w_hh", glorot({hidden, 4 * hidden}, hidden, hidden));
  store.add(prefix + ".b", zeros({1, 4 * hidden}));
}

void Initializer::conv1d(ParamStore& store, const std::string& prefix, std::size_t kernel, std::size_t in, std::size_t out) {
  store.add(prefix + ".w", glorot({kernel, in, out}, kernel * in, kernel * out));
  store.add(prefix + ".b", zeros({1, out}));
}

void Initializer::layer_norm(ParamStore& store, const std::string& prefix, std::size_t dim) {
  store.add(prefix + ".g", constant({1, dim}, 1.0));
  store.add(prefix + ".b", zeros({1, dim}));
}

void Initializer::embedding(ParamStore& store, const std::string& name, std::size_t vocab, std::size_t dim) {
  store.add(name, glorot({vocab, dim}, vocab, dim));
}

Var linear(Tape& t, const ParamStore& p, const std::string& prefix, Var x, bool bias) {
  Var y = matmul(x, t.param(p, prefix + ".w"));
  return bias ? add_row(y, t.param(p, prefix + ".b")) : y;
}

Var conv1d_layer(Tape& t, const ParamStore& p, const std::string& prefix, Var x, Padding padding) {
  return conv1d(x, t.param(p, prefix + ".w"), t.param(p, prefix + ".b"), padding);
}

Var layer_norm(Tape& t, const ParamStore& p, const std::string& prefix, Var x) {
  return layer_norm_rows(x, t.param(p, prefix + ".g"), t.param(p, prefix + ".b"));
}

LstmState lstm_step(Tape& t, const ParamStore& p, const std::string& prefix, Var x, LstmState state) {
  Var w_ih = t.param(p, prefix + ".w_ih");
  Var w_hh = t.param(p, prefix + ".w_hh");
  Var b = t.param(p, prefix + ".b");
  const std::size_t hidden = w_hh.rows();
  if (w_ih.rows() != x.cols()) {
    throw ShapeError("lstm_step(" + prefix + "): input width " + std::to_string(x.cols()) + ", expected " +
                     std::to_string(w_ih.rows()));
  }
  if (state.h.cols() != hidden || state.c.cols() != hidden || x.rows() != 1) {
    throw ShapeError("lstm_step(" + prefix + "): state must be [1," + std::to_string(hidden) + "]");
  }
  Var gates = add_row(add(matmul(x, w_ih), matmul(state.h, w_hh)), b);
  Var i = sigmoid(slice_cols(gates, 0, hidden));
  Var f = sigmoid(slice_cols(gates, hidden, hidden));
  Var g = tanh(slice_cols(gates, 2 * hidden, hidden));
  Var o = sigmoid(slice_cols(gates, 3 * hidden, hidden));
  Var c = add(mul(f, state.c), mul(i, g));
  Var h = mul(o, tanh(c));
  return {h, c};
}

Var lstm_sequence(Tape& t, const ParamStore& p, const std::string& prefix, Var xs, bool reverse) {
  const std::size_t hidden = p.at(prefix + ".w_hh").rows();
  const std::size_t steps = xs.rows();
  LstmState s{t.constant(Tensor::matrix(1, hidden)), t.constant(Tensor::matrix(1, hidden))};
  std::vector<Var> outs(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t idx = reverse ? steps - 1 - k : k;
    s = lstm_step(t, p, prefix, slice_rows(xs, idx, 1), s);
    outs[idx] = s.h;
  }
  return concat_rows(outs);
}

Tensor sinusoid_positions(std::size_t length, std::size_t dim) {
  Tensor pe = Tensor::matrix(length, dim);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      const double angle = static_cast<double>(pos) * rate;
      pe(pos, i) = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

}  // namespace tts::nn
