#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>

#include "tts/nn/autograd.hpp"
#include "tts/nn/ops.hpp"

namespace tts::nn {

// Parameter factories. Weights use Glorot-uniform limits sqrt(6/(fan_in+fan_out));
// biases start at zero. All draws come from the caller's generator, so a fixed seed
// yields identical stores.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  Tensor glorot(Shape shape, std::size_t fan_in, std::size_t fan_out);
  Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  Tensor constant(Shape shape, double v) { return Tensor(std::move(shape), v); }

  // Registers "<prefix>.w" [in,out] and, when `bias`, "<prefix>.b" [1,out].
  void linear(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out, bool bias = true);
  // "<prefix>.w_ih" [in,4h], "<prefix>.w_hh" [h,4h], "<prefix>.b" [1,4h]; gate order i,f,g,o.
  void lstm(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t hidden);
  // "<prefix>.w" [K,C_in,C_out], "<prefix>.b" [1,C_out].
  void conv1d(ParamStore& store, const std::string& prefix, std::size_t kernel, std::size_t in, std::size_t out);
  // "<prefix>.g" ones, "<prefix>.b" zeros.
  void layer_norm(ParamStore& store, const std::string& prefix, std::size_t dim);
  void embedding(ParamStore& store, const std::string& name, std::size_t vocab, std::size_t dim);

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

Var linear(Tape& t, const ParamStore& p, const std::string& prefix, Var x, bool bias = true);
Var conv1d_layer(Tape& t, const ParamStore& p, const std::string& prefix, Var x, Padding padding = Padding::same);
Var layer_norm(Tape& t, const ParamStore& p, const std::string& prefix, Var x);

struct LstmState {
  Var h;
  Var c;
};

// One LSTM step on row vectors x [1,in], h [1,hid], c [1,hid]:
//   [i f g o] = x W_ih + h W_hh + b
//   c' = sigmoid(f) * c + sigmoid(i) * tanh(g);  h' = sigmoid(o) * tanh(c')
LstmState lstm_step(Tape& t, const ParamStore& p, const std::string& prefix, Var x, LstmState state);

// Runs the cell over the rows of xs; returns the stacked hidden states [T,hid].
Var lstm_sequence(Tape& t, const ParamStore& p, const std::string& prefix, Var xs, bool reverse = false);

// Sinusoidal positional table [length, dim].
Tensor sinusoid_positions(std::size_t length, std::size_t dim);

}  // namespace tts::nn
