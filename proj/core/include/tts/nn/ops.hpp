#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "tts/nn/autograd.hpp"

namespace tts::nn {

// All ops treat their inputs as row-major matrices (rank-1 tensors are single rows)
// and throw ShapeError on mismatched operands.

Var matmul(Var a, Var b);
Var transpose(Var a);
Var reshape(Var a, Shape shape);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
// a[m,n] + row[1,n] broadcast over rows.
Var add_row(Var a, Var row);
// a[m,n] * col[m,1] broadcast over columns.
Var mul_col(Var a, Var col);
// a[m,n] * s[1,1].
Var mul_scalar_var(Var a, Var s);

Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);
Var abs(Var a);
Var square(Var a);

Var sum(Var a);
Var mean(Var a);
Var sum_rows(Var a);  // [m,n] -> [1,n]

// Row-wise softmax. `mask`, when non-empty, has one entry per element; zero entries are
// treated as -inf logits. A row with no admitted entries is an error.
Var softmax_rows(Var a, const std::vector<std::uint8_t>& mask = {});
// Divides each row by its sum.
Var normalize_rows(Var a);
Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-5);

Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
// out[i,:] = table[indices[i],:]; used for embeddings and length regulation.
Var gather_rows(Var table, const std::vector<std::size_t>& indices);
// out[:,n] = a[:,n-shift] with zeros shifted in from the left.
Var shift_cols_right(Var a, std::size_t shift = 1);

enum class Padding { same, valid };

// Sliding-window unfold: [T,C] -> [T',K*C]; row t holds frames t-K/2..t+K/2 (same) or t..t+K-1 (valid).
Var im2col(Var x, std::size_t kernel_width, Padding padding);
// Cross-correlation. kernel shape [K, C_in, C_out], bias [1, C_out] (optional).
Var conv1d(Var x, Var kernel, Var bias, Padding padding);
Var conv1d(Var x, Var kernel, Padding padding);

Var stop_gradient(Var a);
// Inverted dropout with a Bernoulli mask drawn from `rng`; identity when p == 0.
Var dropout(Var a, double p, std::mt19937_64& rng);

// Sum over admitted entries of the weighted binary cross-entropy with logits:
// -(w*y*log(sigmoid(x)) + (1-y)*log(1-sigmoid(x))). Returns [1,1].
Var bce_with_logits_sum(Var logits, const std::vector<double>& targets, double pos_weight,
                        const std::vector<std::uint8_t>& mask);

// Sum over entries of |a-b| (or (a-b)^2) restricted to rows where row_mask is set.
Var masked_abs_sum(Var a, Var b, const std::vector<std::uint8_t>& row_mask);
Var masked_sq_sum(Var a, Var b, const std::vector<std::uint8_t>& row_mask);

}  // namespace tts::nn
