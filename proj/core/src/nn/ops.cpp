#include "tts/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace tts::nn {
namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

std::string dims(const Tensor& t) { return std::to_string(t.rows()) + "x" + std::to_string(t.cols()); }

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          std::string(op) + ": operand shapes differ (" + dims(a) + " vs " + dims(b) + ")");
}

Shape mat_shape(std::size_t r, std::size_t c) { return {r, c}; }

template <typename F, typename D>
Var unary(Var a, F f, D dfdx_from_xy) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return t.push(std::move(y), t.needs_grad(a), [a, out_id = t.node_count(), dfdx_from_xy](Tape& tp, std::span<const double> g) {
    auto ga = tp.grad_buffer(a);
    const Tensor& xv = tp.value(a);
    const Tensor& yv = tp.value(Var{&tp, static_cast<std::uint32_t>(out_id)});
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * dfdx_from_xy(xv[i], yv[i]);
  });
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double sigm(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  require(B.rows() == k, "matmul: inner dimensions differ (" + dims(A) + " x " + dims(B) + ")");
  Tensor C = Tensor::matrix(m, n);
  const double* pa = A.data().data();
  const double* pb = B.data().data();
  double* pc = C.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * n;
      double* crow = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return t.push(std::move(C), t.any_needs_grad({a, b}), [a, b, m, k, n](Tape& tp, std::span<const double> g) {
    const double* pa = tp.value(a).data().data();
    const double* pb = tp.value(b).data().data();
    if (auto ga = tp.grad_buffer(a); !ga.empty()) {
      // dA = G * B^T
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = pb + p * n;
          const double* grow = g.data() + i * n;
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          ga[i * k + p] += s;
        }
      }
    }
    if (auto gb = tp.grad_buffer(b); !gb.empty()) {
      // dB = A^T * G
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double av = pa[i * k + p];
          if (av == 0.0) continue;
          const double* grow = g.data() + i * n;
          double* gbrow = gb.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
        }
      }
    }
  });
}

Var transpose(Var a) {
  Tape& t = *a.tape;
  const Tensor& A = a.value();
  const std::size_t m = A.rows(), n = A.cols();
  Tensor T = Tensor::matrix(n, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) T[j * m + i] = A[i * n + j];
  return t.push(std::move(T), t.needs_grad(a), [a, m, n](Tape& tp, std::span<const double> g) {
    auto ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
  });
}

Var reshape(Var a, Shape shape) {
  Tape& t = *a.tape;
  Tensor r = a.value().reshaped(std::move(shape));
  return t.push(std::move(r), t.needs_grad(a), [a](Tape& tp, std::span<const double> g) {
    auto ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
  });
}

Var add(Var a, Var b) {
  Tape& t = *a.tape;
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_same(A, B, "add");
  Tensor C(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) C[i] = A[i] + B[i];
  return t.push(std::move(C), t.any_needs_grad({a, b}), [a, b](Tape& tp, std::span<const double> g) {
    for (Var v : {a, b}) {
      auto gv = tp.grad_buffer(v);
      for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  Tape& t = *a.tape;
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_same(A, B, "sub");
  Tensor C(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) C[i] = A[i] - B[i];
  return t.push(std::move(C), t.any_needs_grad({a, b}), [a, b](Tape& tp, std::span<const double> g) {
    auto ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    auto gb = tp.grad_buffer(b);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
  });
}

Var mul(Var a, Var b) {
  Tape& t = *a.tape;
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_same(A, B, "mul");
  Tensor C(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) C[i] = A[i] * B[i];
  return t.push(std::move(C), t.any_needs_grad({a, b}), [a, b](Tape& tp, std::span<const double> g) {
    const Tensor& av = tp.value(a);
    const Tensor& bv = tp.value(b);
    auto ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
    auto gb = tp.grad_buffer(b);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
  });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape;
  Tensor C = a.value();
  for (auto& v : C.values()) v *= s;
  C.drop_grad();
  return t.push(std::move(C), t.needs_grad(a), [a, s](Tape& tp, std::span<const double> g) {
    auto ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * s;
  });
}

Var add_scalar(Var a, double s) {
  Tape& t = *a.tape;
  Tensor C = a.value();
  for (auto& v : C.values()) v += s;
  C.drop_grad();
  return t.push(std::move(C), t.needs_grad(a), [a](Tape& tp, std::span<const double> g) {
    auto ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
  });
}

Var add_row(Var a, Var row) {
  Tape& t = *a.tape;
  const Tensor& A = a.value();
  const Tensor& R = row.value();
  const std::size_t m = A.rows(), n = A.cols();
  require(R.size() == n, "add_row: row length " + std::to_string(R.size()) + " vs " + std::to_string(n) + " columns");
  Tensor C(A.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) C[i * n + j] = A[i * n + j] + R[j];
  return t.push(std::move(C), t.any_needs_grad({a, row}), [a, row, m, n](Tape& tp, std::span<const double> g) {
    auto ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    if (auto gr = tp.grad_buffer(row); !gr.empty()) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gr[j] += g[i * n + j];
    }
  });
}

Var mul_col(Var a, Var col) {
  Tape& t = *a.tape;
  const Tensor& A = a.value();
  const Tensor& Cv = col.value();
  const std::size_t m = A.rows(), n = A.cols();
  require(Cv.size() == m, "mul_col: column length differs from row count");
  Tensor C(A.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) C[i * n + j] = A[i * n + j] * Cv[i];
  return t.push(std::move(C), t.any_needs_grad({a, col}), [a, col, m, n](Tape& tp, std::span<const double> g) {
    const Tensor& av = tp.value(a);
    const Tensor& cv = tp.value(col);
    if (auto ga = tp.grad_buffer(a); !ga.empty()) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i * n + j] * cv[i];
    }
    if (auto gc = tp.grad_buffer(col); !gc.empty()) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gc[i] += g[i * n + j] * av[i * n + j];
    }
  });
}

Var mul_scalar_var(Var a, Var s) {
  Tape& t = *a.tape;
  require(s.value().size() == 1, "mul_scalar_var: scale must hold one element");
  const double sv = s.value()[0];
  Tensor C = a.value();
  C.drop_grad();
  for (auto& v : C.values()) v *= sv;
  return t.push(std::move(C), t.any_needs_grad({a, s}), [a, s](Tape& tp, std::span<const double> g) {
    const Tensor& av = tp.value(a);
    const double sv = tp.value(s)[0];
    auto ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * sv;
    if (auto gs = tp.grad_buffer(s); !gs.empty()) {
      double acc = 0.0;
      for (std::size_t i = 0; i < av.size(); ++i) acc += g[i] * av[i];
      gs[0] += acc;
    }
  });
}

Var sigmoid(Var a) {
  return unary(a, sigm, [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var abs(Var a) {
  return unary(a, [](double x) { return std::abs(x); },
               [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sum(Var a) {
  Tape& t = *a.tape;
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return t.push(Tensor::scalar(s), t.needs_grad(a), [a](Tape& tp, std::span<const double> g) {
    auto ga = tp.grad_buffer(a);
    for (auto& v : ga) v += g[0];
  });
}

Var mean(Var a) {
  const auto n = a.value().size();
  require(n > 0, "mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var sum_rows(Var a) {
  Tape& t = *a.tape;
  const Tensor& A = a.value();
  const std::size_t m = A.rows(), n = A.cols();
  Tensor C = Tensor::matrix(1, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) C[j] += A[i * n + j];
  return t.push(std::move(C), t.needs_grad(a), [a, m, n](Tape& tp, std::span<const double> g) {
    auto ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j];
  });
}

Var softmax_rows(Var a, const std::vector<std::uint8_t>& mask) {
  Tape& t = *a.tape;
  const Tensor& A = a.value();
  const std::size_t m = A.rows(), n = A.cols();
  require(mask.empty() || mask.size() == A.size(),
          "softmax_rows: mask has " + std::to_string(mask.size()) + " entries for " + dims(A));
  Tensor Y(mat_shape(m, n));
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (mask.empty() || mask[i * n + j]) mx = std::max(mx, A[i * n + j]);
    }
    require(std::isfinite(mx), "softmax_rows: row " + std::to_string(i) + " has no admitted entries");
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = (mask.empty() || mask[i * n + j]) ? std::exp(A[i * n + j] - mx) : 0.0;
      Y[i * n + j] = e;
      s += e;
    }
    for (std::size_t j = 0; j < n; ++j) Y[i * n + j] /= s;
  }
  const auto out_id = static_cast<std::uint32_t>(t.node_count());
  return t.push(std::move(Y), t.needs_grad(a), [a, out_id, m, n](Tape& tp, std::span<const double> g) {
    const Tensor& y = tp.value(Var{&tp, out_id});
    auto ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
    }
  });
}

Var normalize_rows(Var a) {
  Tape& t = *a.tape;
  const Tensor& A = a.value();
  const std::size_t m = A.rows(), n = A.cols();
  Tensor Y(mat_shape(m, n));
  std::vector<double> sums(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) sums[i] += A[i * n + j];
    require(sums[i] != 0.0, "normalize_rows: row " + std::to_string(i) + " sums to zero");
    for (std::size_t j = 0; j < n; ++j) Y[i * n + j] = A[i * n + j] / sums[i];
  }
  const auto out_id = static_cast<std::uint32_t>(t.node_count());
  return t.push(std::move(Y), t.needs_grad(a), [a, out_id, m, n, sums](Tape& tp, std::span<const double> g) {
    const Tensor& y = tp.value(Var{&tp, out_id});
    auto ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += (g[i * n + j] - dot) / sums[i];
    }
  });
}

Var layer_norm_rows(Var x, Var gain, Var bias, double eps) {
  Tape& t = *x.tape;
  const Tensor& X = x.value();
  const std::size_t m = X.rows(), n = X.cols();
  require(gain.value().size() == n && bias.value().size() == n, "layer_norm_rows: gain/bias length mismatch");
  Tensor Y(mat_shape(m, n));
  std::vector<double> xhat(m * n), inv_std(m);
  const Tensor& G = gain.value();
  const Tensor& B = bias.value();
  for (std::size_t i = 0; i < m; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += X[i * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (X[i * n + j] - mu) * (X[i * n + j] - mu);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (X[i * n + j] - mu) * inv_std[i];
      Y[i * n + j] = xhat[i * n + j] * G[j] + B[j];
    }
  }
  return t.push(std::move(Y), t.any_needs_grad({x, gain, bias}),
                [x, gain, bias, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp, std::span<const double> g) {
                  const Tensor& G = tp.value(gain);
                  if (auto gg = tp.grad_buffer(gain); !gg.empty()) {
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * xhat[i * n + j];
                  }
                  if (auto gb = tp.grad_buffer(bias); !gb.empty()) {
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                  }
                  if (auto gx = tp.grad_buffer(x); !gx.empty()) {
                    const double inv_n = 1.0 / static_cast<double>(n);
                    for (std::size_t i = 0; i < m; ++i) {
                      double mdx = 0.0, mdxx = 0.0;
                      for (std::size_t j = 0; j < n; ++j) {
                        const double dxh = g[i * n + j] * G[j];
                        mdx += dxh;
                        mdxx += dxh * xhat[i * n + j];
                      }
                      mdx *= inv_n;
                      mdxx *= inv_n;
                      for (std::size_t j = 0; j < n; ++j) {
                        const double dxh = g[i * n + j] * G[j];
                        gx[i * n + j] += inv_std[i] * (dxh - mdx - xhat[i * n + j] * mdxx);
                      }
                    }
                  }
                });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  Tape& t = *parts.front().tape;
  const std::size_t m = parts.front().rows();
  std::size_t n = 0;
  std::vector<std::size_t> widths;
  bool needs = false;
  for (auto p : parts) {
    require(p.rows() == m, "concat_cols: row counts differ");
    widths.push_back(p.cols());
    n += p.cols();
    needs = needs || t.needs_grad(p);
  }
  Tensor C = Tensor::matrix(m, n);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& P = parts[k].value();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) C[i * n + off + j] = P[i * widths[k] + j];
    off += widths[k];
  }
  return t.push(std::move(C), needs && t.recording(), [parts, widths, m, n](Tape& tp, std::span<const double> g) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (auto gp = tp.grad_buffer(parts[k]); !gp.empty()) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) gp[i * widths[k] + j] += g[i * n + off + j];
      }
      off += widths[k];
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  Tape& t = *parts.front().tape;
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  bool needs = false;
  for (auto p : parts) {
    require(p.cols() == n, "concat_rows: column counts differ");
    m += p.rows();
    needs = needs || t.needs_grad(p);
  }
  std::vector<double> data;
  data.reserve(m * n);
  for (auto p : parts) {
    const auto& v = p.value().values();
    data.insert(data.end(), v.begin(), v.end());
  }
  return t.push(Tensor(mat_shape(m, n), std::move(data)), needs && t.recording(), [parts](Tape& tp, std::span<const double> g) {
    std::size_t off = 0;
    for (auto p : parts) {
      const auto len = tp.value(p).size();
      if (auto gp = tp.grad_buffer(p); !gp.empty()) {
        for (std::size_t i = 0; i < len; ++i) gp[i] += g[off + i];
      }
      off += len;
    }
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  Tape& t = *a.tape;
  const Tensor& A = a.value();
  const std::size_t n = A.cols();
  require(begin + count <= A.rows(), "slice_rows: range exceeds " + std::to_string(A.rows()) + " rows");
  std::vector<double> data(A.values().begin() + static_cast<std::ptrdiff_t>(begin * n),
                           A.values().begin() + static_cast<std::ptrdiff_t>((begin + count) * n));
  return t.push(Tensor(mat_shape(count, n), std::move(data)), t.needs_grad(a), [a, begin, n](Tape& tp, std::span<const double> g) {
    auto ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[begin * n + i] += g[i];
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  Tape& t = *a.tape;
  const Tensor& A = a.value();
  const std::size_t m = A.rows(), n = A.cols();
  require(begin + count <= n, "slice_cols: range exceeds " + std::to_string(n) + " columns");
  Tensor C = Tensor::matrix(m, count);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) C[i * count + j] = A[i * n + begin + j];
  return t.push(std::move(C), t.needs_grad(a), [a, begin, count, m, n](Tape& tp, std::span<const double> g) {
    auto ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < count; ++j) ga[i * n + begin + j] += g[i * count + j];
  });
}

Var gather_rows(Var table, const std::vector<std::size_t>& indices) {
  Tape& t = *table.tape;
  const Tensor& A = table.value();
  const std::size_t rows = A.rows(), n = A.cols();
  Tensor C = Tensor::matrix(indices.size(), n);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] < rows, "gather_rows: index " + std::to_string(indices[i]) + " out of range " + std::to_string(rows));
    std::copy_n(A.data().data() + indices[i] * n, n, C.data().data() + i * n);
  }
  return t.push(std::move(C), t.needs_grad(table), [table, indices, n](Tape& tp, std::span<const double> g) {
    auto ga = tp.grad_buffer(table);
    for (std::size_t i = 0; i < indices.size(); ++i)
      for (std::size_t j = 0; j < n; ++j) ga[indices[i] * n + j] += g[i * n + j];
  });
}

Var shift_cols_right(Var a, std::size_t shift) {
  Tape& t = *a.tape;
  const Tensor& A = a.value();
  const std::size_t m = A.rows(), n = A.cols();
  Tensor C = Tensor::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = shift; j < n; ++j) C[i * n + j] = A[i * n + j - shift];
  return t.push(std::move(C), t.needs_grad(a), [a, shift, m, n](Tape& tp, std::span<const double> g) {
    auto ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = shift; j < n; ++j) ga[i * n + j - shift] += g[i * n + j];
  });
}

Var im2col(Var x, std::size_t kernel_width, Padding padding) {
  Tape& t = *x.tape;
  const Tensor& X = x.value();
  const std::size_t frames = X.rows(), ch = X.cols();
  require(kernel_width >= 1, "im2col: kernel width must be positive");
  std::ptrdiff_t offset = 0;
  std::size_t out_frames = 0;
  if (padding == Padding::same) {
    require(kernel_width % 2 == 1, "conv1d: 'same' padding requires an odd kernel width, got " + std::to_string(kernel_width));
    offset = -static_cast<std::ptrdiff_t>(kernel_width / 2);
    out_frames = frames;
  } else {
    require(frames >= kernel_width, "conv1d: 'valid' padding needs at least kernel-width frames");
    out_frames = frames - kernel_width + 1;
  }
  const std::size_t width = kernel_width * ch;
  Tensor C = Tensor::matrix(out_frames, width);
  for (std::size_t tt = 0; tt < out_frames; ++tt) {
    for (std::size_t k = 0; k < kernel_width; ++k) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(tt + k) + offset;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(frames)) continue;
      std::copy_n(X.data().data() + static_cast<std::size_t>(src) * ch, ch, C.data().data() + tt * width + k * ch);
    }
  }
  return t.push(std::move(C), t.needs_grad(x), [x, kernel_width, offset, out_frames, frames, ch, width](Tape& tp, std::span<const double> g) {
    auto gx = tp.grad_buffer(x);
    for (std::size_t tt = 0; tt < out_frames; ++tt) {
      for (std::size_t k = 0; k < kernel_width; ++k) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(tt + k) + offset;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(frames)) continue;
        for (std::size_t c = 0; c < ch; ++c) gx[static_cast<std::size_t>(src) * ch + c] += g[tt * width + k * ch + c];
      }
    }
  });
}

Var conv1d(Var x, Var kernel, Padding padding) {
  const Tensor& K = kernel.value();
  require(K.rank() == 3, "conv1d: kernel must have shape [K, C_in, C_out]");
  const std::size_t kw = K.shape()[0], cin = K.shape()[1], cout = K.shape()[2];
  require(x.cols() == cin, "conv1d: signal has " + std::to_string(x.cols()) + " channels, kernel expects " + std::to_string(cin));
  Var cols = im2col(x, kw, padding);
  return matmul(cols, reshape(kernel, {kw * cin, cout}));
}

Var conv1d(Var x, Var kernel, Var bias, Padding padding) { return add_row(conv1d(x, kernel, padding), bias); }

Var stop_gradient(Var a) { return a.tape->constant(a.value()); }

Var dropout(Var a, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return a;
  require(p < 1.0, "dropout probability must be < 1");
  Tensor mask(a.value().shape());
  std::bernoulli_distribution keep(1.0 - p);
  const double s = 1.0 / (1.0 - p);
  for (auto& v : mask.values()) v = keep(rng) ? s : 0.0;
  return mul(a, a.tape->constant(std::move(mask)));
}

Var bce_with_logits_sum(Var logits, const std::vector<double>& targets, double pos_weight,
                        const std::vector<std::uint8_t>& mask) {
  Tape& t = *logits.tape;
  const Tensor& X = logits.value();
  require(targets.size() == X.size(), "bce: target length differs from logits");
  require(mask.empty() || mask.size() == X.size(), "bce: mask length differs from logits");
  double s = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    const double y = targets[i];
    s += pos_weight * y * softplus(-X[i]) + (1.0 - y) * softplus(X[i]);
  }
  return t.push(Tensor::scalar(s), t.needs_grad(logits), [logits, targets, pos_weight, mask](Tape& tp, std::span<const double> g) {
    const Tensor& X = tp.value(logits);
    auto gl = tp.grad_buffer(logits);
    for (std::size_t i = 0; i < X.size(); ++i) {
      if (!mask.empty() && !mask[i]) continue;
      const double y = targets[i];
      const double p = sigm(X[i]);
      gl[i] += g[0] * (pos_weight * y * (p - 1.0) + (1.0 - y) * p);
    }
  });
}

namespace {

template <bool Squared>
Var masked_diff_sum(Var a, Var b, const std::vector<std::uint8_t>& row_mask) {
  Tape& t = *a.tape;
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_same(A, B, Squared ? "masked_sq_sum" : "masked_abs_sum");
  const std::size_t m = A.rows(), n = A.cols();
  require(row_mask.empty() || row_mask.size() == m, "masked loss: row mask length differs from frame count");
  double s = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (!row_mask.empty() && !row_mask[i]) continue;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = A[i * n + j] - B[i * n + j];
      s += Squared ? d * d : std::abs(d);
    }
  }
  return t.push(Tensor::scalar(s), t.any_needs_grad({a, b}), [a, b, row_mask, m, n](Tape& tp, std::span<const double> g) {
    const Tensor& A = tp.value(a);
    const Tensor& B = tp.value(b);
    auto ga = tp.grad_buffer(a);
    auto gb = tp.grad_buffer(b);
    for (std::size_t i = 0; i < m; ++i) {
      if (!row_mask.empty() && !row_mask[i]) continue;
      for (std::size_t j = 0; j < n; ++j) {
        const double d = A[i * n + j] - B[i * n + j];
        const double dd = Squared ? 2.0 * d : (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
        if (!ga.empty()) ga[i * n + j] += g[0] * dd;
        if (!gb.empty()) gb[i * n + j] -= g[0] * dd;
      }
    }
  });
}

}  // namespace

Var masked_abs_sum(Var a, Var b, const std::vector<std::uint8_t>& row_mask) {
  return masked_diff_sum<false>(a, b, row_mask);
}

Var masked_sq_sum(Var a, Var b, const std::vector<std::uint8_t>& row_mask) {
  return masked_diff_sum<true>(a, b, row_mask);
}

}  // namespace tts::nn
