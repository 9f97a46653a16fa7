#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "usdaf/core/tensor.hpp"

namespace usdaf::ad {

/// Probability clamp applied before every log in the BCE loss.
inline constexpr double kProbEps = 1e-7;

namespace detail {

// C[M,N] (+)= A[M,K] * B[K,N]
inline void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B,
                    double* C) {
  for (std::size_t m = 0; m < M; ++m) {
    double* c = C + m * N;
    for (std::size_t k = 0; k < K; ++k) {
      const double a = A[m * K + k];
      if (a == 0.0) continue;
      const double* b = B + k * N;
      for (std::size_t n = 0; n < N; ++n) c[n] += a * b[n];
    }
  }
}

// C[M,N] += A[M,K] * B[N,K]^T
inline void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B,
                    double* C) {
  for (std::size_t m = 0; m < M; ++m) {
    const double* a = A + m * K;
    for (std::size_t n = 0; n < N; ++n) {
      const double* b = B + n * K;
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      std::size_t k = 0;
      for (; k + 4 <= K; k += 4) {
        s0 += a[k] * b[k];
        s1 += a[k + 1] * b[k + 1];
        s2 += a[k + 2] * b[k + 2];
        s3 += a[k + 3] * b[k + 3];
      }
      for (; k < K; ++k) s0 += a[k] * b[k];
      C[m * N + n] += (s0 + s1) + (s2 + s3);
    }
  }
}

// C[M,N] += A[K,M]^T * B[K,N]
inline void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B,
                    double* C) {
  for (std::size_t k = 0; k < K; ++k) {
    const double* b = B + k * N;
    for (std::size_t m = 0; m < M; ++m) {
      const double a = A[k * M + m];
      if (a == 0.0) continue;
      double* c = C + m * N;
      for (std::size_t n = 0; n < N; ++n) c[n] += a * b[n];
    }
  }
}

inline bool wants_grad(const Node& self, std::size_t i) { return self.inputs.size() > i && self.inputs[i]->requires_grad; }

inline double weight_at(std::span<const double> w, std::size_t i) { return w.empty() ? 1.0 : w[i]; }

inline void check_weights(std::span<const double> w, std::size_t n, const char* op) {
  if (!w.empty() && w.size() != n) throw ShapeError(std::string(op) + ": weight count mismatch");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!detail::wants_grad(self, k)) continue;
      auto& g = self.inputs[k]->grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make_result("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (detail::wants_grad(self, 0)) {
      auto& g = self.inputs[0]->grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (detail::wants_grad(self, 1)) {
      auto& g = self.inputs[1]->grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (detail::wants_grad(self, 0)) {
      auto& g = self.inputs[0]->grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (detail::wants_grad(self, 1)) {
      auto& g = self.inputs[1]->grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return detail::make_result("scale", a.shape(), std::move(out), {a}, [factor](Node& self) {
    auto& g = self.inputs[0]->grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
  return detail::make_result("relu", a.shape(), std::move(out), {a}, [](Node& self) {
    const auto& av = self.inputs[0]->value;
    auto& g = self.inputs[0]->grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (av[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

inline Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a[i];
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  return detail::make_result("sigmoid", a.shape(), std::move(out), {a}, [](Node& self) {
    auto& g = self.inputs[0]->grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = self.value[i];
      g[i] += self.grad[i] * s * (1.0 - s);
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions and reshaping

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return detail::make_result("sum", {1}, {s}, {a}, [](Node& self) {
    auto& g = self.inputs[0]->grad;
    for (auto& x : g) x += self.grad[0];
  });
}

inline Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean of empty tensor");
  const double inv = 1.0 / static_cast<double>(a.size());
  double s = 0.0;
  for (double v : a.values()) s += v;
  return detail::make_result("mean", {1}, {s * inv}, {a}, [inv](Node& self) {
    auto& g = self.inputs[0]->grad;
    for (auto& x : g) x += self.grad[0] * inv;
  });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape " + to_string(a.shape()) + " -> " + to_string(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  return detail::make_result("reshape", std::move(shape), std::move(out), {a}, [](Node& self) {
    auto& g = self.inputs[0]->grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

/// out.flat[i] = a.flat[indices[i]]; backward scatter-adds.
inline Tensor gather(const Tensor& a, std::vector<std::size_t> indices, Shape shape) {
  if (numel(shape) != indices.size()) throw ShapeError("gather: index count does not fit shape");
  std::vector<double> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= a.size()) throw ShapeError("gather: index out of range");
    out[i] = a[indices[i]];
  }
  return detail::make_result("gather", std::move(shape), std::move(out), {a},
                             [idx = std::move(indices)](Node& self) {
                               auto& g = self.inputs[0]->grad;
                               for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += self.grad[i];
                             });
}

/// Concatenation along the leading dimension.
inline Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat of nothing");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  std::vector<double> out;
  for (const auto& p : parts) {
    if (p.rank() != tail.size() + 1 || !std::equal(tail.begin(), tail.end(), p.shape().begin() + 1)) {
      throw ShapeError("concat: trailing shapes differ");
    }
    rows += p.dim(0);
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  Shape shape{rows};
  shape.insert(shape.end(), tail.begin(), tail.end());
  return detail::make_result("concat", std::move(shape), std::move(out), parts, [](Node& self) {
    std::size_t offset = 0;
    for (auto& in : self.inputs) {
      if (in->requires_grad) {
        for (std::size_t i = 0; i < in->grad.size(); ++i) in->grad[i] += self.grad[offset + i];
      }
      offset += in->value.size();
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  const std::size_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
  std::vector<double> out(M * N, 0.0);
  detail::gemm_nn(M, N, K, a.values().data(), b.values().data(), out.data());
  return detail::make_result("matmul", {M, N}, std::move(out), {a, b}, [M, K, N](Node& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    if (detail::wants_grad(self, 0)) {
      detail::gemm_nt(M, K, N, self.grad.data(), bv.data(), self.inputs[0]->grad.data());
    }
    if (detail::wants_grad(self, 1)) {
      detail::gemm_tn(K, N, M, av.data(), self.grad.data(), self.inputs[1]->grad.data());
    }
  });
}

/// x[N,M] + bias[M] broadcast over rows.
inline Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() != 2 || bias.size() != x.dim(1)) throw ShapeError("add_row_bias shape mismatch");
  const std::size_t N = x.dim(0), M = x.dim(1);
  std::vector<double> out(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < M; ++j) out[i * M + j] += bias[j];
  return detail::make_result("add_row_bias", x.shape(), std::move(out), {x, bias}, [N, M](Node& self) {
    if (detail::wants_grad(self, 0)) {
      auto& g = self.inputs[0]->grad;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (detail::wants_grad(self, 1)) {
      auto& g = self.inputs[1]->grad;
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < M; ++j) g[j] += self.grad[i * M + j];
    }
  });
}

/// x[N,C,H,W] + bias[C] broadcast over batch and space.
inline Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() != 4 || bias.size() != x.dim(1)) throw ShapeError("add_channel_bias shape mismatch");
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  std::vector<double> out(x.values().begin(), x.values().end());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      double* p = out.data() + (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) p[i] += bias[c];
    }
  return detail::make_result("add_channel_bias", x.shape(), std::move(out), {x, bias},
                             [N, C, HW](Node& self) {
                               if (detail::wants_grad(self, 0)) {
                                 auto& g = self.inputs[0]->grad;
                                 for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                               }
                               if (detail::wants_grad(self, 1)) {
                                 auto& g = self.inputs[1]->grad;
                                 for (std::size_t n = 0; n < N; ++n)
                                   for (std::size_t c = 0; c < C; ++c) {
                                     const double* p = self.grad.data() + (n * C + c) * HW;
                                     double s = 0.0;
                                     for (std::size_t i = 0; i < HW; ++i) s += p[i];
                                     g[c] += s;
                                   }
                               }
                             });
}

// ---------------------------------------------------------------------------
// Convolution and pooling

/// Cross-correlation of input[N,C,H,W] with kernel[O,C,KH,KW].
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding) {
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (input.rank() != 4 || kernel.rank() != 4 || input.dim(1) != kernel.dim(1)) {
    throw ShapeError("conv2d " + to_string(input.shape()) + " with kernel " + to_string(kernel.shape()));
  }
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t O = kernel.dim(0), KH = kernel.dim(2), KW = kernel.dim(3);
  if (H + 2 * padding < KH || W + 2 * padding < KW) throw ShapeError("conv2d: kernel larger than padded input");
  const std::size_t OH = (H + 2 * padding - KH) / stride + 1;
  const std::size_t OW = (W + 2 * padding - KW) / stride + 1;
  const std::size_t CK = C * KH * KW, P = OH * OW;

  // im2col per batch item; kept for the backward pass
  std::vector<double> cols(N * CK * P, 0.0);
  const auto& x = input.values();
  for (std::size_t n = 0; n < N; ++n) {
    double* col = cols.data() + n * CK * P;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t ky = 0; ky < KH; ++ky)
        for (std::size_t kx = 0; kx < KW; ++kx) {
          double* row = col + ((c * KH + ky) * KW + kx) * P;
          for (std::size_t oy = 0; oy < OH; ++oy) {
            const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
            if (iy < 0 || iy >= static_cast<long>(H)) continue;
            const double* src = x.data() + ((n * C + c) * H + static_cast<std::size_t>(iy)) * W;
            for (std::size_t ox = 0; ox < OW; ++ox) {
              const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
              if (ix < 0 || ix >= static_cast<long>(W)) continue;
              row[oy * OW + ox] = src[ix];
            }
          }
        }
  }
  std::vector<double> out(N * O * P, 0.0);
  for (std::size_t n = 0; n < N; ++n) {
    detail::gemm_nn(O, P, CK, kernel.values().data(), cols.data() + n * CK * P, out.data() + n * O * P);
  }
  return detail::make_result(
      "conv2d", {N, O, OH, OW}, std::move(out), {input, kernel},
      [cols = std::move(cols), N, C, H, W, O, KH, KW, OH, OW, CK, P, stride, padding](Node& self) {
        const auto& kv = self.inputs[1]->value;
        if (detail::wants_grad(self, 1)) {
          auto& gk = self.inputs[1]->grad;
          for (std::size_t n = 0; n < N; ++n) {
            detail::gemm_nt(O, CK, P, self.grad.data() + n * O * P, cols.data() + n * CK * P, gk.data());
          }
        }
        if (detail::wants_grad(self, 0)) {
          auto& gx = self.inputs[0]->grad;
          std::vector<double> dcols(CK * P);
          for (std::size_t n = 0; n < N; ++n) {
            std::fill(dcols.begin(), dcols.end(), 0.0);
            detail::gemm_tn(CK, P, O, kv.data(), self.grad.data() + n * O * P, dcols.data());
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t ky = 0; ky < KH; ++ky)
                for (std::size_t kx = 0; kx < KW; ++kx) {
                  const double* row = dcols.data() + ((c * KH + ky) * KW + kx) * P;
                  for (std::size_t oy = 0; oy < OH; ++oy) {
                    const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
                    if (iy < 0 || iy >= static_cast<long>(H)) continue;
                    double* dst = gx.data() + ((n * C + c) * H + static_cast<std::size_t>(iy)) * W;
                    for (std::size_t ox = 0; ox < OW; ++ox) {
                      const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
                      if (ix < 0 || ix >= static_cast<long>(W)) continue;
                      dst[ix] += row[oy * OW + ox];
                    }
                  }
                }
          }
        }
      });
}

/// Max pooling over non-padded windows of input[N,C,H,W].
inline Tensor max_pool2d(const Tensor& input, std::size_t window, std::size_t stride) {
  if (input.rank() != 4 || window == 0 || stride == 0 || input.dim(2) < window || input.dim(3) < window) {
    throw ShapeError("max_pool2d: bad input " + to_string(input.shape()));
  }
  const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t OH = (H - window) / stride + 1, OW = (W - window) / stride + 1;
  std::vector<double> out(N * C * OH * OW);
  std::vector<std::size_t> argmax(out.size());
  const auto& x = input.values();
  for (std::size_t nc = 0; nc < N * C; ++nc)
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox) {
        std::size_t best = nc * H * W + oy * stride * W + ox * stride;
        for (std::size_t ky = 0; ky < window; ++ky)
          for (std::size_t kx = 0; kx < window; ++kx) {
            const std::size_t idx = nc * H * W + (oy * stride + ky) * W + ox * stride + kx;
            if (x[idx] > x[best]) best = idx;
          }
        const std::size_t o = (nc * OH + oy) * OW + ox;
        out[o] = x[best];
        argmax[o] = best;
      }
  return detail::make_result("max_pool2d", {N, C, OH, OW}, std::move(out), {input},
                             [argmax = std::move(argmax)](Node& self) {
                               auto& g = self.inputs[0]->grad;
                               for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += self.grad[i];
                             });
}

// ---------------------------------------------------------------------------
// Gradient control

/// Identity forward; backward multiplies the upstream gradient by -coefficient.
inline Tensor grad_reverse(const Tensor& x, double coefficient) {
  if (!(coefficient > 0.0) || !std::isfinite(coefficient)) {
    throw ConfigError("grad_reverse coefficient must be positive, got " + std::to_string(coefficient));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return detail::make_result("grad_reverse", x.shape(), std::move(out), {x}, [coefficient](Node& self) {
    auto& g = self.inputs[0]->grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= coefficient * self.grad[i];
  });
}

/// Identity forward with no gradient path.
inline Tensor detach(const Tensor& x) { return x.clone(false); }

// ---------------------------------------------------------------------------
// Losses. All return the (weighted) sum over elements as a [1] tensor.
// Entries with weight exactly 0 are skipped: they add nothing and receive a
// zero gradient.

inline Tensor binary_cross_entropy(const Tensor& pred, const Tensor& label, std::span<const double> weights = {}) {
  detail::require_same_shape(pred, label, "binary_cross_entropy");
  detail::check_weights(weights, pred.size(), "binary_cross_entropy");
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double w = detail::weight_at(weights, i);
    if (w == 0.0) continue;
    const double p = std::clamp(pred[i], kProbEps, 1.0 - kProbEps);
    const double d = label[i];
    total += w * -(d * std::log(p) + (1.0 - d) * std::log(1.0 - p));
  }
  std::vector<double> w(weights.begin(), weights.end());
  return detail::make_result("binary_cross_entropy", {1}, {total}, {pred, label},
                             [w = std::move(w)](Node& self) {
                               if (!detail::wants_grad(self, 0)) return;
                               const auto& pv = self.inputs[0]->value;
                               const auto& lv = self.inputs[1]->value;
                               auto& g = self.inputs[0]->grad;
                               for (std::size_t i = 0; i < pv.size(); ++i) {
                                 const double wi = detail::weight_at(w, i);
                                 if (wi == 0.0) continue;
                                 const double p = pv[i];
                                 if (p <= kProbEps || p >= 1.0 - kProbEps) continue;
                                 const double d = lv[i];
                                 g[i] += self.grad[0] * wi * (-d / p + (1.0 - d) / (1.0 - p));
                               }
                             });
}

inline double smooth_l1_value(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

inline Tensor smooth_l1(const Tensor& pred, const Tensor& target, std::span<const double> weights = {}) {
  detail::require_same_shape(pred, target, "smooth_l1");
  detail::check_weights(weights, pred.size(), "smooth_l1");
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double w = detail::weight_at(weights, i);
    if (w == 0.0) continue;
    total += w * smooth_l1_value(pred[i] - target[i]);
  }
  std::vector<double> w(weights.begin(), weights.end());
  return detail::make_result("smooth_l1", {1}, {total}, {pred, target}, [w = std::move(w)](Node& self) {
    const auto& pv = self.inputs[0]->value;
    const auto& tv = self.inputs[1]->value;
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const double wi = detail::weight_at(w, i);
      if (wi == 0.0) continue;
      const double x = pv[i] - tv[i];
      const double dx = std::abs(x) < 1.0 ? x : (x > 0.0 ? 1.0 : -1.0);
      const double g = self.grad[0] * wi * dx;
      if (detail::wants_grad(self, 0)) self.inputs[0]->grad[i] += g;
      if (detail::wants_grad(self, 1)) self.inputs[1]->grad[i] -= g;
    }
  });
}

/// Softmax cross-entropy over rows of logits[N,K] against integer labels.
inline Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels,
                                    std::span<const double> weights = {}) {
  if (logits.rank() != 2 || labels.size() != logits.dim(0)) throw ShapeError("softmax_cross_entropy shape mismatch");
  detail::check_weights(weights, labels.size(), "softmax_cross_entropy");
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  std::vector<double> probs(N * K);
  double total = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= K) throw ShapeError("softmax_cross_entropy: label out of range");
    const double* z = logits.values().data() + i * K;
    const double zmax = *std::max_element(z, z + K);
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += std::exp(z[k] - zmax);
    const double lse = zmax + std::log(s);
    for (std::size_t k = 0; k < K; ++k) probs[i * K + k] = std::exp(z[k] - lse);
    const double w = detail::weight_at(weights, i);
    if (w != 0.0) total += w * (lse - z[labels[i]]);
  }
  std::vector<double> w(weights.begin(), weights.end());
  std::vector<int> y(labels.begin(), labels.end());
  return detail::make_result("softmax_cross_entropy", {1}, {total}, {logits},
                             [probs = std::move(probs), w = std::move(w), y = std::move(y), N, K](Node& self) {
                               auto& g = self.inputs[0]->grad;
                               for (std::size_t i = 0; i < N; ++i) {
                                 const double wi = detail::weight_at(w, i);
                                 if (wi == 0.0) continue;
                                 const double s = self.grad[0] * wi;
                                 for (std::size_t k = 0; k < K; ++k) {
                                   const double onehot = static_cast<int>(k) == y[i] ? 1.0 : 0.0;
                                   g[i * K + k] += s * (probs[i * K + k] - onehot);
                                 }
                               }
                             });
}

}  // namespace usdaf::ad
