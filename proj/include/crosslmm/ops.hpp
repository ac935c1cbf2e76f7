#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "crosslmm/error.hpp"
#include "crosslmm/tensor.hpp"

namespace crosslmm {

/// Uniform double in [lo, hi) built directly from engine bits so the stream is
/// identical across standard library implementations.
inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  const double unit = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * unit;
}

inline Tensor random_uniform(Shape shape, double lo, double hi,
                             std::mt19937_64& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = uniform(rng, lo, hi);
  return Tensor::from(std::move(shape), std::move(v));
}

namespace ops {

namespace detail {

inline void require_matrix(const Tensor& t, const char* op) {
  if (!t.defined() || !t.is_matrix())
    throw DimensionError(std::string(op) + ": expected a matrix, got " +
                         (t.defined() ? shape_str(t.shape()) : "undefined"));
}

inline void require_same_shape(const Tensor& a, const Tensor& b,
                               const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

inline void require_vector(const Tensor& v, std::size_t n, const char* op) {
  if (v.rank() != 1 || v.numel() != n)
    throw DimensionError(std::string(op) + ": expected vector of length " +
                         std::to_string(n) + ", got " + shape_str(v.shape()));
}

inline void accumulate(const Tensor& t, std::span<const double> g) {
  if (!t.requires_grad()) return;
  auto buf = t.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

}  // namespace detail

/// C = A·B. Counts m·k·n multiply-accumulates on the tape.
inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw DimensionError("matmul: inner dimensions differ, " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> c(m * n, 0.0);
  const auto A = a.data();
  const auto B = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      const double* brow = &B[p * n];
      double* crow = &c[i * n];
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  tape.count_macs(static_cast<std::uint64_t>(m) * k * n);
  return tape.emit(
      Tensor::matrix(m, n, std::move(c)), "matmul", {a, b},
      [a, b, m, k, n](std::span<const double> g) {
        const auto A = a.data();
        const auto B = b.data();
        if (a.requires_grad()) {
          auto ga = a.grad_buffer();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              double s = 0.0;
              for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * B[p * n + j];
              ga[i * k + p] += s;
            }
        }
        if (b.requires_grad()) {
          auto gb = b.grad_buffer();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double aip = A[i * k + p];
              for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
            }
        }
      });
}

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return tape.emit(Tensor::from(a.shape(), std::move(out)), "add", {a, b},
                   [a, b](std::span<const double> g) {
                     detail::accumulate(a, g);
                     detail::accumulate(b, g);
                   });
}

/// x[m×n] + bias[n] broadcast over rows.
inline Tensor add_row(Tape& tape, const Tensor& x, const Tensor& bias) {
  detail::require_matrix(x, "add_row");
  const std::size_t m = x.rows(), n = x.cols();
  detail::require_vector(bias, n, "add_row");
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[i * n + j] + bias[j];
  return tape.emit(Tensor::matrix(m, n, std::move(out)), "add_row", {x, bias},
                   [x, bias, m, n](std::span<const double> g) {
                     detail::accumulate(x, g);
                     if (bias.requires_grad()) {
                       auto gb = bias.grad_buffer();
                       for (std::size_t i = 0; i < m; ++i)
                         for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                     }
                   });
}

/// x[(r·N)×n] + tile[N×n], tile repeated r times down the rows.
inline Tensor add_tiled(Tape& tape, const Tensor& x, const Tensor& tile) {
  detail::require_matrix(x, "add_tiled");
  detail::require_matrix(tile, "add_tiled");
  if (tile.cols() != x.cols() || x.rows() % tile.rows() != 0)
    throw DimensionError("add_tiled: cannot tile " + shape_str(tile.shape()) +
                         " over " + shape_str(x.shape()));
  const std::size_t block = tile.numel();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + tile[i % block];
  return tape.emit(Tensor::from(x.shape(), std::move(out)), "add_tiled",
                   {x, tile}, [x, tile, block](std::span<const double> g) {
                     detail::accumulate(x, g);
                     if (tile.requires_grad()) {
                       auto gt = tile.grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) gt[i % block] += g[i];
                     }
                   });
}

inline Tensor scale(Tape& tape, const Tensor& x, double c) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * x[i];
  return tape.emit(Tensor::from(x.shape(), std::move(out)), "scale", {x},
                   [x, c](std::span<const double> g) {
                     if (!x.requires_grad()) return;
                     auto gx = x.grad_buffer();
                     for (std::size_t i = 0; i < g.size(); ++i) gx[i] += c * g[i];
                   });
}

/// s·x for a learnable scalar s.
inline Tensor scale_by(Tape& tape, const Tensor& x, const Tensor& s) {
  if (!s.is_scalar())
    throw DimensionError("scale_by: factor must be scalar, got " +
                         shape_str(s.shape()));
  const double sv = s[0];
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sv * x[i];
  return tape.emit(Tensor::from(x.shape(), std::move(out)), "scale_by", {x, s},
                   [x, s](std::span<const double> g) {
                     const double sv = s[0];
                     if (x.requires_grad()) {
                       auto gx = x.grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += sv * g[i];
                     }
                     if (s.requires_grad()) {
                       double acc = 0.0;
                       for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * x[i];
                       s.grad_buffer()[0] += acc;
                     }
                   });
}

/// Elementwise clamp; gradient passes where lo <= x <= hi.
inline Tensor clamp(Tape& tape, const Tensor& x, double lo, double hi) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(x[i], lo, hi);
  return tape.emit(Tensor::from(x.shape(), std::move(out)), "clamp", {x},
                   [x, lo, hi](std::span<const double> g) {
                     if (!x.requires_grad()) return;
                     auto gx = x.grad_buffer();
                     for (std::size_t i = 0; i < g.size(); ++i)
                       if (x[i] >= lo && x[i] <= hi) gx[i] += g[i];
                   });
}

inline Tensor transpose(Tape& tape, const Tensor& x) {
  detail::require_matrix(x, "transpose");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  return tape.emit(Tensor::matrix(n, m, std::move(out)), "transpose", {x},
                   [x, m, n](std::span<const double> g) {
                     if (!x.requires_grad()) return;
                     auto gx = x.grad_buffer();
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j * m + i];
                   });
}

inline Tensor concat_rows(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  const std::size_t n = parts.front().cols();
  std::size_t rows = 0;
  for (const Tensor& p : parts) {
    detail::require_matrix(p, "concat_rows");
    if (p.cols() != n)
      throw DimensionError("concat_rows: column mismatch " +
                           shape_str(parts.front().shape()) + " vs " +
                           shape_str(p.shape()));
    rows += p.rows();
  }
  std::vector<double> out;
  out.reserve(rows * n);
  for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return tape.emit(Tensor::matrix(rows, n, std::move(out)), "concat_rows", parts,
                   [parts](std::span<const double> g) {
                     std::size_t offset = 0;
                     for (const Tensor& p : parts) {
                       detail::accumulate(p, g.subspan(offset, p.numel()));
                       offset += p.numel();
                     }
                   });
}

/// Rows [begin, end) of x.
inline Tensor slice_rows(Tape& tape, const Tensor& x, std::size_t begin,
                         std::size_t end) {
  detail::require_matrix(x, "slice_rows");
  if (begin >= end || end > x.rows())
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") invalid for " +
                         shape_str(x.shape()));
  const std::size_t n = x.cols();
  std::vector<double> out(x.data().begin() + static_cast<std::ptrdiff_t>(begin * n),
                          x.data().begin() + static_cast<std::ptrdiff_t>(end * n));
  return tape.emit(Tensor::matrix(end - begin, n, std::move(out)), "slice_rows",
                   {x}, [x, begin, n](std::span<const double> g) {
                     if (!x.requires_grad()) return;
                     auto gx = x.grad_buffer();
                     for (std::size_t i = 0; i < g.size(); ++i) gx[begin * n + i] += g[i];
                   });
}

inline Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t m = parts.front().rows();
  std::size_t cols = 0;
  for (const Tensor& p : parts) {
    detail::require_matrix(p, "concat_cols");
    if (p.rows() != m)
      throw DimensionError("concat_cols: row mismatch " +
                           shape_str(parts.front().shape()) + " vs " +
                           shape_str(p.shape()));
    cols += p.cols();
  }
  std::vector<double> out(m * cols);
  std::size_t c0 = 0;
  for (const Tensor& p : parts) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < p.cols(); ++j)
        out[i * cols + c0 + j] = p[i * p.cols() + j];
    c0 += p.cols();
  }
  return tape.emit(Tensor::matrix(m, cols, std::move(out)), "concat_cols", parts,
                   [parts, m, cols](std::span<const double> g) {
                     std::size_t c0 = 0;
                     for (const Tensor& p : parts) {
                       if (p.requires_grad()) {
                         auto gp = p.grad_buffer();
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < p.cols(); ++j)
                             gp[i * p.cols() + j] += g[i * cols + c0 + j];
                       }
                       c0 += p.cols();
                     }
                   });
}

/// Columns [begin, end) of x.
inline Tensor slice_cols(Tape& tape, const Tensor& x, std::size_t begin,
                         std::size_t end) {
  detail::require_matrix(x, "slice_cols");
  if (begin >= end || end > x.cols())
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") invalid for " +
                         shape_str(x.shape()));
  const std::size_t m = x.rows(), n = x.cols(), w = end - begin;
  std::vector<double> out(m * w);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = x[i * n + begin + j];
  return tape.emit(Tensor::matrix(m, w, std::move(out)), "slice_cols", {x},
                   [x, begin, m, n, w](std::span<const double> g) {
                     if (!x.requires_grad()) return;
                     auto gx = x.grad_buffer();
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < w; ++j) gx[i * n + begin + j] += g[i * w + j];
                   });
}

/// Gathers rows of table[V×d]; backward scatter-adds.
inline Tensor embedding_lookup(Tape& tape, const Tensor& table,
                               std::span<const int> ids) {
  detail::require_matrix(table, "embedding_lookup");
  if (ids.empty()) throw ContractError("embedding_lookup: empty id list");
  const std::size_t vocab = table.rows(), d = table.cols();
  std::vector<double> out;
  out.reserve(ids.size() * d);
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab)
      throw ContractError("embedding_lookup: id " + std::to_string(id) +
                          " outside table of " + std::to_string(vocab) + " rows");
    const auto row = table.data().subspan(static_cast<std::size_t>(id) * d, d);
    out.insert(out.end(), row.begin(), row.end());
  }
  std::vector<int> saved(ids.begin(), ids.end());
  return tape.emit(Tensor::matrix(ids.size(), d, std::move(out)),
                   "embedding_lookup", {table},
                   [table, saved = std::move(saved), d](std::span<const double> g) {
                     if (!table.requires_grad()) return;
                     auto gt = table.grad_buffer();
                     for (std::size_t r = 0; r < saved.size(); ++r)
                       for (std::size_t j = 0; j < d; ++j)
                         gt[static_cast<std::size_t>(saved[r]) * d + j] += g[r * d + j];
                   });
}

/// Exact GeLU: x·Φ(x) with Φ the standard normal CDF.
inline Tensor gelu(Tape& tape, const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * std::numbers::sqrt2 / 2.0));
  return tape.emit(Tensor::from(x.shape(), std::move(out)), "gelu", {x},
                   [x](std::span<const double> g) {
                     if (!x.requires_grad()) return;
                     auto gx = x.grad_buffer();
                     const double inv_sqrt_2pi = std::numbers::inv_sqrtpi / std::numbers::sqrt2;
                     for (std::size_t i = 0; i < g.size(); ++i) {
                       const double v = x[i];
                       const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
                       const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
                       gx[i] += g[i] * (cdf + v * pdf);
                     }
                   });
}

/// Row-wise layer normalization with affine gain and bias.
inline Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain,
                         const Tensor& bias, double eps) {
  detail::require_matrix(x, "layer_norm");
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  const std::size_t m = x.rows(), d = x.cols();
  detail::require_vector(gain, d, "layer_norm");
  detail::require_vector(bias, d, "layer_norm");
  std::vector<double> xhat(x.numel()), rstd(m), out(x.numel());
  for (std::size_t i = 0; i < m; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += x[i * d + j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = x[i * d + j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (x[i * d + j] - mean) * rstd[i];
      out[i * d + j] = gain[j] * xhat[i * d + j] + bias[j];
    }
  }
  return tape.emit(
      Tensor::matrix(m, d, std::move(out)), "layer_norm", {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), rstd = std::move(rstd), m,
       d](std::span<const double> g) {
        if (gain.requires_grad() || bias.requires_grad()) {
          auto gg = gain.requires_grad() ? gain.grad_buffer() : std::span<double>{};
          auto gb = bias.requires_grad() ? bias.grad_buffer() : std::span<double>{};
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j) {
              if (!gg.empty()) gg[j] += g[i * d + j] * xhat[i * d + j];
              if (!gb.empty()) gb[j] += g[i * d + j];
            }
        }
        if (!x.requires_grad()) return;
        auto gx = x.grad_buffer();
        for (std::size_t i = 0; i < m; ++i) {
          double mean_dh = 0.0, mean_dh_xh = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = g[i * d + j] * gain[j];
            mean_dh += dh;
            mean_dh_xh += dh * xhat[i * d + j];
          }
          mean_dh /= static_cast<double>(d);
          mean_dh_xh /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = g[i * d + j] * gain[j];
            gx[i * d + j] += rstd[i] * (dh - mean_dh - xhat[i * d + j] * mean_dh_xh);
          }
        }
      });
}

/// Causal restriction for softmax_rows: row i sees columns j <= i + offset.
struct CausalMask {
  std::size_t offset = 0;
};

/// Numerically stable row softmax. Masked entries are exactly zero.
inline Tensor softmax_rows(Tape& tape, const Tensor& x,
                           std::optional<CausalMask> mask = std::nullopt) {
  detail::require_matrix(x, "softmax_rows");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(x.numel(), 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t width = mask ? std::min(n, i + mask->offset + 1) : n;
    double mx = x[i * n];
    for (std::size_t j = 1; j < width; ++j) mx = std::max(mx, x[i * n + j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      out[i * n + j] = std::exp(x[i * n + j] - mx);
      sum += out[i * n + j];
    }
    for (std::size_t j = 0; j < width; ++j) out[i * n + j] /= sum;
  }
  Tensor y = Tensor::matrix(m, n, std::move(out));
  return tape.emit(y, "softmax_rows", {x}, [x, y, m, n](std::span<const double> g) {
    if (!x.requires_grad()) return;
    auto gx = x.grad_buffer();
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
      for (std::size_t j = 0; j < n; ++j)
        gx[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
    }
  });
}

/// Rotary position encoding applied per head to consecutive column pairs.
/// Row r is at sequence position `position_offset + r`.
inline Tensor rope(Tape& tape, const Tensor& x, std::size_t n_heads,
                   std::size_t position_offset, double base) {
  detail::require_matrix(x, "rope");
  const std::size_t m = x.rows(), d = x.cols();
  if (n_heads == 0 || d % n_heads != 0 || (d / n_heads) % 2 != 0)
    throw DimensionError("rope: width " + std::to_string(d) +
                         " must split into an even head size across " +
                         std::to_string(n_heads) + " heads");
  const std::size_t dk = d / n_heads;
  std::vector<double> cosv(m * dk / 2), sinv(m * dk / 2);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t i = 0; i < dk / 2; ++i) {
      const double theta = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(dk));
      const double angle = static_cast<double>(position_offset + r) * theta;
      cosv[r * dk / 2 + i] = std::cos(angle);
      sinv[r * dk / 2 + i] = std::sin(angle);
    }
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t h = 0; h < n_heads; ++h)
      for (std::size_t i = 0; i < dk / 2; ++i) {
        const std::size_t c = r * d + h * dk + 2 * i;
        const double cs = cosv[r * dk / 2 + i], sn = sinv[r * dk / 2 + i];
        out[c] = x[c] * cs - x[c + 1] * sn;
        out[c + 1] = x[c] * sn + x[c + 1] * cs;
      }
  return tape.emit(Tensor::matrix(m, d, std::move(out)), "rope", {x},
                   [x, cosv = std::move(cosv), sinv = std::move(sinv), m, d, dk,
                    n_heads](std::span<const double> g) {
                     if (!x.requires_grad()) return;
                     auto gx = x.grad_buffer();
                     for (std::size_t r = 0; r < m; ++r)
                       for (std::size_t h = 0; h < n_heads; ++h)
                         for (std::size_t i = 0; i < dk / 2; ++i) {
                           const std::size_t c = r * d + h * dk + 2 * i;
                           const double cs = cosv[r * dk / 2 + i], sn = sinv[r * dk / 2 + i];
                           gx[c] += g[c] * cs + g[c + 1] * sn;
                           gx[c + 1] += -g[c] * sn + g[c + 1] * cs;
                         }
                   });
}

/// Sum of all entries as a scalar.
inline Tensor sum(Tape& tape, const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return tape.emit(Tensor::scalar(s), "sum", {x}, [x](std::span<const double> g) {
    if (!x.requires_grad()) return;
    auto gx = x.grad_buffer();
    for (double& v : gx) v += g[0];
  });
}

}  // namespace ops
}  // namespace crosslmm
