#pragma once

// Independent reference computations used by the tests. Nothing here calls
// into crosslmm::ops; every formula is spelled out with plain loops.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "crosslmm/ops.hpp"
#include "crosslmm/tensor.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const crosslmm::Tensor& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
  return m;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t p = 0; p < b.size(); ++p) c[i][j] += a[i][p] * b[p][j];
  return c;
}

inline std::vector<double> row_times(const std::vector<double>& x, const Mat& w) {
  std::vector<double> y(w[0].size(), 0.0);
  for (std::size_t p = 0; p < x.size(); ++p)
    for (std::size_t j = 0; j < y.size(); ++j) y[j] += x[p] * w[p][j];
  return y;
}

/// erf by its Maclaurin series, summed until terms vanish.
inline double erf_series(double x) {
  double sum = 0.0, term = x;  // term_n = (-1)^n x^(2n+1) / n!
  for (int n = 0; n < 200; ++n) {
    sum += term / (2 * n + 1);
    term *= -x * x / (n + 1);
    if (std::abs(term) < 1e-300) break;
  }
  return 2.0 / std::sqrt(M_PI) * sum;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + erf_series(x / std::sqrt(2.0))); }

inline std::vector<double> layer_norm(const std::vector<double>& x,
                                      const std::vector<double>& g,
                                      const std::vector<double>& b, double eps) {
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= x.size();
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= x.size();
  std::vector<double> y(x.size());
  for (std::size_t j = 0; j < x.size(); ++j)
    y[j] = g[j] * (x[j] - mean) / std::sqrt(var + eps) + b[j];
  return y;
}

/// Applies rotary encoding to one row at `pos`.
inline std::vector<double> rope_row(std::vector<double> x, std::size_t heads,
                                    std::size_t pos, double base) {
  const std::size_t dk = x.size() / heads;
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < dk / 2; ++i) {
      const double ang = pos * std::pow(base, -2.0 * i / dk);
      const std::size_t c = h * dk + 2 * i;
      const double a = x[c], b = x[c + 1];
      x[c] = a * std::cos(ang) - b * std::sin(ang);
      x[c + 1] = a * std::sin(ang) + b * std::cos(ang);
    }
  return x;
}

/// Brute-force multi-head attention, one query row at a time.
/// keys_visible(i) is the number of leading keys query i may see.
inline Mat attention(const Mat& q, const Mat& k, const Mat& v, std::size_t heads,
                     const std::function<std::size_t(std::size_t)>& keys_visible) {
  const std::size_t d = q[0].size(), dk = d / heads;
  Mat out(q.size(), std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < q.size(); ++i)
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t n = keys_visible(i);
      std::vector<double> s(n);
      double mx = -1e300;
      for (std::size_t j = 0; j < n; ++j) {
        double dot = 0.0;
        for (std::size_t c = 0; c < dk; ++c) dot += q[i][h * dk + c] * k[j][h * dk + c];
        s[j] = dot / std::sqrt(static_cast<double>(dk));
        mx = std::max(mx, s[j]);
      }
      double z = 0.0;
      for (double& e : s) {
        e = std::exp(e - mx);
        z += e;
      }
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t c = 0; c < dk; ++c) out[i][h * dk + c] += s[j] / z * v[j][h * dk + c];
    }
  return out;
}

/// Relative error with an absolute floor so near-zero gradients compare sanely.
inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Largest relative error between the tape's gradient and central finite
/// differences, over every coordinate of every tensor in `wrt`.
inline double max_grad_error(const std::function<crosslmm::Tensor(crosslmm::Tape&)>& loss_fn,
                             std::vector<crosslmm::Tensor> wrt, double step = 1e-5,
                             double floor = 1e-8) {
  crosslmm::Tape tape;
  crosslmm::Tensor loss = loss_fn(tape);
  tape.backward(loss);
  double worst = 0.0;
  for (crosslmm::Tensor& t : wrt) {
    const crosslmm::Tensor analytic = t.grad_tensor();
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double keep = data[i];
      data[i] = keep + step;
      crosslmm::Tape tp(crosslmm::TapeOptions{.record = false});
      const double up = loss_fn(tp).item();
      data[i] = keep - step;
      crosslmm::Tape tm(crosslmm::TapeOptions{.record = false});
      const double down = loss_fn(tm).item();
      data[i] = keep;
      worst = std::max(worst, rel_err(analytic[i], (up - down) / (2 * step), floor));
    }
  }
  return worst;
}

inline crosslmm::Tensor random(crosslmm::Shape shape, std::mt19937_64& rng,
                               double lo = -1.0, double hi = 1.0, bool grad = true) {
  auto t = crosslmm::random_uniform(std::move(shape), lo, hi, rng);
  t.set_requires_grad(grad);
  return t;
}

}  // namespace oracle
