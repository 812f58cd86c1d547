// Copyright 2026 The ShortV Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "shortv/error.hpp"

namespace shortv {

/// Dense row-major float32 matrix. Carries hidden states and weights alike.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows_ * cols_, ErrorKind::kShape,
            "matrix data length " + std::to_string(data_.size()) + " != " +
                std::to_string(rows_) + "x" + std::to_string(cols_));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  float& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<float> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const float> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](float x) { return std::isfinite(x); });
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

/// Accumulates matmul work as 2*m*n*k FLOPs per (m x k)(k x n) product.
/// Each worker owns one; combine with merge().
struct FlopCounter {
  std::uint64_t flops = 0;

  void add(std::uint64_t n) noexcept { flops += n; }
  void merge(const FlopCounter& other) noexcept { flops += other.flops; }
};

inline std::uint64_t matmul_flops(std::size_t m, std::size_t k, std::size_t n) noexcept {
  return 2ull * m * n * k;
}

/// c = a * b. Every output element accumulates over k in ascending order, so a
/// row of the result depends only on the matching row of `a`; computing a
/// subset of rows yields bit-identical values to computing all of them.
inline Matrix matmul(const Matrix& a, const Matrix& b, FlopCounter* counter = nullptr) {
  require(a.cols() == b.rows(), ErrorKind::kShape,
          "matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " * " +
              std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Matrix c(m, n);
  const float* A = a.data().data();
  const float* B = b.data().data();
  float* C = c.data().data();

  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    float* c0 = C + (i + 0) * n;
    float* c1 = C + (i + 1) * n;
    float* c2 = C + (i + 2) * n;
    float* c3 = C + (i + 3) * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const float* brow = B + kk * n;
      const float a0 = A[(i + 0) * k + kk];
      const float a1 = A[(i + 1) * k + kk];
      const float a2 = A[(i + 2) * k + kk];
      const float a3 = A[(i + 3) * k + kk];
      for (std::size_t j = 0; j < n; ++j) {
        const float bj = brow[j];
        c0[j] += a0 * bj;
        c1[j] += a1 * bj;
        c2[j] += a2 * bj;
        c3[j] += a3 * bj;
      }
    }
  }
  for (; i < m; ++i) {
    float* ci = C + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const float* brow = B + kk * n;
      const float ai = A[i * k + kk];
      for (std::size_t j = 0; j < n; ++j) ci[j] += ai * brow[j];
    }
  }
  if (counter != nullptr) counter->add(matmul_flops(m, k, n));
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) t(c, r) = a(r, c);
  return t;
}

inline Matrix gather_rows(const Matrix& a, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = a.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

/// Numerically stable log-softmax, accumulated in double.
inline std::vector<double> log_softmax(std::span<const float> logits) {
  require(!logits.empty(), ErrorKind::kShape, "softmax of empty vector");
  double mx = -std::numeric_limits<double>::infinity();
  for (float x : logits) mx = std::max(mx, static_cast<double>(x));
  double sum = 0.0;
  for (float x : logits) sum += std::exp(static_cast<double>(x) - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<double>(logits[i]) - lse;
  return out;
}

inline std::vector<float> softmax(std::span<const float> logits) {
  require(!logits.empty(), ErrorKind::kShape, "softmax of empty vector");
  double mx = -std::numeric_limits<double>::infinity();
  for (float x : logits) mx = std::max(mx, static_cast<double>(x));
  std::vector<double> e(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    e[i] = std::exp(static_cast<double>(logits[i]) - mx);
    sum += e[i];
  }
  std::vector<float> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<float>(e[i] / sum);
  return out;
}

/// KL(softmax(p) || softmax(q)) in nats. Identical inputs give exactly 0.
inline double kl_divergence(std::span<const float> p_logits, std::span<const float> q_logits) {
  require(p_logits.size() == q_logits.size(), ErrorKind::kShape,
          "kl_divergence: length " + std::to_string(p_logits.size()) + " vs " +
              std::to_string(q_logits.size()));
  const auto lp = log_softmax(p_logits);
  const auto lq = log_softmax(q_logits);
  double kl = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) kl += std::exp(lp[i]) * (lp[i] - lq[i]);
  return kl;
}

inline void rms_norm_into(std::span<const float> x, std::span<const float> gamma, float eps,
                          std::span<float> out) {
  double ss = 0.0;
  for (float v : x) ss += static_cast<double>(v) * v;
  const float inv = static_cast<float>(1.0 / std::sqrt(ss / static_cast<double>(x.size()) + eps));
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv * gamma[i];
}

inline std::vector<float> rms_norm(std::span<const float> x, std::span<const float> gamma,
                                   float eps) {
  require(x.size() == gamma.size(), ErrorKind::kShape, "rms_norm: x and gamma lengths differ");
  require(!x.empty(), ErrorKind::kShape, "rms_norm of empty vector");
  std::vector<float> out(x.size());
  rms_norm_into(x, gamma, eps, out);
  return out;
}

/// Row-wise RMS norm of every row of `x`.
inline Matrix rms_norm_rows(const Matrix& x, std::span<const float> gamma, float eps) {
  require(x.cols() == gamma.size(), ErrorKind::kShape, "rms_norm: x and gamma lengths differ");
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) rms_norm_into(x.row(r), gamma, eps, out.row(r));
  return out;
}

/// Clamped to [-1, 1] against rounding.
inline double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  require(a.size() == b.size(), ErrorKind::kShape, "cosine_similarity: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  require(na > 0.0 && nb > 0.0, ErrorKind::kDegenerate, "cosine_similarity of zero-norm vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

}  // namespace shortv
