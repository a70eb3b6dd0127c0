#include "guide/kernels.hpp"

#include <algorithm>
#include <cmath>

#include "guide/error.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace guide {

Vector softmax_biased(std::span<const double> logits, std::span<const double> bias) {
  if (logits.size() != bias.size()) {
    throw Error("softmax_biased: logits and bias differ in length");
  }
  if (logits.empty()) {
    throw Error("softmax_biased: empty input");
  }
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!std::isfinite(logits[i]) || !std::isfinite(bias[i])) {
      throw Error("softmax_biased: non-finite input at index " + std::to_string(i));
    }
  }
  Vector out(logits.size());
  kernels::softmax_biased_into(logits, bias, out);
  return out;
}

namespace kernels {

void softmax_biased_into(std::span<const double> logits, std::span<const double> bias,
                         std::span<double> out) {
  const std::size_t n = logits.size();
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = logits[i] + bias[i];
    peak = std::max(peak, out[i]);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(out[i] - peak);
    total += out[i];
  }
  const double inv = 1.0 / total;
  for (std::size_t i = 0; i < n; ++i) out[i] *= inv;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double l2_norm(std::span<const double> x) { return std::sqrt(dot(x, x)); }

namespace {

void check_matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw Error("matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                std::to_string(b.rows()) + ")");
  }
}

void matmul_row(const Matrix& a, const Matrix& b, std::size_t r, Matrix& out) {
  auto dst = out.row(r);
  std::fill(dst.begin(), dst.end(), 0.0);
  const auto src = a.row(r);
  for (std::size_t k = 0; k < a.cols(); ++k) {
    const double x = src[k];
    const auto brow = b.row(k);
    for (std::size_t j = 0; j < b.cols(); ++j) dst[j] += x * brow[j];
  }
}

void rms_norm_row(const Matrix& x, std::span<const double> gain, double eps, std::size_t r,
                  Matrix& out) {
  const auto src = x.row(r);
  auto dst = out.row(r);
  double ms = 0.0;
  for (double v : src) ms += v * v;
  ms /= static_cast<double>(src.size());
  const double inv = 1.0 / std::sqrt(ms + eps);
  for (std::size_t j = 0; j < src.size(); ++j) dst[j] = src[j] * inv * gain[j];
}

void check_attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t offset,
                     AttentionShape shape, const Matrix& context) {
  const std::size_t width = shape.heads * shape.head_dim;
  if (q.cols() != width || k.cols() != width || v.cols() != width || context.cols() != width) {
    throw Error("causal_attention: projection width mismatch");
  }
  if (v.rows() < k.rows() || offset + q.rows() > k.rows() || context.rows() != q.rows()) {
    throw Error("causal_attention: row count mismatch");
  }
}

void attend_row(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t offset,
                AttentionShape shape, const AttentionBias& bias, std::size_t head, std::size_t r,
                Matrix& context, std::vector<Matrix>* head_probs) {
  const std::size_t position = offset + r;
  const std::size_t n_keys = position + 1;
  const std::size_t d = shape.head_dim;
  const std::size_t col0 = head * d;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  std::vector<double> logits(n_keys);
  std::vector<double> probs(n_keys);
  const auto qrow = q.row(r).subspan(col0, d);
  for (std::size_t i = 0; i < n_keys; ++i) {
    logits[i] = dot(qrow, k.row(i).subspan(col0, d)) * scale;
  }
  if (bias.applies(head, position)) {
    const std::size_t covered = std::min(n_keys, bias.key_bias.size());
    std::vector<double> row_bias(n_keys, 0.0);
    std::copy_n(bias.key_bias.begin(), covered, row_bias.begin());
    softmax_biased_into(logits, row_bias, probs);
  } else {
    // softmax with an all-zero bias is bitwise the unbiased softmax
    const std::vector<double> zero(n_keys, 0.0);
    softmax_biased_into(logits, zero, probs);
  }

  auto out = context.row(r).subspan(col0, d);
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < n_keys; ++i) {
    const auto vrow = v.row(i).subspan(col0, d);
    for (std::size_t j = 0; j < d; ++j) out[j] += probs[i] * vrow[j];
  }
  if (head_probs != nullptr) {
    auto dst = (*head_probs)[head].row(r);
    std::fill(dst.begin(), dst.end(), 0.0);
    std::copy(probs.begin(), probs.end(), dst.begin());
  }
}

void prepare_head_probs(std::vector<Matrix>* head_probs, std::size_t heads, std::size_t rows,
                        std::size_t cols) {
  if (head_probs == nullptr) return;
  head_probs->assign(heads, Matrix(rows, cols));
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  check_matmul(a, b);
  Matrix out(a.rows(), b.cols());
  const auto rows = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel for schedule(static) if (rows * static_cast<std::ptrdiff_t>(b.cols()) > 4096)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    matmul_row(a, b, static_cast<std::size_t>(r), out);
  }
  return out;
}

Matrix rms_norm(const Matrix& x, std::span<const double> gain, double eps) {
  if (gain.size() != x.cols()) throw Error("rms_norm: gain width mismatch");
  Matrix out(x.rows(), x.cols());
  const auto rows = static_cast<std::ptrdiff_t>(x.rows());
#pragma omp parallel for schedule(static) if (rows > 64)
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    rms_norm_row(x, gain, eps, static_cast<std::size_t>(r), out);
  }
  return out;
}

void gelu_inplace(Matrix& x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  for (double& v : x.values()) {
    v = 0.5 * v * (1.0 + std::tanh(c * (v + 0.044715 * v * v * v)));
  }
}

void causal_attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t offset,
                      AttentionShape shape, const AttentionBias& bias, Matrix& context,
                      std::vector<Matrix>* head_probs) {
  check_attention(q, k, v, offset, shape, context);
  prepare_head_probs(head_probs, shape.heads, q.rows(), offset + q.rows());
  const auto heads = static_cast<std::ptrdiff_t>(shape.heads);
  const auto rows = static_cast<std::ptrdiff_t>(q.rows());
#pragma omp parallel for collapse(2) schedule(dynamic, 8) if (heads * rows > 8)
  for (std::ptrdiff_t h = 0; h < heads; ++h) {
    for (std::ptrdiff_t r = 0; r < rows; ++r) {
      attend_row(q, k, v, offset, shape, bias, static_cast<std::size_t>(h),
                 static_cast<std::size_t>(r), context, head_probs);
    }
  }
}

namespace serial {

Matrix matmul(const Matrix& a, const Matrix& b) {
  check_matmul(a, b);
  Matrix out(a.rows(), b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) matmul_row(a, b, r, out);
  return out;
}

Matrix rms_norm(const Matrix& x, std::span<const double> gain, double eps) {
  if (gain.size() != x.cols()) throw Error("rms_norm: gain width mismatch");
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) rms_norm_row(x, gain, eps, r, out);
  return out;
}

void causal_attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t offset,
                      AttentionShape shape, const AttentionBias& bias, Matrix& context,
                      std::vector<Matrix>* head_probs) {
  check_attention(q, k, v, offset, shape, context);
  prepare_head_probs(head_probs, shape.heads, q.rows(), offset + q.rows());
  for (std::size_t h = 0; h < shape.heads; ++h) {
    for (std::size_t r = 0; r < q.rows(); ++r) {
      attend_row(q, k, v, offset, shape, bias, h, r, context, head_probs);
    }
  }
}

}  // namespace serial

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace kernels
}  // namespace guide
