#pragma once

// Dense numeric kernels. Every kernel that has a data-parallel loop comes in
// two flavours: the default (OpenMP when available) and serial::, which runs
// the same per-row routine in a plain loop. Both produce bitwise-identical
// results because the parallel split is only ever across independent rows.

#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "guide/matrix.hpp"

namespace guide {

// softmax(logits + bias). Output entries lie in (0,1] and sum to 1.
// Throws on length mismatch, empty input, or non-finite entries.
Vector softmax_biased(std::span<const double> logits, std::span<const double> bias);

namespace kernels {

// Unchecked softmax(logits + bias) written to out; all spans same length.
void softmax_biased_into(std::span<const double> logits, std::span<const double> bias,
                         std::span<double> out);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> x);

struct AttentionShape {
  std::size_t heads = 1;
  std::size_t head_dim = 1;
};

// Additive logit bias applied to key columns. A head is biased when
// `heads` is empty or heads[h] is true; query rows at absolute position
// >= row_limit are left unbiased.
struct AttentionBias {
  std::span<const double> key_bias;
  std::vector<bool> heads;
  std::size_t row_limit = std::numeric_limits<std::size_t>::max();

  bool applies(std::size_t head, std::size_t position) const {
    if (key_bias.empty() || position >= row_limit) return false;
    return heads.empty() || (head < heads.size() && heads[head]);
  }
};

// y = a * b
Matrix matmul(const Matrix& a, const Matrix& b);

// Row-wise RMS normalisation with per-column gain.
Matrix rms_norm(const Matrix& x, std::span<const double> gain, double eps = 1e-6);

void gelu_inplace(Matrix& x);

// Causal multi-head attention for query rows at absolute positions
// offset .. offset + q.rows() - 1. k and v may hold more rows than are
// visible (a preallocated cache); only rows up to each query's position are
// read. Writes the concatenated head outputs into `context` [q.rows() x H*d]
// and, when head_probs is non-null, the per-head probabilities
// [q.rows() x (offset + q.rows())] (entries past the causal frontier are zero).
void causal_attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t offset,
                      AttentionShape shape, const AttentionBias& bias, Matrix& context,
                      std::vector<Matrix>* head_probs);

namespace serial {

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix rms_norm(const Matrix& x, std::span<const double> gain, double eps = 1e-6);
void causal_attention(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t offset,
                      AttentionShape shape, const AttentionBias& bias, Matrix& context,
                      std::vector<Matrix>* head_probs);

}  // namespace serial

// Number of threads the parallel kernels may use (1 without OpenMP).
int max_threads();

}  // namespace kernels
}  // namespace guide
