#include "guide/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "guide/error.hpp"

namespace guide {

void ModelConfig::validate() const {
  if (n_layers == 0 || n_heads == 0 || head_dim == 0 || vocab == 0 || max_seq == 0) {
    throw Error("model config: all dimensions must be at least 1");
  }
  if (vocab < kVocabSize) {
    throw Error("model config: vocab must cover the " + std::to_string(kVocabSize) +
                " byte-level ids");
  }
  if (update_norm != UpdateNorm::post_o && update_norm != UpdateNorm::pre_o) {
    throw Error("model config: unknown update_norm");
  }
}

namespace {

Matrix gaussian(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = dist(rng);
  return m;
}

}  // namespace

Weights init_model(const ModelConfig& config) {
  config.validate();
  const std::size_t w = config.width();
  const double stddev = 1.0 / std::sqrt(static_cast<double>(w));
  std::mt19937_64 rng(config.init_seed);

  Weights weights;
  weights.config = config;
  weights.token_embedding = gaussian(rng, config.vocab, w, stddev);
  weights.layers.resize(config.n_layers);
  for (auto& layer : weights.layers) {
    layer.attn_gain.assign(w, 1.0);
    layer.wq = gaussian(rng, w, w, stddev);
    layer.wk = gaussian(rng, w, w, stddev);
    layer.wv = gaussian(rng, w, w, stddev);
    layer.wo = gaussian(rng, w, w, stddev);
    layer.mlp_gain.assign(w, 1.0);
    layer.w_in = gaussian(rng, w, config.mlp_width(), stddev);
    layer.w_out = gaussian(rng, config.mlp_width(), w, stddev);
  }
  weights.final_gain.assign(w, 1.0);
  weights.unembedding = gaussian(rng, w, config.vocab, stddev);
  return weights;
}

bool BiasSpec::applies_to_layer(std::size_t layer) const {
  return layers.empty() || std::find(layers.begin(), layers.end(), layer) != layers.end();
}

std::vector<bool> BiasSpec::head_mask(std::size_t n_heads) const {
  if (heads.empty()) return {};
  std::vector<bool> mask(n_heads, false);
  for (std::size_t h : heads) {
    if (h < n_heads) mask[h] = true;
  }
  return mask;
}

Vector BiasSpec::key_bias(std::size_t length) const {
  Vector bias(length, 0.0);
  for (const auto& term : terms) {
    for (std::size_t i = term.range.begin; i < std::min(term.range.end, length); ++i) {
      bias[i] += term.delta;
    }
  }
  return bias;
}

void BiasSpec::validate(std::size_t prompt_length, const ModelConfig& config) const {
  for (const auto& term : terms) {
    if (!std::isfinite(term.delta) || term.delta < 0.0) {
      throw Error("bias: delta must be finite and non-negative");
    }
    if (term.range.empty() || term.range.end > prompt_length) {
      throw Error("bias: range [" + std::to_string(term.range.begin) + ", " +
                  std::to_string(term.range.end) + ") invalid for a prompt of " +
                  std::to_string(prompt_length) + " tokens");
    }
  }
  for (std::size_t l : layers) {
    if (l >= config.n_layers) throw Error("bias: layer index " + std::to_string(l) + " out of range");
  }
  for (std::size_t h : heads) {
    if (h >= config.n_heads) throw Error("bias: head index " + std::to_string(h) + " out of range");
  }
}

BiasSpec BiasSpec::from_prompt(const TaggedPrompt& prompt) {
  BiasSpec spec;
  for (const auto& span : prompt.emphasis_spans) spec.terms.push_back({span.tokens, span.delta});
  return spec;
}

TraceLayer TraceLayer::from_parts(Matrix attention, Vector residual_norm, Vector update_norm) {
  const std::size_t s = residual_norm.size();
  if (attention.rows() != s || attention.cols() != s || update_norm.size() != s) {
    throw Error("trace layer: attention must be s x s with s-length norm vectors");
  }
  TraceLayer layer;
  layer.ratio.resize(s);
  for (std::size_t k = 0; k < s; ++k) {
    if (!std::isfinite(residual_norm[k]) || !std::isfinite(update_norm[k]) ||
        residual_norm[k] <= 0.0 || update_norm[k] <= 0.0) {
      throw Error("trace layer: norms must be finite and positive (position " +
                  std::to_string(k) + ")");
    }
    layer.ratio[k] = residual_norm[k] / update_norm[k];
  }
  layer.attention = std::move(attention);
  layer.residual_norm = std::move(residual_norm);
  layer.update_norm = std::move(update_norm);
  return layer;
}

ForwardTrace make_trace(const ModelConfig& config, std::size_t length, bool per_head) {
  ForwardTrace trace;
  trace.layers.resize(config.n_layers);
  for (auto& layer : trace.layers) {
    layer.attention = Matrix(length, length);
    layer.residual_norm.assign(length, 0.0);
    layer.update_norm.assign(length, 0.0);
    layer.ratio.assign(length, 0.0);
    if (per_head) layer.head_attention.assign(config.n_heads, Matrix(length, length));
  }
  return trace;
}

Session::Session(const Weights& weights, BiasSpec bias, std::size_t capacity)
    : weights_(&weights), bias_(std::move(bias)) {
  const auto& cfg = weights.config;
  capacity_ = capacity == 0 ? cfg.max_seq : std::min(capacity, cfg.max_seq);
  cache_.resize(cfg.n_layers);
  for (auto& layer : cache_) {
    layer.keys = Matrix(capacity_, cfg.width());
    layer.values = Matrix(capacity_, cfg.width());
  }
}

namespace {

void add_positions(Matrix& x, std::size_t offset) {
  const std::size_t w = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double pos = static_cast<double>(offset + r);
    auto row = x.row(r);
    for (std::size_t j = 0; j < w; j += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(j) / static_cast<double>(w));
      row[j] += std::sin(pos * freq);
      if (j + 1 < w) row[j + 1] += std::cos(pos * freq);
    }
  }
}

void add_inplace(Matrix& x, const Matrix& y) {
  auto dst = x.values();
  const auto src = y.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void row_norms(const Matrix& x, std::span<double> out) {
  for (std::size_t r = 0; r < x.rows(); ++r) out[r] = kernels::l2_norm(x.row(r));
}

}  // namespace

Matrix Session::extend(std::span<const TokenId> tokens, ForwardTrace* trace, bool per_head) {
  const auto& cfg = weights_->config;
  if (tokens.empty()) throw Error("forward: empty token sequence");
  if (length_ + tokens.size() > capacity_) {
    throw Error("forward: context of " + std::to_string(length_ + tokens.size()) +
                " tokens exceeds " + (capacity_ == cfg.max_seq ? "max_seq " : "session capacity ") +
                std::to_string(capacity_));
  }
  for (TokenId id : tokens) {
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab) {
      throw Error("forward: token id " + std::to_string(id) + " outside vocabulary");
    }
  }
  if (length_ == 0) {
    prompt_length_ = tokens.size();
    bias_.validate(prompt_length_, cfg);
    key_bias_ = bias_.key_bias(prompt_length_);
  }
  const std::size_t offset = length_;
  const std::size_t n = tokens.size();
  const std::size_t w = cfg.width();
  if (trace != nullptr &&
      (trace->n_layers() != cfg.n_layers || trace->length() < offset + n)) {
    throw Error("forward: trace not sized for this context");
  }

  Matrix x(n, w);
  const double embed_scale = std::sqrt(static_cast<double>(w));
  for (std::size_t r = 0; r < n; ++r) {
    const auto src = weights_->token_embedding.row(static_cast<std::size_t>(tokens[r]));
    auto dst = x.row(r);
    for (std::size_t j = 0; j < w; ++j) dst[j] = embed_scale * src[j];
  }
  add_positions(x, offset);

  kernels::AttentionBias attn_bias;
  attn_bias.heads = bias_.head_mask(cfg.n_heads);
  attn_bias.row_limit = bias_.decode_steps ? std::numeric_limits<std::size_t>::max() : prompt_length_;
  const kernels::AttentionShape shape{cfg.n_heads, cfg.head_dim};

  Vector residual_norm(n), update_norm(n);
  std::vector<Matrix> head_probs;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const auto& lw = weights_->layers[l];
    auto& cache = cache_[l];
    row_norms(x, residual_norm);

    const Matrix h = kernels::rms_norm(x, lw.attn_gain);
    const Matrix q = kernels::matmul(h, lw.wq);
    const Matrix k = kernels::matmul(h, lw.wk);
    const Matrix v = kernels::matmul(h, lw.wv);
    for (std::size_t r = 0; r < n; ++r) {
      std::copy_n(k.row(r).begin(), w, cache.keys.row(offset + r).begin());
      std::copy_n(v.row(r).begin(), w, cache.values.row(offset + r).begin());
    }

    attn_bias.key_bias = bias_.applies_to_layer(l) ? std::span<const double>(key_bias_)
                                                  : std::span<const double>();
    Matrix mixed(n, w);
    kernels::causal_attention(q, cache.keys, cache.values, offset, shape, attn_bias, mixed,
                              trace != nullptr ? &head_probs : nullptr);
    const Matrix update = kernels::matmul(mixed, lw.wo);
    row_norms(cfg.update_norm == UpdateNorm::post_o ? update : mixed, update_norm);
    add_inplace(x, update);

    Matrix hidden = kernels::matmul(kernels::rms_norm(x, lw.mlp_gain), lw.w_in);
    kernels::gelu_inplace(hidden);
    add_inplace(x, kernels::matmul(hidden, lw.w_out));

    if (trace != nullptr) {
      auto& tl = trace->layers[l];
      const double inv_heads = 1.0 / static_cast<double>(cfg.n_heads);
      for (std::size_t r = 0; r < n; ++r) {
        const std::size_t pos = offset + r;
        auto avg = tl.attention.row(pos);
        for (std::size_t i = 0; i <= pos; ++i) {
          double acc = 0.0;
          for (std::size_t hd = 0; hd < cfg.n_heads; ++hd) acc += head_probs[hd](r, i);
          avg[i] = acc * inv_heads;
        }
        tl.residual_norm[pos] = residual_norm[r];
        tl.update_norm[pos] = update_norm[r];
        tl.ratio[pos] = residual_norm[r] / update_norm[r];
        if (per_head && !tl.head_attention.empty()) {
          for (std::size_t hd = 0; hd < cfg.n_heads; ++hd) {
            std::copy_n(head_probs[hd].row(r).begin(), pos + 1,
                        tl.head_attention[hd].row(pos).begin());
          }
        }
      }
    }
  }

  length_ += n;
  return kernels::matmul(kernels::rms_norm(x, weights_->final_gain), weights_->unembedding);
}

ForwardResult forward(const Weights& weights, std::span<const TokenId> tokens,
                      const BiasSpec& bias, CaptureOptions capture) {
  Session session(weights, bias, tokens.size());
  ForwardResult result;
  if (capture.trace) {
    if (tokens.size() > weights.config.max_seq) {
      throw Error("forward: context of " + std::to_string(tokens.size()) +
                  " tokens exceeds max_seq " + std::to_string(weights.config.max_seq));
    }
    if (tokens.empty()) throw Error("forward: empty token sequence");
    result.trace = make_trace(weights.config, tokens.size(), capture.per_head);
    result.logits = session.extend(tokens, &*result.trace, capture.per_head);
  } else {
    result.logits = session.extend(tokens);
  }
  return result;
}

}  // namespace guide
