#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "guide/kernels.hpp"
#include "guide/matrix.hpp"
#include "guide/tags.hpp"
#include "guide/tokenizer.hpp"

namespace guide {

// Which vector's norm is recorded as the attention update ‖U‖: the residual
// addend after the output projection, or the raw head mix before it.
enum class UpdateNorm : std::uint32_t { post_o = 0, pre_o = 1 };

// Pre-norm decoder with RMS normalisation and fixed sinusoidal positions.
struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t head_dim = 16;
  std::size_t vocab = kVocabSize;
  std::size_t max_seq = 1024;
  std::uint64_t init_seed = 0;
  UpdateNorm update_norm = UpdateNorm::post_o;

  std::size_t width() const noexcept { return n_heads * head_dim; }
  std::size_t mlp_width() const noexcept { return 4 * width(); }
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerWeights {
  Vector attn_gain;
  Matrix wq, wk, wv, wo;
  Vector mlp_gain;
  Matrix w_in, w_out;

  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

struct Weights {
  ModelConfig config;
  Matrix token_embedding;  // [V x W]
  std::vector<LayerWeights> layers;
  Vector final_gain;
  Matrix unembedding;  // [W x V]

  friend bool operator==(const Weights&, const Weights&) = default;
};

// Gaussian weights with standard deviation 1/sqrt(W), unit norm gains.
// Deterministic in config.init_seed.
Weights init_model(const ModelConfig& config);

// Weight file: "GATW", u32 version, config block, then little-endian f64
// tensors in declaration order.
void save_weights(const Weights& weights, const std::filesystem::path& path);
Weights load_weights(const std::filesystem::path& path);
// Same, but rejects a file whose config differs from `expected`.
Weights load_weights(const std::filesystem::path& path, const ModelConfig& expected);

struct BiasTerm {
  TokenRange range;
  double delta = 0.0;
};

// Additive Δ on pre-softmax attention logits at the key columns of each
// term's range.
struct BiasSpec {
  std::vector<BiasTerm> terms;
  std::vector<std::size_t> layers;  // empty: every layer
  std::vector<std::size_t> heads;   // empty: every head
  bool decode_steps = true;         // also bias queries generated after the prompt

  bool empty() const noexcept { return terms.empty(); }
  bool applies_to_layer(std::size_t layer) const;
  std::vector<bool> head_mask(std::size_t n_heads) const;
  // Per-key bias over the first `length` positions.
  Vector key_bias(std::size_t length) const;
  // Throws on negative/non-finite Δ, empty or out-of-range spans, or
  // layer/head indices the model does not have.
  void validate(std::size_t prompt_length, const ModelConfig& config) const;

  // One term per emphasis span, using each span's resolved Δ.
  static BiasSpec from_prompt(const TaggedPrompt& prompt);
};

// Per-layer quantities consumed by the attention-flow metrics.
struct TraceLayer {
  Matrix attention;      // head-averaged A, [s x s], lower-triangular
  Vector residual_norm;  // ‖E_k‖ entering the layer
  Vector update_norm;    // ‖U_k‖ added by the attention branch
  Vector ratio;          // residual_norm / update_norm
  std::vector<Matrix> head_attention;  // per head, only with CaptureOptions::per_head

  // Builds a layer from hand-set parts, computing the ratio. Throws on shape
  // mismatch or non-positive/non-finite norms.
  static TraceLayer from_parts(Matrix attention, Vector residual_norm, Vector update_norm);

  std::size_t length() const noexcept { return residual_norm.size(); }
};

struct ForwardTrace {
  std::vector<TraceLayer> layers;

  std::size_t length() const noexcept { return layers.empty() ? 0 : layers.front().length(); }
  std::size_t n_layers() const noexcept { return layers.size(); }
};

struct CaptureOptions {
  bool trace = false;
  bool per_head = false;
};

struct ForwardResult {
  Matrix logits;  // [s x V]
  std::optional<ForwardTrace> trace;
};

// Incremental forward pass with a key/value cache. The cache holds unbiased
// keys; the Δ is added per query row, so one cache serves any bias.
class Session {
 public:
  // `capacity` bounds the context this session can hold (0: max_seq).
  explicit Session(const Weights& weights, BiasSpec bias = {}, std::size_t capacity = 0);

  // Runs `tokens` after the current context and returns their logits. The
  // first call fixes the prompt length that the bias refers to. When
  // `trace` is non-null it must have been sized by make_trace for the full
  // context; rows for the new positions are filled in.
  Matrix extend(std::span<const TokenId> tokens, ForwardTrace* trace = nullptr,
                bool per_head = false);

  std::size_t length() const noexcept { return length_; }
  std::size_t prompt_length() const noexcept { return prompt_length_; }
  const Weights& weights() const noexcept { return *weights_; }

 private:
  struct LayerCache {
    Matrix keys;
    Matrix values;
  };

  const Weights* weights_;
  BiasSpec bias_;
  Vector key_bias_;
  std::vector<LayerCache> cache_;
  std::size_t capacity_ = 0;
  std::size_t length_ = 0;
  std::size_t prompt_length_ = 0;
};

// Zero-filled trace for a context of `length` positions.
ForwardTrace make_trace(const ModelConfig& config, std::size_t length, bool per_head);

// Full forward over `tokens`. Δ = 0 terms are a bitwise no-op.
ForwardResult forward(const Weights& weights, std::span<const TokenId> tokens,
                      const BiasSpec& bias = {}, CaptureOptions capture = {});

}  // namespace guide
