#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "guide/error.hpp"
#include "guide/model.hpp"

namespace guide {

namespace {

constexpr std::array<char, 4> kMagic{'G', 'A', 'T', 'W'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kNormRms = 1;
constexpr std::uint32_t kPositionsSinusoidal = 1;

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw Error("cannot open " + path.string() + " for writing");
  }

  void bytes(const char* data, std::size_t n) { out_.write(data, static_cast<std::streamsize>(n)); }

  void u32(std::uint32_t v) { little_endian(v); }
  void u64(std::uint64_t v) { little_endian(v); }
  void f64(double v) { little_endian(std::bit_cast<std::uint64_t>(v)); }

  void tensor(std::span<const double> values) {
    for (double v : values) f64(v);
  }

  void finish(const std::filesystem::path& path) {
    out_.flush();
    if (!out_) throw Error("write failed for " + path.string());
  }

 private:
  template <typename T>
  void little_endian(T v) {
    std::array<char, sizeof(T)> buf{};
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    }
    bytes(buf.data(), buf.size());
  }

  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open weights file " + path.string());
    data_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  void bytes(char* dst, std::size_t n) {
    if (pos_ + n > data_.size()) {
      throw Error("weights file truncated at byte " + std::to_string(data_.size()));
    }
    std::memcpy(dst, data_.data() + pos_, n);
    pos_ += n;
  }

  std::uint32_t u32() { return little_endian<std::uint32_t>(); }
  std::uint64_t u64() { return little_endian<std::uint64_t>(); }
  double f64() { return std::bit_cast<double>(little_endian<std::uint64_t>()); }

  void tensor(std::span<double> values) {
    for (double& v : values) v = f64();
  }

  bool at_end() const noexcept { return pos_ == data_.size(); }

 private:
  template <typename T>
  T little_endian() {
    std::array<char, sizeof(T)> buf{};
    bytes(buf.data(), buf.size());
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(static_cast<unsigned char>(buf[i])) << (8 * i);
    }
    return v;
  }

  std::vector<char> data_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_weights(const Weights& weights, const std::filesystem::path& path) {
  const auto& cfg = weights.config;
  Writer out(path);
  out.bytes(kMagic.data(), kMagic.size());
  out.u32(kVersion);
  out.u32(static_cast<std::uint32_t>(cfg.n_layers));
  out.u32(static_cast<std::uint32_t>(cfg.n_heads));
  out.u32(static_cast<std::uint32_t>(cfg.head_dim));
  out.u32(static_cast<std::uint32_t>(cfg.vocab));
  out.u32(static_cast<std::uint32_t>(cfg.max_seq));
  out.u64(cfg.init_seed);
  out.u32(kNormRms);
  out.u32(kPositionsSinusoidal);
  out.u32(static_cast<std::uint32_t>(cfg.update_norm));

  out.tensor(weights.token_embedding.values());
  for (const auto& layer : weights.layers) {
    out.tensor(layer.attn_gain);
    out.tensor(layer.wq.values());
    out.tensor(layer.wk.values());
    out.tensor(layer.wv.values());
    out.tensor(layer.wo.values());
    out.tensor(layer.mlp_gain);
    out.tensor(layer.w_in.values());
    out.tensor(layer.w_out.values());
  }
  out.tensor(weights.final_gain);
  out.tensor(weights.unembedding.values());
  out.finish(path);
}

Weights load_weights(const std::filesystem::path& path) {
  Reader in(path);
  std::array<char, 4> magic{};
  in.bytes(magic.data(), magic.size());
  if (magic != kMagic) throw Error("not a weights file (bad magic): " + path.string());
  const std::uint32_t version = in.u32();
  if (version != kVersion) {
    throw Error("unsupported weights file version " + std::to_string(version));
  }

  ModelConfig cfg;
  cfg.n_layers = in.u32();
  cfg.n_heads = in.u32();
  cfg.head_dim = in.u32();
  cfg.vocab = in.u32();
  cfg.max_seq = in.u32();
  cfg.init_seed = in.u64();
  if (in.u32() != kNormRms || in.u32() != kPositionsSinusoidal) {
    throw Error("weights file uses an unsupported norm or positional encoding");
  }
  const std::uint32_t update_norm = in.u32();
  if (update_norm > 1) throw Error("weights file has unknown update_norm");
  cfg.update_norm = static_cast<UpdateNorm>(update_norm);
  cfg.validate();

  const std::size_t w = cfg.width();
  Weights weights;
  weights.config = cfg;
  weights.token_embedding = Matrix(cfg.vocab, w);
  in.tensor(weights.token_embedding.values());
  weights.layers.resize(cfg.n_layers);
  for (auto& layer : weights.layers) {
    layer.attn_gain.resize(w);
    in.tensor(layer.attn_gain);
    for (Matrix* m : {&layer.wq, &layer.wk, &layer.wv, &layer.wo}) {
      *m = Matrix(w, w);
      in.tensor(m->values());
    }
    layer.mlp_gain.resize(w);
    in.tensor(layer.mlp_gain);
    layer.w_in = Matrix(w, cfg.mlp_width());
    in.tensor(layer.w_in.values());
    layer.w_out = Matrix(cfg.mlp_width(), w);
    in.tensor(layer.w_out.values());
  }
  weights.final_gain.resize(w);
  in.tensor(weights.final_gain);
  weights.unembedding = Matrix(w, cfg.vocab);
  in.tensor(weights.unembedding.values());
  if (!in.at_end()) throw Error("weights file has trailing bytes: " + path.string());
  return weights;
}

Weights load_weights(const std::filesystem::path& path, const ModelConfig& expected) {
  Weights weights = load_weights(path);
  if (!(weights.config == expected)) {
    throw Error("weights file " + path.string() + " was saved for a different model config");
  }
  return weights;
}

}  // namespace guide
