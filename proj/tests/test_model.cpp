#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "guide/error.hpp"
#include "guide/model.hpp"

using namespace guide;

namespace {

ModelConfig small_config(std::uint64_t seed = 7) {
  ModelConfig cfg;
  cfg.n_layers = 3;
  cfg.n_heads = 2;
  cfg.head_dim = 8;
  cfg.max_seq = 128;
  cfg.init_seed = seed;
  return cfg;
}

std::vector<TokenId> random_tokens(std::mt19937_64& rng, std::size_t n) {
  std::vector<TokenId> t(n);
  for (auto& id : t) id = static_cast<TokenId>(rng() % 256);
  return t;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("guide_test_" + name);
}

}  // namespace

TEST_CASE("init_model is deterministic in the seed") {
  const Weights a = init_model(small_config(1));
  const Weights b = init_model(small_config(1));
  const Weights c = init_model(small_config(2));
  CHECK(a == b);
  CHECK_FALSE(a.token_embedding == c.token_embedding);
  CHECK_FALSE(a.layers[0].wq == c.layers[0].wq);
}

TEST_CASE("init_model weight scale") {
  ModelConfig cfg;
  cfg.n_heads = 4;
  cfg.head_dim = 64;  // width 256
  cfg.n_layers = 1;
  const Weights w = init_model(cfg);
  const double target = 1.0 / std::sqrt(256.0);
  for (const Matrix* m : {&w.layers[0].wq, &w.layers[0].w_in, &w.unembedding}) {
    double sum = 0.0, sq = 0.0;
    for (double v : m->values()) {
      sum += v;
      sq += v * v;
    }
    const double n = static_cast<double>(m->size());
    const double stddev = std::sqrt(sq / n - (sum / n) * (sum / n));
    CHECK(std::abs(stddev - target) / target < 0.10);
  }
}

TEST_CASE("config validation") {
  ModelConfig cfg = small_config();
  cfg.n_heads = 0;
  CHECK_THROWS_AS(init_model(cfg), Error);
  cfg = small_config();
  cfg.vocab = 100;
  CHECK_THROWS_AS(init_model(cfg), Error);
}

TEST_CASE("zero delta is a bitwise no-op") {
  const Weights w = init_model(small_config());
  std::mt19937_64 rng(4);
  const auto tokens = random_tokens(rng, 40);
  BiasSpec zero;
  zero.terms.push_back({{5, 12}, 0.0});
  zero.terms.push_back({{20, 21}, 0.0});
  const auto plain = forward(w, tokens, {}, {true, true});
  const auto biased = forward(w, tokens, zero, {true, true});
  CHECK(plain.logits == biased.logits);
  for (std::size_t l = 0; l < w.config.n_layers; ++l) {
    CHECK(plain.trace->layers[l].attention == biased.trace->layers[l].attention);
    CHECK(plain.trace->layers[l].residual_norm == biased.trace->layers[l].residual_norm);
    CHECK(plain.trace->layers[l].update_norm == biased.trace->layers[l].update_norm);
  }
}

TEST_CASE("trace invariants") {
  const Weights w = init_model(small_config());
  std::mt19937_64 rng(5);
  const auto tokens = random_tokens(rng, 33);
  BiasSpec bias;
  bias.terms.push_back({{3, 9}, 2.0});
  const auto result = forward(w, tokens, bias, {true, true});
  REQUIRE(result.trace);
  const auto& trace = *result.trace;
  CHECK(trace.n_layers() == 3);
  CHECK(trace.length() == 33);
  for (const auto& layer : trace.layers) {
    for (std::size_t k = 0; k < 33; ++k) {
      double total = 0.0;
      for (std::size_t i = 0; i < 33; ++i) {
        if (i > k) CHECK(layer.attention(k, i) == 0.0);
        total += layer.attention(k, i);
        double head_sum = 0.0;
        for (const auto& h : layer.head_attention) head_sum += h(k, i);
        CHECK(std::abs(head_sum / 2.0 - layer.attention(k, i)) < 1e-15);
      }
      CHECK(std::abs(total - 1.0) < 1e-9);
      CHECK(layer.residual_norm[k] > 0.0);
      CHECK(layer.update_norm[k] > 0.0);
      CHECK(std::abs(layer.ratio[k] - layer.residual_norm[k] / layer.update_norm[k]) <=
            1e-12 * layer.ratio[k]);
    }
  }
  CHECK(result.logits.all_finite());
}

TEST_CASE("biased attention rows are the e^delta renormalisation of unbiased rows") {
  const Weights w = init_model(small_config(11));
  std::mt19937_64 rng(6);
  const auto tokens = random_tokens(rng, 30);
  const TokenRange span{4, 10};
  const double delta = 1.7;
  const auto plain = forward(w, tokens, {}, {true, true});
  for (std::size_t l = 0; l < w.config.n_layers; ++l) {
    // Biasing only layer l keeps every earlier layer, and so layer l's logits,
    // identical to the unbiased pass.
    BiasSpec bias;
    bias.terms.push_back({span, delta});
    bias.layers = {l};
    const auto biased = forward(w, tokens, bias, {true, true});
    for (std::size_t h = 0; h < w.config.n_heads; ++h) {
      const Matrix& p = plain.trace->layers[l].head_attention[h];
      const Matrix& b = biased.trace->layers[l].head_attention[h];
      for (std::size_t k = 0; k < tokens.size(); ++k) {
        double z = 0.0;
        for (std::size_t i = 0; i <= k; ++i) z += span.contains(i) ? std::exp(delta) * p(k, i) : p(k, i);
        for (std::size_t i = 0; i <= k; ++i) {
          const double expected = (span.contains(i) ? std::exp(delta) * p(k, i) : p(k, i)) / z;
          CHECK(std::abs(b(k, i) - expected) < 1e-10);
        }
      }
    }
  }
}

TEST_CASE("bias restricted by head") {
  const Weights w = init_model(small_config(12));
  std::mt19937_64 rng(8);
  const auto tokens = random_tokens(rng, 20);
  BiasSpec bias;
  bias.terms.push_back({{2, 6}, 3.0});
  bias.layers = {0};
  bias.heads = {1};
  const auto plain = forward(w, tokens, {}, {true, true});
  const auto biased = forward(w, tokens, bias, {true, true});
  CHECK(plain.trace->layers[0].head_attention[0] == biased.trace->layers[0].head_attention[0]);
  CHECK_FALSE(plain.trace->layers[0].head_attention[1] ==
              biased.trace->layers[0].head_attention[1]);
}

TEST_CASE("causality: later tokens never change earlier logits") {
  const Weights w = init_model(small_config(13));
  std::mt19937_64 rng(9);
  BiasSpec bias;
  bias.terms.push_back({{1, 4}, 2.0});
  for (int trial = 0; trial < 20; ++trial) {
    auto tokens = random_tokens(rng, 24);
    const std::size_t k = 5 + rng() % 17;
    const auto before = forward(w, tokens, bias);
    tokens[k + 1] = static_cast<TokenId>((tokens[k + 1] + 1 + rng() % 200) % 256);
    const auto after = forward(w, tokens, bias);
    for (std::size_t pos = 0; pos <= k; ++pos) {
      for (std::size_t v = 0; v < w.config.vocab; ++v) {
        REQUIRE(before.logits(pos, v) == after.logits(pos, v));
      }
    }
  }
}

TEST_CASE("incremental session matches the full forward pass") {
  const Weights w = init_model(small_config(14));
  std::mt19937_64 rng(10);
  const auto tokens = random_tokens(rng, 26);
  BiasSpec bias;
  bias.terms.push_back({{2, 7}, 1.5});
  const auto full = forward(w, tokens, bias);

  Session session(w, bias);
  const std::size_t prompt = 12;
  const Matrix head = session.extend(std::span(tokens).first(prompt));
  for (std::size_t r = 0; r < prompt; ++r) {
    for (std::size_t v = 0; v < w.config.vocab; ++v) CHECK(std::abs(head(r, v) - full.logits(r, v)) < 1e-12);
  }
  for (std::size_t pos = prompt; pos < tokens.size(); ++pos) {
    const Matrix row = session.extend(std::span(tokens).subspan(pos, 1));
    for (std::size_t v = 0; v < w.config.vocab; ++v) {
      REQUIRE(std::abs(row(0, v) - full.logits(pos, v)) < 1e-12);
    }
  }
  CHECK(session.length() == tokens.size());
}

TEST_CASE("forward errors") {
  ModelConfig cfg = small_config();
  cfg.max_seq = 16;
  const Weights w = init_model(cfg);
  std::vector<TokenId> too_long(17, 65);
  CHECK_THROWS_AS(forward(w, too_long), Error);
  CHECK_THROWS_AS(forward(w, std::vector<TokenId>{}), Error);
  CHECK_THROWS_AS(forward(w, std::vector<TokenId>{65, 400}), Error);

  const std::vector<TokenId> tokens(8, 65);
  BiasSpec out_of_range;
  out_of_range.terms.push_back({{6, 9}, 1.0});
  CHECK_THROWS_AS(forward(w, tokens, out_of_range), Error);
  BiasSpec negative;
  negative.terms.push_back({{1, 2}, -1.0});
  CHECK_THROWS_AS(forward(w, tokens, negative), Error);
  BiasSpec bad_layer;
  bad_layer.terms.push_back({{1, 2}, 1.0});
  bad_layer.layers = {9};
  CHECK_THROWS_AS(forward(w, tokens, bad_layer), Error);
}

TEST_CASE("update norm mode") {
  ModelConfig cfg = small_config(15);
  const Weights post = init_model(cfg);
  cfg.update_norm = UpdateNorm::pre_o;
  Weights pre = init_model(cfg);
  const std::vector<TokenId> tokens = tokenize("mode switch");
  const auto a = forward(post, tokens, {}, {true, false});
  const auto b = forward(pre, tokens, {}, {true, false});
  CHECK(a.logits == b.logits);
  CHECK(a.trace->layers[0].residual_norm == b.trace->layers[0].residual_norm);
  CHECK_FALSE(a.trace->layers[0].update_norm == b.trace->layers[0].update_norm);
}

TEST_CASE("weights file round trip") {
  const Weights w = init_model(small_config(21));
  const auto path = temp_path("roundtrip.gatw");
  save_weights(w, path);
  CHECK(load_weights(path) == w);
  CHECK(load_weights(path, w.config) == w);

  std::ifstream in(path, std::ios::binary);
  char magic[4];
  in.read(magic, 4);
  CHECK(std::string(magic, 4) == "GATW");
  // header + f64 payload
  const std::size_t wdt = w.config.width();
  const std::size_t per_layer = 2 * wdt + 4 * wdt * wdt + 2 * wdt * 4 * wdt;
  const std::size_t doubles = 2 * w.config.vocab * wdt + w.config.n_layers * per_layer + wdt;
  CHECK(std::filesystem::file_size(path) == 4 + 4 + 5 * 4 + 8 + 3 * 4 + 8 * doubles);
  std::filesystem::remove(path);
}

TEST_CASE("weights file errors") {
  const Weights w = init_model(small_config(22));
  const auto path = temp_path("corrupt.gatw");
  save_weights(w, path);
  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  const auto write = [&](const std::string& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << data;
  };

  SUBCASE("bad magic") {
    std::string bad = bytes;
    bad[0] = 'X';
    write(bad);
    CHECK_THROWS_AS(load_weights(path), Error);
  }
  SUBCASE("bad version") {
    std::string bad = bytes;
    bad[4] = 9;
    write(bad);
    CHECK_THROWS_AS(load_weights(path), Error);
  }
  SUBCASE("truncated") {
    write(bytes.substr(0, bytes.size() - 5));
    CHECK_THROWS_AS(load_weights(path), Error);
  }
  SUBCASE("trailing bytes") {
    write(bytes + "x");
    CHECK_THROWS_AS(load_weights(path), Error);
  }
  SUBCASE("different config") {
    write(bytes);
    ModelConfig other = w.config;
    other.n_layers = 2;
    CHECK_THROWS_AS(load_weights(path, other), Error);
  }
  CHECK_THROWS_AS(load_weights(temp_path("missing.gatw")), Error);
  std::filesystem::remove(path);
}
