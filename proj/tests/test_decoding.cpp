#include <doctest.h>

#include <cmath>
#include <random>

#include <json.hpp>

#include "guide/decoding.hpp"
#include "guide/error.hpp"

using namespace guide;

namespace {

Weights toy(std::uint64_t seed = 11) {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.head_dim = 8;
  cfg.max_seq = 256;
  cfg.init_seed = seed;
  return init_model(cfg);
}

std::string random_text(std::mt19937_64& rng, std::size_t n) {
  static const std::string alphabet = "abcdefghijklmnopqrstuvwxyz ,.";
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s.push_back(alphabet[rng() % alphabet.size()]);
  return s;
}

}  // namespace

TEST_CASE("counter_uniform is a pure function of (seed, step)") {
  CHECK(counter_uniform(5, 9) == counter_uniform(5, 9));
  CHECK(counter_uniform(5, 9) != counter_uniform(5, 10));
  CHECK(counter_uniform(5, 9) != counter_uniform(6, 9));
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const double u = counter_uniform(i * 7919, i);
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("generation is deterministic for a given seed") {
  const Weights w = toy();
  const auto prompt = parse_tags("Summarize: <!!->the cat sat<-!!> on the mat.");
  for (auto mode : {SamplingMode::greedy, SamplingMode::multinomial}) {
    GenerationParams params;
    params.mode = mode;
    params.seed = 42;
    params.max_tokens = 20;
    params.stop_tokens.clear();
    const auto a = decode(w, prompt, params, true);
    const auto b = decode(w, prompt, params, true);
    CHECK(a.tokens == b.tokens);
    CHECK(a.probabilities == b.probabilities);
    CHECK(a.tokens.size() == 20);
    for (double p : a.probabilities) {
      CHECK(p > 0.0);
      CHECK(p <= 1.0);
    }
  }
}

TEST_CASE("zero-delta spans generate exactly what an unbiased run generates") {
  const Weights w = toy();
  ParseOptions options;
  options.deltas.set(1, 0.0);
  options.deltas.set(2, 0.0);
  const auto prompt = parse_tags("a <!->quiet<-!> b <!!->loud<-!!> c", options);
  GenerationParams params;
  params.mode = SamplingMode::multinomial;
  params.seed = 3;
  params.max_tokens = 24;
  const auto biased = decode(w, prompt, params, true);
  const auto plain = decode(w, prompt, params, false);
  CHECK(biased.tokens == plain.tokens);
  CHECK(biased.probabilities == plain.probabilities);
}

TEST_CASE("near-zero temperature multinomial equals greedy") {
  const Weights w = toy();
  std::mt19937_64 rng(21);
  for (int i = 0; i < 100; ++i) {
    const auto prompt = parse_tags(random_text(rng, 5 + rng() % 30));
    GenerationParams greedy;
    greedy.max_tokens = 6;
    greedy.stop_tokens.clear();
    GenerationParams cold = greedy;
    cold.mode = SamplingMode::multinomial;
    cold.temperature = 1e-6;
    cold.seed = static_cast<std::uint64_t>(i);
    REQUIRE(decode(w, prompt, greedy, false).tokens == decode(w, prompt, cold, false).tokens);
  }
}

TEST_CASE("cached decoding matches recomputing the full forward") {
  const Weights w = toy();
  const auto prompt = parse_tags("Keep <!!!->this format<-!!!> please.");
  const BiasSpec bias = BiasSpec::from_prompt(prompt);
  auto context = prompt.tokens();
  Session session(w, bias, context.size() + 12);
  Matrix logits = session.extend(context);
  for (int step = 0; step < 12; ++step) {
    const auto full = forward(w, context, bias);
    const auto cached = logits.row(logits.rows() - 1);
    const auto fresh = full.logits.row(full.logits.rows() - 1);
    double worst = 0.0;
    for (std::size_t v = 0; v < cached.size(); ++v) worst = std::max(worst, std::abs(cached[v] - fresh[v]));
    CHECK(worst < 1e-12);
    const auto pick = [](std::span<const double> r) {
      return std::max_element(r.begin(), r.end()) - r.begin();
    };
    CHECK(pick(cached) == pick(fresh));
    const TokenId next = static_cast<TokenId>(pick(cached));
    context.push_back(next);
    const TokenId one[] = {next};
    logits = session.extend(one);
  }
}

TEST_CASE("decode-step query rows keep the bias identity") {
  const Weights w = toy();
  const auto prompt = parse_tags("<!!->red<-!!> green blue");
  const auto tokens = prompt.tokens();
  const TokenRange span = prompt.emphasis_spans[0].tokens;
  const double delta = prompt.emphasis_spans[0].delta;
  const std::size_t n = tokens.size() + 1;
  const TokenId next[] = {static_cast<TokenId>('x')};

  for (std::size_t layer = 0; layer < w.config.n_layers; ++layer) {
    BiasSpec bias{{{span, delta}}, {layer}, {}, true};
    Session biased(w, bias, n);
    Session plain(w, BiasSpec{}, n);
    ForwardTrace tb = make_trace(w.config, n, true);
    ForwardTrace tp = make_trace(w.config, n, true);
    biased.extend(tokens, &tb, true);
    plain.extend(tokens, &tp, true);
    biased.extend(next, &tb, true);
    plain.extend(next, &tp, true);
    for (std::size_t h = 0; h < w.config.n_heads; ++h) {
      const auto row_b = tb.layers[layer].head_attention[h].row(n - 1);
      const auto row_p = tp.layers[layer].head_attention[h].row(n - 1);
      double norm = 0.0;
      for (std::size_t i = 0; i < n; ++i) norm += row_p[i] * (span.contains(i) ? std::exp(delta) : 1.0);
      for (std::size_t i = 0; i < n; ++i) {
        const double expect = row_p[i] * (span.contains(i) ? std::exp(delta) : 1.0) / norm;
        CHECK(std::abs(row_b[i] - expect) < 1e-10);
      }
    }
  }

  // With decode_steps off the generated row is unbiased (layer 0 inputs match).
  BiasSpec off = BiasSpec::from_prompt(prompt);
  off.decode_steps = false;
  Session biased(w, off, n);
  Session plain(w, BiasSpec{}, n);
  ForwardTrace tb = make_trace(w.config, n, false);
  ForwardTrace tp = make_trace(w.config, n, false);
  biased.extend(tokens, &tb);
  plain.extend(tokens, &tp);
  biased.extend(next, &tb);
  plain.extend(next, &tp);
  for (std::size_t i = 0; i < n; ++i) {
    CHECK(tb.layers[0].attention(n - 1, i) == tp.layers[0].attention(n - 1, i));
  }
}

TEST_CASE("per-step probabilities multiply to the post-hoc sequence probability") {
  const Weights w = toy();
  const auto prompt = parse_tags("Tell me <!!->about rivers<-!!> in spring.");
  GenerationParams params;
  params.mode = SamplingMode::multinomial;
  params.temperature = 1.3;
  params.seed = 8;
  params.max_tokens = 16;
  params.stop_tokens.clear();
  const auto record = decode(w, prompt, params, true);

  auto context = prompt.tokens();
  const std::size_t p = context.size();
  context.insert(context.end(), record.tokens.begin(), record.tokens.end());
  const auto full = forward(w, context, BiasSpec::from_prompt(prompt));
  double log_posthoc = 0.0;
  double log_steps = 0.0;
  for (std::size_t t = 0; t < record.tokens.size(); ++t) {
    const Vector probs = temperature_probs(full.logits.row(p - 1 + t), params.temperature);
    log_posthoc += std::log(probs[static_cast<std::size_t>(record.tokens[t])]);
    log_steps += std::log(record.probabilities[t]);
  }
  CHECK(std::abs(std::exp(log_steps) - std::exp(log_posthoc)) <=
        1e-10 * std::exp(log_posthoc));
  CHECK(std::abs(log_steps - log_posthoc) < 1e-10);
}

TEST_CASE("stop tokens end generation") {
  const Weights w = toy();
  const auto prompt = parse_tags("abc");
  GenerationParams params;
  params.max_tokens = 10;
  params.stop_tokens.clear();
  const auto free_run = decode(w, prompt, params, false);
  params.stop_tokens = {free_run.tokens[2]};
  const auto stopped = decode(w, prompt, params, false);
  std::size_t first = 0;
  while (free_run.tokens[first] != free_run.tokens[2]) ++first;
  CHECK(stopped.tokens.size() == first + 1);
  CHECK(stopped.tokens.back() == free_run.tokens[2]);
}

TEST_CASE("influence trajectory follows the stride") {
  const Weights w = toy();
  const auto prompt = parse_tags("Read <?->the title<-?> twice.");
  GenerationParams params;
  params.max_tokens = 10;
  params.stop_tokens.clear();
  params.track_influence = true;
  params.influence_stride = 3;
  const auto record = decode(w, prompt, params, false);
  REQUIRE(record.influence.size() == record.tokens.size());
  for (std::size_t i = 0; i < record.influence.size(); ++i) {
    CHECK(record.influence[i].has_value() == ((i + 1) % 3 == 0));
    if (record.influence[i]) {
      CHECK(*record.influence[i] > 0.0);
      CHECK(*record.influence[i] <= 1.0);
    }
  }
  const auto j = nlohmann::json::parse(to_json(record));
  CHECK(j["influence"].size() == record.tokens.size());
  CHECK(j["influence"][0].is_null());
  CHECK(j["tokens"].size() == record.tokens.size());
  CHECK(j["probabilities"].size() == record.tokens.size());
}

TEST_CASE("decode errors") {
  const Weights w = toy();
  GenerationParams params;
  CHECK_THROWS_AS(decode(w, parse_tags(""), params, false), Error);
  params.max_tokens = 300;
  CHECK_THROWS_AS(decode(w, parse_tags("abc"), params, false), Error);
  params.max_tokens = 0;
  CHECK_THROWS_AS(decode(w, parse_tags("abc"), params, false), Error);
  params.max_tokens = 4;
  params.temperature = 0.0;
  CHECK_THROWS_AS(decode(w, parse_tags("abc"), params, false), Error);
  params.temperature = std::nan("");
  CHECK_THROWS_AS(decode(w, parse_tags("abc"), params, false), Error);
  params.temperature = 1.0;
  params.track_influence = true;
  CHECK_THROWS_AS(decode(w, parse_tags("abc"), params, false), Error);
  CHECK_THROWS_AS(parse_sampling_mode("beam"), Error);
}
