#include "guide/harness.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "guide/error.hpp"

namespace guide {

namespace templates {

const std::string_view kSummarizeFrench = "Summarize in French\n\n{context}\n";

const std::string_view kNeedleQuestion =
    "<question>\n"
    "Your objective is to answer the following question based on the context:\n"
    "\n"
    "{question}\n"
    "\n"
    "Don't give information outside the document or repeat our findings\n"
    "</question>\n"
    "\n"
    "{context with needle}\n"
    "\n"
    "<question>\n"
    "Your objective is to answer the following question based on the context:\n"
    "\n"
    "{question}\n"
    "\n"
    "Don't give information outside the document or repeat our findings\n"
    "</question>\n";

const std::string_view kJsonSchema =
    "You are an assistant designed to provide information in JSON format.\n"
    "I will give you a story, and you need to extract and return specific details from the "
    "story.\n"
    "Do not output anything else than the JSON.\n"
    "Your response should follow exactly this template:\n"
    "\n"
    "<schema>\n"
    "{\n"
    "    \"title\": \"title of the story (string)\",\n"
    "    \"genre\": string,\n"
    "    \"characters\":\n"
    "        [\n"
    "            {\n"
    "                \"name\": string,\n"
    "                \"description\": string. If not available set it to none\n"
    "            }\n"
    "        ] (one dict per character),\n"
    "    \"author\": \"the author of the story. If not available, set it to None\",\n"
    "    \"summary\": \"a brief summary of the story. Do not write more than 50 words\",\n"
    "    \"date\": \"when the story was released (string)\",\n"
    "    \"scenery\": \"where the story takes place (string)\",\n"
    "}\n"
    "\n"
    "</schema>\n"
    "\n"
    "{content}\n";

}  // namespace templates

std::string fill_placeholder(std::string text, std::string_view placeholder,
                             std::string_view value) {
  if (placeholder.empty()) return text;
  std::size_t pos = 0;
  while ((pos = text.find(placeholder, pos)) != std::string::npos) {
    text.replace(pos, placeholder.size(), value);
    pos += value.size();
  }
  return text;
}

std::string synthetic_filler(std::size_t length, std::uint64_t seed) {
  static constexpr std::string_view kWords[] = {
      "the",    "river",  "market", "quietly", "north",   "village", "winter", "lamp",
      "opened", "across", "stone",  "garden",  "letters", "slowly",  "harbor", "clock",
      "walked", "under",  "bright", "bridge",  "morning", "old",     "road",   "paper",
      "carried", "small", "window", "evening", "through", "field",   "wooden", "bell"};
  constexpr std::size_t kWordCount = std::size(kWords);
  if (length == 0) return {};

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, kWordCount - 1);
  std::uniform_int_distribution<int> sentence_len(5, 12);
  std::string text;
  text.reserve(length + 64);
  while (text.size() < length) {
    const int words = sentence_len(rng);
    for (int w = 0; w < words; ++w) {
      std::string word(kWords[pick(rng)]);
      if (w == 0) word[0] = static_cast<char>(word[0] - 'a' + 'A');
      text += word;
      text += (w + 1 == words) ? ". " : " ";
    }
  }
  text.resize(length);
  text.back() = '.';
  return text;
}

NeedlePlacement insert_needle(std::string_view filler, std::string_view needle, double quantile) {
  if (!(quantile >= 0.0 && quantile <= 1.0)) throw Error("needle quantile must lie in [0, 1]");
  std::vector<std::size_t> boundaries;
  for (std::size_t i = 0; i < filler.size(); ++i) {
    if (filler[i] == '.') boundaries.push_back(i + 1);
  }
  if (boundaries.empty()) throw Error("filler has no period to insert the needle after");

  const auto target = static_cast<std::size_t>(std::llround(quantile * static_cast<double>(filler.size())));
  auto it = std::upper_bound(boundaries.begin(), boundaries.end(), target);
  const std::size_t at = it == boundaries.begin() ? boundaries.front() : *std::prev(it);

  NeedlePlacement placement;
  placement.text.reserve(filler.size() + needle.size());
  placement.text.append(filler.substr(0, at));
  placement.text.append(needle);
  placement.text.append(filler.substr(at));
  placement.needle = {at, at + needle.size()};
  return placement;
}

std::vector<ResultRow> ResultTable::select(std::string_view metric) const {
  std::vector<ResultRow> out;
  std::copy_if(rows.begin(), rows.end(), std::back_inserter(out),
               [&](const ResultRow& r) { return r.metric == metric; });
  return out;
}

std::string csv_field(std::string_view value) {
  if (value.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(value);
  std::string quoted = "\"";
  for (char c : value) {
    if (c == '"') quoted += '"';
    quoted += c;
  }
  quoted += '"';
  return quoted;
}

void write_csv(std::ostream& out, const ResultTable& table) {
  const auto old_precision = out.precision(17);
  out << "context_length,position_quantile,delta,seed,metric,value\n";
  for (const auto& r : table.rows) {
    out << r.context_length << ',' << r.position_quantile << ',' << r.delta << ',' << r.seed
        << ',' << csv_field(r.metric) << ',' << r.value << '\n';
  }
  out.precision(old_precision);
}

std::string to_json(const ResultTable& table, int indent) {
  auto rows = nlohmann::ordered_json::array();
  for (const auto& r : table.rows) {
    nlohmann::ordered_json j;
    j["context_length"] = r.context_length;
    j["position_quantile"] = r.position_quantile;
    j["delta"] = r.delta;
    j["seed"] = r.seed;
    j["metric"] = r.metric;
    j["value"] = r.value;
    rows.push_back(std::move(j));
  }
  nlohmann::ordered_json j;
  j["rows"] = std::move(rows);
  return j.dump(indent);
}

void NeedleSweepSpec::validate() const {
  if (context_lengths.empty() || quantiles.empty() || deltas.empty() || seeds.empty() ||
      metrics.empty()) {
    throw Error("needle sweep: every grid must be non-empty");
  }
  if (needle.empty()) throw Error("needle sweep: empty needle");
  for (double q : quantiles) {
    if (!(q >= 0.0 && q <= 1.0)) throw Error("needle sweep: quantiles must lie in [0, 1]");
  }
  for (double d : deltas) {
    if (!std::isfinite(d) || d < 0.0) throw Error("needle sweep: deltas must be non-negative");
  }
  for (std::size_t len : context_lengths) {
    if (len == 0 || len > model.max_seq) {
      throw Error("needle sweep: context length " + std::to_string(len) +
                  " outside [1, max_seq]");
    }
    if (needle.size() >= len) {
      throw Error("needle sweep: needle longer than context length " + std::to_string(len));
    }
  }
  model.validate();
}

namespace {

struct SweepCell {
  std::size_t seed_index;
  std::size_t length_index;
  std::size_t quantile_index;
  std::size_t delta_index;
};

std::string haystack(const NeedleSweepSpec& spec, std::size_t length, std::uint64_t seed) {
  if (!spec.filler) return synthetic_filler(length, seed);
  if (spec.filler->size() < length) {
    throw Error("needle sweep: filler corpus has " + std::to_string(spec.filler->size()) +
                " bytes, fewer than context length " + std::to_string(length));
  }
  return spec.filler->substr(0, length);
}

}  // namespace

ResultTable run_needle_sweep(const NeedleSweepSpec& spec) {
  spec.validate();

  std::vector<Weights> models;
  models.reserve(spec.seeds.size());
  for (std::uint64_t seed : spec.seeds) {
    ModelConfig cfg = spec.model;
    cfg.init_seed = seed;
    models.push_back(init_model(cfg));
  }

  // Prompts depend on (seed, length, quantile) only; build them up front so
  // errors surface before any parallel work.
  struct Prompt {
    std::vector<TokenId> tokens;
    TokenRange needle;
  };
  const std::size_t nq = spec.quantiles.size();
  const std::size_t nl = spec.context_lengths.size();
  std::vector<Prompt> prompts(spec.seeds.size() * nl * nq);
  for (std::size_t si = 0; si < spec.seeds.size(); ++si) {
    for (std::size_t li = 0; li < nl; ++li) {
      const std::string filler = haystack(spec, spec.context_lengths[li], spec.seeds[si]);
      for (std::size_t qi = 0; qi < nq; ++qi) {
        const NeedlePlacement placed = insert_needle(filler, spec.needle, spec.quantiles[qi]);
        std::string text;
        std::size_t shift = 0;
        if (spec.use_template) {
          const std::string_view tmpl = templates::kNeedleQuestion;
          const std::string_view slot = "{context with needle}";
          const std::size_t slot_pos = tmpl.find(slot);
          const std::string head =
              fill_placeholder(std::string(tmpl.substr(0, slot_pos)), "{question}", spec.question);
          const std::string tail = fill_placeholder(std::string(tmpl.substr(slot_pos + slot.size())),
                                                    "{question}", spec.question);
          text = head + placed.text + tail;
          shift = tokenize(head).size();
        } else {
          text = placed.text + spec.question;
        }
        Prompt& p = prompts[(si * nl + li) * nq + qi];
        p.tokens = tokenize(text);
        p.needle = {placed.needle.begin + shift, placed.needle.end + shift};
        if (p.tokens.size() > spec.model.max_seq) {
          throw Error("needle sweep: prompt of " + std::to_string(p.tokens.size()) +
                      " tokens exceeds max_seq");
        }
      }
    }
  }

  std::vector<SweepCell> cells;
  for (std::size_t si = 0; si < spec.seeds.size(); ++si)
    for (std::size_t li = 0; li < nl; ++li)
      for (std::size_t qi = 0; qi < nq; ++qi)
        for (std::size_t di = 0; di < spec.deltas.size(); ++di) cells.push_back({si, li, qi, di});

  const std::size_t per_cell = spec.metrics.size();
  ResultTable table;
  table.rows.resize(cells.size() * per_cell);
  const auto n_cells = static_cast<std::ptrdiff_t>(cells.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t c = 0; c < n_cells; ++c) {
    const SweepCell& cell = cells[static_cast<std::size_t>(c)];
    const Prompt& prompt = prompts[(cell.seed_index * nl + cell.length_index) * nq + cell.quantile_index];
    const double delta = spec.deltas[cell.delta_index];
    BiasSpec bias;
    bias.terms.push_back({prompt.needle, delta});
    const auto result =
        forward(models[cell.seed_index], prompt.tokens, bias, CaptureOptions{true, false});
    for (std::size_t m = 0; m < per_cell; ++m) {
      ResultRow& row = table.rows[static_cast<std::size_t>(c) * per_cell + m];
      row.context_length = spec.context_lengths[cell.length_index];
      row.position_quantile = spec.quantiles[cell.quantile_index];
      row.delta = delta;
      row.seed = spec.seeds[cell.seed_index];
      row.metric = std::string(to_string(spec.metrics[m]));
      row.value = compute_map(*result.trace, prompt.needle, spec.metrics[m]).summary;
    }
  }
  return table;
}

ResultTable run_delta_sweep(const Weights& weights, const TaggedPrompt& prompt,
                            const std::vector<double>& deltas, MetricVariant variant) {
  if (deltas.empty()) throw Error("delta sweep: empty delta grid");
  if (prompt.emphasis_spans.empty()) throw Error("delta sweep: prompt has no emphasis span");
  std::vector<TokenRange> measured;
  for (const auto& q : prompt.query_spans) measured.push_back(q.tokens);
  if (measured.empty()) {
    for (const auto& e : prompt.emphasis_spans) measured.push_back(e.tokens);
  }
  const auto tokens = prompt.tokens();
  const double position =
      static_cast<double>(measured.front().begin) / static_cast<double>(tokens.size());

  ResultTable table;
  for (double delta : deltas) {
    BiasSpec bias;
    for (const auto& e : prompt.emphasis_spans) bias.terms.push_back({e.tokens, delta});
    const auto result = forward(weights, tokens, bias, CaptureOptions{true, false});
    const InfluenceMap map = compute_map(*result.trace, measured, variant);
    for (std::size_t l = 0; l < map.values.rows(); ++l) {
      ResultRow row;
      row.context_length = tokens.size();
      row.position_quantile = position;
      row.delta = delta;
      row.seed = weights.config.init_seed;
      row.metric = std::string(to_string(variant)) + "/layer" + std::to_string(l);
      row.value = map.values(l, tokens.size() - 1);
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

double parse_number(const std::string& text, std::size_t line_no) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size() || !std::isfinite(v)) {
    throw Error("samples CSV line " + std::to_string(line_no) + ": bad number '" + text + "'");
  }
  return v;
}

}  // namespace

std::map<std::string, std::vector<StatSample>> read_samples_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error("samples CSV is empty");
  const auto header = split_csv_line(line);
  const auto column = [&](std::string_view name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    return std::nullopt;
  };
  const auto score_col = column("score");
  const auto label_col = column("label");
  const auto metric_col = column("metric");
  if (!score_col || !label_col) throw Error("samples CSV needs 'score' and 'label' columns");

  std::map<std::string, std::vector<StatSample>> samples;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    const std::size_t needed = std::max({*score_col, *label_col, metric_col.value_or(0)}) + 1;
    if (fields.size() < needed) {
      throw Error("samples CSV line " + std::to_string(line_no) + ": too few fields");
    }
    const double label = parse_number(fields[*label_col], line_no);
    if (label != 0.0 && label != 1.0) {
      throw Error("samples CSV line " + std::to_string(line_no) + ": label must be 0 or 1");
    }
    const std::string metric = metric_col ? fields[*metric_col] : std::string("score");
    samples[metric].push_back({parse_number(fields[*score_col], line_no), label == 1.0});
  }
  return samples;
}

std::vector<AucRow> run_auc_report(const std::map<std::string, std::vector<StatSample>>& samples) {
  std::vector<AucRow> report;
  for (const auto& [metric, rows] : samples) {
    AucRow row;
    row.metric = metric;
    row.samples = rows.size();
    try {
      row.roc_auc = roc_auc(rows);
    } catch (const UndefinedStatistic& e) {
      throw UndefinedStatistic("metric '" + metric + "': " + e.what());
    }
    std::vector<double> scores, labels;
    for (const auto& s : rows) {
      scores.push_back(s.score);
      labels.push_back(s.label ? 1.0 : 0.0);
    }
    try {
      row.correlation = pearson_corr(scores, labels);
    } catch (const UndefinedStatistic& e) {
      throw UndefinedStatistic("metric '" + metric + "': " + e.what());
    }
    report.push_back(std::move(row));
  }
  return report;
}

void write_csv(std::ostream& out, const std::vector<AucRow>& report) {
  const auto old_precision = out.precision(17);
  out << "metric,samples,roc_auc,correlation\n";
  for (const auto& r : report) {
    out << csv_field(r.metric) << ',' << r.samples << ',' << r.roc_auc << ',' << r.correlation
        << '\n';
  }
  out.precision(old_precision);
}

std::string to_json(const std::vector<AucRow>& report, int indent) {
  auto rows = nlohmann::ordered_json::array();
  for (const auto& r : report) {
    nlohmann::ordered_json j;
    j["metric"] = r.metric;
    j["samples"] = r.samples;
    j["roc_auc"] = r.roc_auc;
    j["correlation"] = r.correlation;
    rows.push_back(std::move(j));
  }
  nlohmann::ordered_json j;
  j["rows"] = std::move(rows);
  return j.dump(indent);
}

ModelConfig config_from_json(std::string_view json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(std::string("model config: ") + e.what());
  }
  if (!j.is_object()) throw Error("model config: expected a JSON object");
  ModelConfig cfg;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "n_layers") cfg.n_layers = value.get<std::size_t>();
      else if (key == "n_heads") cfg.n_heads = value.get<std::size_t>();
      else if (key == "head_dim") cfg.head_dim = value.get<std::size_t>();
      else if (key == "vocab") cfg.vocab = value.get<std::size_t>();
      else if (key == "max_seq") cfg.max_seq = value.get<std::size_t>();
      else if (key == "init_seed") cfg.init_seed = value.get<std::uint64_t>();
      else if (key == "update_norm") {
        const auto name = value.get<std::string>();
        if (name == "post_o") cfg.update_norm = UpdateNorm::post_o;
        else if (name == "pre_o") cfg.update_norm = UpdateNorm::pre_o;
        else throw Error("model config: update_norm must be post_o or pre_o");
      } else {
        throw Error("model config: unknown key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("model config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

std::string config_to_json(const ModelConfig& config, int indent) {
  nlohmann::ordered_json j;
  j["n_layers"] = config.n_layers;
  j["n_heads"] = config.n_heads;
  j["head_dim"] = config.head_dim;
  j["vocab"] = config.vocab;
  j["max_seq"] = config.max_seq;
  j["init_seed"] = config.init_seed;
  j["update_norm"] = config.update_norm == UpdateNorm::post_o ? "post_o" : "pre_o";
  return j.dump(indent);
}

}  // namespace guide
