#include "guide/cli.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "guide/calibration.hpp"
#include "guide/decoding.hpp"
#include "guide/error.hpp"
#include "guide/harness.hpp"
#include "guide/influence.hpp"
#include "guide/model.hpp"

namespace guide {

namespace {

using ordered_json = nlohmann::ordered_json;

struct CommonOptions {
  std::string config_path;
  std::string weights_path;
  std::uint64_t seed = 0;
  std::vector<std::string> delta_map;
  std::string out_path;
  std::string format = "json";
};

struct PromptOptions {
  std::string prompt_path;
  std::string text;
  std::string context_path;
  bool keep_markers = false;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void add_common(CLI::App* cmd, CommonOptions& opts, bool with_format) {
  cmd->add_option("--config", opts.config_path, "Model config JSON file");
  cmd->add_option("--weights", opts.weights_path, "Weights file (overrides --config/--seed init)");
  cmd->add_option("--seed", opts.seed, "Model init seed (and default sampling seed)");
  cmd->add_option("--delta-map", opts.delta_map, "Emphasis level to delta, e.g. 2=1.5")
      ->type_name("LEVEL=VALUE");
  cmd->add_option("--out", opts.out_path, "Write output here instead of stdout");
  if (with_format) {
    cmd->add_option("--format", opts.format, "Output format")
        ->check(CLI::IsMember({"json", "csv"}));
  }
}

void add_prompt(CLI::App* cmd, PromptOptions& opts) {
  auto* file = cmd->add_option("--prompt", opts.prompt_path, "Tagged prompt file");
  auto* text = cmd->add_option("--text", opts.text, "Tagged prompt text");
  file->excludes(text);
  cmd->add_option("--context", opts.context_path,
                  "File substituted for {context}, {context with needle} and {content}");
  cmd->add_flag("--keep-markers", opts.keep_markers, "Leave tag markers in the model input");
}

ModelConfig load_config(const CommonOptions& opts) {
  ModelConfig cfg = opts.config_path.empty() ? ModelConfig{} : config_from_json(read_file(opts.config_path));
  cfg.init_seed = opts.seed;
  return cfg;
}

Weights load_model(const CommonOptions& opts) {
  if (!opts.weights_path.empty()) return load_weights(opts.weights_path);
  return init_model(load_config(opts));
}

DeltaConfig delta_config(const CommonOptions& opts) {
  DeltaConfig deltas;
  for (const auto& entry : opts.delta_map) {
    const auto eq = entry.find('=');
    if (eq == std::string::npos) throw CLI::ValidationError("--delta-map", "expected LEVEL=VALUE, got " + entry);
    try {
      std::size_t used = 0;
      const int level = std::stoi(entry.substr(0, eq), &used);
      const std::string value_text = entry.substr(eq + 1);
      std::size_t used_v = 0;
      const double value = std::stod(value_text, &used_v);
      if (used != eq || used_v != value_text.size()) throw std::invalid_argument(entry);
      deltas.set(level, value);
    } catch (const Error& e) {
      throw CLI::ValidationError("--delta-map", e.what());
    } catch (const std::exception&) {
      throw CLI::ValidationError("--delta-map", "expected LEVEL=VALUE, got " + entry);
    }
  }
  return deltas;
}

TaggedPrompt load_prompt(const PromptOptions& popts, const CommonOptions& copts,
                         std::ostream& err) {
  if (popts.prompt_path.empty() && popts.text.empty()) {
    throw CLI::RequiredError("--prompt or --text");
  }
  std::string raw = popts.prompt_path.empty() ? popts.text : read_file(popts.prompt_path);
  if (!popts.context_path.empty()) {
    const std::string context = read_file(popts.context_path);
    for (std::string_view slot : {"{context with needle}", "{context}", "{content}"}) {
      raw = fill_placeholder(std::move(raw), slot, context);
    }
  }
  ParseOptions parse;
  parse.deltas = delta_config(copts);
  parse.keep_markers = popts.keep_markers;
  TaggedPrompt prompt = parse_tags(raw, parse);
  for (const auto& w : prompt.warnings) err << "warning: " << w << '\n';
  return prompt;
}

ordered_json meta(const std::string& command, const CommonOptions& opts, const Weights& weights,
                  const std::vector<std::string>& args) {
  ordered_json m;
  m["tool"] = "guide";
  m["command"] = command;
  m["seed"] = opts.seed;
  m["model"] = ordered_json::parse(config_to_json(weights.config));
  m["args"] = args;
  return m;
}

std::string csv_header_comment(const std::string& command, const CommonOptions& opts,
                               const std::vector<std::string>& args) {
  std::string line = "# guide " + command + " seed=" + std::to_string(opts.seed) + " args:";
  for (const auto& a : args) line += " " + a;
  for (char& c : line) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return line + "\n";
}

void emit(const CommonOptions& opts, std::ostream& out, const std::string& payload) {
  if (opts.out_path.empty()) {
    out << payload;
    return;
  }
  std::ofstream file(opts.out_path, std::ios::binary);
  if (!file) throw Error("cannot write " + opts.out_path);
  file << payload;
  if (!file) throw Error("write failed for " + opts.out_path);
}

std::string with_meta(const std::string& json_text, ordered_json m) {
  ordered_json j = ordered_json::parse(json_text);
  ordered_json wrapped;
  wrapped["meta"] = std::move(m);
  for (auto& [key, value] : j.items()) wrapped[key] = value;
  return wrapped.dump(2, ' ', false, ordered_json::error_handler_t::replace) + "\n";
}

std::vector<TokenRange> measured_spans(const TaggedPrompt& prompt) {
  std::vector<TokenRange> spans;
  for (const auto& q : prompt.query_spans) spans.push_back(q.tokens);
  if (spans.empty()) {
    for (const auto& e : prompt.emphasis_spans) spans.push_back(e.tokens);
  }
  if (spans.empty()) throw Error("prompt has no <?-> query span or emphasis span to measure");
  return spans;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Attention-logit emphasis and influence tracing on a desk-scale transformer",
               "guide"};
  app.require_subcommand(1);

  std::vector<std::string> args(argv + std::min(argc, 1), argv + argc);

  // init-model
  CommonOptions init_opts;
  auto* init_cmd = app.add_subcommand("init-model", "Initialise weights and write a weights file");
  add_common(init_cmd, init_opts, false);
  init_cmd->get_option("--out")->required();

  // generate
  CommonOptions gen_opts;
  PromptOptions gen_prompt;
  std::string gen_mode = "greedy";
  double gen_temperature = 1.0;
  std::size_t gen_max_tokens = 32;
  std::optional<std::uint64_t> gen_sample_seed;
  bool gen_no_bias = false;
  bool gen_prompt_only = false;
  bool gen_track = false;
  std::size_t gen_stride = 8;
  auto* gen_cmd = app.add_subcommand("generate", "Generate a continuation of a tagged prompt");
  add_common(gen_cmd, gen_opts, false);
  add_prompt(gen_cmd, gen_prompt);
  gen_cmd->add_option("--mode", gen_mode)->check(CLI::IsMember({"greedy", "multinomial"}));
  gen_cmd->add_option("--temperature", gen_temperature)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--max-tokens", gen_max_tokens)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--sample-seed", gen_sample_seed, "Sampling seed (default: --seed)");
  gen_cmd->add_flag("--no-bias", gen_no_bias, "Ignore emphasis tags");
  gen_cmd->add_flag("--prompt-only-bias", gen_prompt_only,
                    "Bias prompt positions only, not generated queries");
  gen_cmd->add_flag("--track-influence", gen_track, "Record the span influence while decoding");
  gen_cmd->add_option("--influence-stride", gen_stride)->check(CLI::PositiveNumber);

  // influence
  CommonOptions inf_opts;
  PromptOptions inf_prompt;
  std::string inf_variant = "exact";
  bool inf_no_bias = false;
  auto* inf_cmd = app.add_subcommand("influence", "Trace a span's influence through the layers");
  add_common(inf_cmd, inf_opts, true);
  add_prompt(inf_cmd, inf_prompt);
  inf_cmd->add_option("--variant", inf_variant)
      ->check(CLI::IsMember({"exact", "simplified", "rollout", "raw", "influence_exact",
                             "influence_simplified", "raw_attention"}));
  inf_cmd->add_flag("--no-bias", inf_no_bias, "Run the forward pass without emphasis bias");

  // calibrate
  CommonOptions cal_opts;
  PromptOptions cal_prompt;
  std::string cal_transform = "uppercase";
  std::string cal_policy = "final";
  double cal_delta_max = 5.0;
  std::string cal_task;
  auto* cal_cmd = app.add_subcommand("calibrate", "Pick delta from a natural-emphasis transform");
  add_common(cal_cmd, cal_opts, false);
  add_prompt(cal_cmd, cal_prompt);
  cal_cmd->add_option("--transform", cal_transform)
      ->check(CLI::IsMember({"identity", "uppercase", "lowercase"}));
  cal_cmd->add_option("--layer-policy", cal_policy)->check(CLI::IsMember({"final", "averaged"}));
  cal_cmd->add_option("--delta-max", cal_delta_max)->check(CLI::NonNegativeNumber);
  cal_cmd->add_option("--task", cal_task, "Also report the default delta for this task")
      ->check(CLI::IsMember({"instruction", "retrieval", "format"}));

  // sweep
  CommonOptions sw_opts;
  PromptOptions sw_prompt;
  std::string sw_task = "needle";
  NeedleSweepSpec sw_spec;
  std::string sw_filler;
  std::vector<std::string> sw_metrics;
  std::string sw_variant = "exact";
  std::vector<std::string> sw_prompts;
  std::string sw_transform = "uppercase";
  auto* sw_cmd = app.add_subcommand("sweep", "Run a needle, delta or calibration sweep");
  add_common(sw_cmd, sw_opts, true);
  add_prompt(sw_cmd, sw_prompt);
  sw_cmd->add_option("--task", sw_task)->check(CLI::IsMember({"needle", "delta", "calibration"}));
  sw_cmd->add_option("--context-lengths", sw_spec.context_lengths)->delimiter(',');
  sw_cmd->add_option("--quantiles", sw_spec.quantiles)->delimiter(',');
  sw_cmd->add_option("--deltas", sw_spec.deltas)->delimiter(',');
  sw_cmd->add_option("--seeds", sw_spec.seeds)->delimiter(',');
  sw_cmd->add_option("--needle", sw_spec.needle);
  sw_cmd->add_option("--question", sw_spec.question);
  sw_cmd->add_option("--filler", sw_filler, "Haystack text file (default: synthetic)");
  sw_cmd->add_flag("--template", sw_spec.use_template, "Wrap haystacks in the needle template");
  sw_cmd->add_option("--metrics", sw_metrics)->delimiter(',');
  sw_cmd->add_option("--variant", sw_variant, "Metric for --task delta");
  sw_cmd->add_option("--prompts", sw_prompts, "Prompt files for --task calibration")
      ->delimiter(',');
  sw_cmd->add_option("--transform", sw_transform, "Transform for --task calibration")
      ->check(CLI::IsMember({"identity", "uppercase", "lowercase"}));

  // auc
  CommonOptions auc_opts;
  std::vector<std::string> auc_inputs;
  auto* auc_cmd = app.add_subcommand("auc", "ROC AUC and correlation per metric from score files");
  auc_cmd->add_option("--input", auc_inputs, "CSV with metric,score,label columns")
      ->required();
  auc_cmd->add_option("--out", auc_opts.out_path);
  auc_cmd->add_option("--format", auc_opts.format)->check(CLI::IsMember({"json", "csv"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    if (*init_cmd) {
      const Weights weights = init_model(load_config(init_opts));
      save_weights(weights, init_opts.out_path);
      ordered_json j;
      j["meta"] = meta("init-model", init_opts, weights, args);
      j["weights"] = init_opts.out_path;
      out << j.dump(2) << "\n";
    } else if (*gen_cmd) {
      const Weights weights = load_model(gen_opts);
      const TaggedPrompt prompt = load_prompt(gen_prompt, gen_opts, err);
      GenerationParams params;
      params.mode = parse_sampling_mode(gen_mode);
      params.temperature = gen_temperature;
      params.max_tokens = gen_max_tokens;
      params.seed = gen_sample_seed.value_or(gen_opts.seed);
      params.bias_decode_steps = !gen_prompt_only;
      params.track_influence = gen_track;
      params.influence_stride = gen_stride;
      const GenerationRecord record = decode(weights, prompt, params, !gen_no_bias);
      emit(gen_opts, out, with_meta(to_json(record), meta("generate", gen_opts, weights, args)));
    } else if (*inf_cmd) {
      const Weights weights = load_model(inf_opts);
      const TaggedPrompt prompt = load_prompt(inf_prompt, inf_opts, err);
      const BiasSpec bias = inf_no_bias ? BiasSpec{} : BiasSpec::from_prompt(prompt);
      const auto result = forward(weights, prompt.tokens(), bias, CaptureOptions{true, false});
      const InfluenceMap map =
          compute_map(*result.trace, measured_spans(prompt), parse_variant(inf_variant));
      if (inf_opts.format == "csv") {
        std::ostringstream csv;
        csv << csv_header_comment("influence", inf_opts, args);
        write_csv(csv, map);
        emit(inf_opts, out, csv.str());
      } else {
        emit(inf_opts, out, with_meta(to_json(map), meta("influence", inf_opts, weights, args)));
      }
    } else if (*cal_cmd) {
      const Weights weights = load_model(cal_opts);
      const TaggedPrompt prompt = load_prompt(cal_prompt, cal_opts, err);
      CalibrationOptions options;
      options.layer_policy = parse_layer_policy(cal_policy);
      options.delta_max = cal_delta_max;
      const CalibrationResult result =
          calibrate_delta(weights, prompt, transform_by_name(cal_transform), options);
      ordered_json j = ordered_json::parse(to_json(result));
      j["transform"] = cal_transform;
      if (!cal_task.empty()) j["default_delta"] = default_delta(parse_task(cal_task));
      emit(cal_opts, out, with_meta(j.dump(), meta("calibrate", cal_opts, weights, args)));
    } else if (*sw_cmd) {
      ResultTable table;
      ModelConfig cfg = load_config(sw_opts);
      if (sw_task == "needle") {
        sw_spec.model = cfg;
        if (!sw_filler.empty()) sw_spec.filler = read_file(sw_filler);
        if (!sw_metrics.empty()) {
          sw_spec.metrics.clear();
          for (const auto& m : sw_metrics) sw_spec.metrics.push_back(parse_variant(m));
        }
        table = run_needle_sweep(sw_spec);
      } else if (sw_task == "delta") {
        const Weights weights = load_model(sw_opts);
        const TaggedPrompt prompt = load_prompt(sw_prompt, sw_opts, err);
        table = run_delta_sweep(weights, prompt, sw_spec.deltas, parse_variant(sw_variant));
      } else {
        const Weights weights = load_model(sw_opts);
        if (sw_prompts.empty()) throw CLI::RequiredError("--prompts");
        for (const auto& path : sw_prompts) {
          PromptOptions p = sw_prompt;
          p.prompt_path = path;
          p.text.clear();
          const TaggedPrompt prompt = load_prompt(p, sw_opts, err);
          const auto result = calibrate_delta(weights, prompt, transform_by_name(sw_transform));
          const double pos = static_cast<double>(prompt.query_spans.front().tokens.begin) /
                             static_cast<double>(prompt.tokens().size());
          for (const auto& [name, value] :
               {std::pair<std::string, double>{"calibrated_delta", result.delta},
                {"log_influence_base", result.log_influence_base},
                {"log_influence_transformed", result.log_influence_transformed}}) {
            table.rows.push_back({prompt.tokens().size(), pos, result.delta, weights.config.init_seed,
                                  path + ":" + name, value});
          }
        }
      }
      if (sw_opts.format == "csv") {
        std::ostringstream csv;
        csv << csv_header_comment("sweep", sw_opts, args);
        write_csv(csv, table);
        emit(sw_opts, out, csv.str());
      } else {
        ordered_json m;
        m["tool"] = "guide";
        m["command"] = "sweep";
        m["task"] = sw_task;
        m["seed"] = sw_opts.seed;
        m["model"] = ordered_json::parse(config_to_json(cfg));
        m["args"] = args;
        emit(sw_opts, out, with_meta(to_json(table), std::move(m)));
      }
    } else if (*auc_cmd) {
      std::map<std::string, std::vector<StatSample>> samples;
      for (const auto& path : auc_inputs) {
        std::ifstream in(path);
        if (!in) throw Error("cannot read " + path);
        for (auto& [metric, rows] : read_samples_csv(in)) {
          auto& dst = samples[metric];
          dst.insert(dst.end(), rows.begin(), rows.end());
        }
      }
      const auto report = run_auc_report(samples);
      if (auc_opts.format == "csv") {
        std::ostringstream csv;
        write_csv(csv, report);
        emit(auc_opts, out, csv.str());
      } else {
        ordered_json m;
        m["tool"] = "guide";
        m["command"] = "auc";
        m["args"] = args;
        emit(auc_opts, out, with_meta(to_json(report), std::move(m)));
      }
    }
  } catch (const CLI::Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    // malformed tags are bad input, not a runtime failure
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace guide
