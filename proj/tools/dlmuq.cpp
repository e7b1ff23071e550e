#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dlmuq/commands.hpp"
#include "dlmuq/eval.hpp"

using namespace dlmuq;

namespace {

template <typename T>
void override_if(const CLI::Option* opt, const T& value, T& target) {
  if (opt->count() > 0) target = value;
}

RunConfig base_config(const std::string& path) {
  return path.empty() ? RunConfig{} : load_run_config(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Uncertainty signals for masked diffusion language model traces"};
  app.require_subcommand(1);

  // score
  auto* score = app.add_subcommand("score", "Score traces into report.jsonl");
  std::string score_config;
  std::vector<std::string> score_traces, score_signals;
  std::string provider, render_masks, endpoint, remask_mode, score_out;
  unsigned jobs = 0;
  std::uint64_t score_seed = 0;
  score->add_option("--config", score_config, "Run config JSON");
  auto* o_traces = score->add_option("traces,--traces", score_traces, "Trace files (.jsonl or .jsonl.gz)");
  auto* o_signals = score->add_option("--signals", score_signals, "Signals to compute (default: all)");
  auto* o_provider = score->add_option("--provider", provider, "exact_match|token_levenshtein|token_lcs|precomputed|remote");
  auto* o_render = score->add_option("--render-masks", render_masks, "sentinel|strip");
  auto* o_endpoint = score->add_option("--endpoint", endpoint, "Remote similarity URL");
  auto* o_remask = score->add_option("--remask-mode", remask_mode, "events|masked_state");
  auto* o_score_out = score->add_option("--out", score_out, "Output directory");
  auto* o_jobs = score->add_option("--jobs", jobs, "Worker threads (default: available parallelism)");
  auto* o_strict = score->add_flag("--strict", "Stop at the first instance failure");
  auto* o_score_seed = score->add_option("--seed", score_seed, "Global seed");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate reports against quality labels");
  std::string eval_config, reports, quality, metric, preset, dataset, eval_out;
  double threshold = 0.0, max_reject = eval::kDefaultMaxReject;
  std::vector<std::string> eval_signals;
  ev->add_option("--config", eval_config, "Run config JSON");
  auto* o_reports = ev->add_option("--reports", reports, "report.jsonl");
  auto* o_quality = ev->add_option("--quality", quality, "Quality JSONL");
  auto* o_metric = ev->add_option("--metric", metric, "prr|roc_auc");
  auto* o_preset = ev->add_option("--preset", preset, "qa|summ|mt|accuracy");
  auto* o_threshold = ev->add_option("--threshold", threshold, "Quality threshold for roc_auc");
  auto* o_max_reject = ev->add_option("--max-reject", max_reject, "Largest rejection fraction");
  auto* o_eval_signals = ev->add_option("--signals", eval_signals, "Signals to evaluate");
  auto* o_dataset = ev->add_option("--dataset", dataset, "Dataset label");
  auto* o_eval_out = ev->add_option("--out", eval_out, "Output directory");

  // simulate
  auto* sim = app.add_subcommand("simulate", "Generate toy traces and verify the bound");
  std::string sim_config, dist = "uniform", mode, policy, decode, sim_out = ".";
  int vocab_size = 2, length = 2, steps = 2, instances = 100, sweep = 0, blocks = 1, mc = kDefaultMcSamples;
  std::size_t samples = 10000;
  std::uint64_t sim_seed = 0;
  double remask_prob = 0.0;
  sim->add_option("--config", sim_config, "Simulator config JSON");
  auto* o_v = sim->add_option("--vocab-size", vocab_size);
  auto* o_l = sim->add_option("--length", length);
  auto* o_t = sim->add_option("--steps", steps);
  auto* o_dist = sim->add_option("--dist", dist, "uniform|dirichlet:<alpha>");
  auto* o_sim_seed = sim->add_option("--seed", sim_seed);
  auto* o_inst = sim->add_option("--instances", instances);
  auto* o_samples = sim->add_option("--samples", samples, "MC samples per step level");
  auto* o_mode = sim->add_option("--mode", mode, "monte_carlo|exact_discretized");
  auto* o_policy = sim->add_option("--policy", policy, "random_order|confidence_order");
  auto* o_decode = sim->add_option("--decode", decode, "sample|greedy");
  auto* o_blocks = sim->add_option("--blocks", blocks, "1 or 2");
  auto* o_mc = sim->add_option("--mc-samples", mc);
  auto* o_remask_prob = sim->add_option("--remask-prob", remask_prob);
  auto* o_sweep = sim->add_option("--sweep", sweep, "Randomized sweep over N configs");
  sim->add_option("--out", sim_out, "Output directory");

  // validate
  auto* val = app.add_subcommand("validate", "Check trace invariants");
  std::vector<std::string> val_paths;
  val->add_option("paths", val_paths, "Trace files")->required();

  // report
  auto* rep = app.add_subcommand("report", "Merge metric files into a CSV matrix");
  std::vector<std::string> metric_paths;
  std::string report_out = "report.csv";
  rep->add_option("metrics", metric_paths, "metrics.json files")->required();
  rep->add_option("--out", report_out, "Output CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (score->parsed()) {
      RunConfig c = base_config(score_config);
      override_if(o_traces, score_traces, c.io.traces);
      if (o_signals->count()) {
        c.scores.clear();
        for (const auto& s : score_signals) c.scores.push_back(parse_score_spec(s));
      }
      if (o_provider->count()) c.provider.kind = provider_kind_from_string(provider);
      if (o_render->count()) c.render_masks = render_masks_from_string(render_masks);
      override_if(o_endpoint, endpoint, c.provider.endpoint);
      if (o_remask->count()) {
        if (remask_mode == "events") {
          c.remask_mode = RemaskMode::events;
        } else if (remask_mode == "masked_state") {
          c.remask_mode = RemaskMode::masked_state;
        } else {
          throw ConfigError("unknown remask mode '" + remask_mode + "'");
        }
      }
      override_if(o_score_out, score_out, c.io.output_dir);
      override_if(o_jobs, jobs, c.jobs);
      if (o_strict->count()) c.strict = true;
      override_if(o_score_seed, score_seed, c.seed);
      return cmd_score(c, std::cerr);
    }
    if (ev->parsed()) {
      RunConfig c = base_config(eval_config);
      override_if(o_reports, reports, c.io.reports);
      override_if(o_quality, quality, c.io.quality);
      override_if(o_metric, metric, c.eval.metric);
      override_if(o_preset, preset, c.eval.preset);
      if (o_threshold->count()) c.eval.threshold = threshold;
      override_if(o_max_reject, max_reject, c.eval.max_reject);
      override_if(o_eval_signals, eval_signals, c.eval.signals);
      override_if(o_dataset, dataset, c.eval.dataset);
      override_if(o_eval_out, eval_out, c.io.output_dir);
      if (c.eval.metric != "prr" && c.eval.metric != "roc_auc") {
        throw ConfigError("metric must be 'prr' or 'roc_auc'");
      }
      return cmd_eval(c, std::cerr);
    }
    if (sim->parsed()) {
      nlohmann::json j = sim_config.empty() ? nlohmann::json::object() : read_json_file(sim_config);
      if (!j.is_object()) throw ConfigError("simulator config must be a JSON object");
      auto set = [&](const CLI::Option* opt, const char* key, auto value) {
        if (opt->count()) j[key] = value;
      };
      set(o_v, "vocab_size", vocab_size);
      set(o_l, "length", length);
      set(o_t, "steps", steps);
      set(o_dist, "dist", dist);
      set(o_sim_seed, "seed", sim_seed);
      set(o_inst, "instances", instances);
      set(o_samples, "samples", samples);
      set(o_mode, "mode", mode);
      set(o_policy, "unmask_policy", policy);
      set(o_decode, "decode", decode);
      set(o_blocks, "num_blocks", blocks);
      set(o_mc, "mc_samples", mc);
      set(o_remask_prob, "remask_prob", remask_prob);
      set(o_sweep, "sweep", sweep);
      return cmd_simulate(parse_simulator_config(j), sim_out, std::cerr);
    }
    if (val->parsed()) return cmd_validate(val_paths, std::cout, std::cerr);
    if (rep->parsed()) return cmd_report(metric_paths, report_out, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
