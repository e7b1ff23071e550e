#include "dlmuq/run_config.hpp"

#include <fstream>
#include <set>

#include <fmt/format.h>

namespace dlmuq {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& item : j.items()) {
    if (!ok.count(item.key())) throw ConfigError(fmt::format("unknown key '{}' in {}", item.key(), where));
  }
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

std::optional<std::pair<ViewKind, bool>> parse_ad_name(const std::string& name) {
  for (const char* prefix : {"ad_prog_", "ad_"}) {
    const std::string p(prefix);
    if (name.rfind(p, 0) == 0) {
      try {
        return std::make_pair(view_from_string(name.substr(p.size())), p == "ad_prog_");
      } catch (const std::invalid_argument&) {
        return std::nullopt;
      }
    }
  }
  return std::nullopt;
}

}  // namespace

ScoreSpec parse_score_spec(const json& j) {
  ScoreSpec s;
  if (j.is_string()) {
    const auto name = j.get<std::string>();
    s.name = name;
    if (is_signal_name(name)) {
      s.kind = ScoreSpec::Kind::signal;
    } else if (auto ad = parse_ad_name(name)) {
      s.kind = ScoreSpec::Kind::dissimilarity;
      s.view = ad->first;
      s.weighted = ad->second;
    } else if (name == "d_cocoa_local") {
      s.kind = ScoreSpec::Kind::cocoa;
      s.info_signal = "commit_nll";
      s.view = ViewKind::block;
    } else if (name == "d_cocoa_global") {
      s.kind = ScoreSpec::Kind::cocoa;
      s.info_signal = "mcnll_norm";
      s.view = ViewKind::full;
      s.include_nfe = true;
    } else {
      throw ConfigError("unknown signal '" + name + "'");
    }
    return s;
  }
  reject_unknown(j, {"variant_name", "info_signal", "view", "weighted", "include_nfe"},
                 "cocoa variant");
  s.kind = ScoreSpec::Kind::cocoa;
  s.name = j.at("variant_name").get<std::string>();
  s.info_signal = j.at("info_signal").get<std::string>();
  if (!is_info_signal(s.info_signal)) {
    throw ConfigError("'" + s.info_signal + "' cannot serve as information signal");
  }
  std::string view = "full";
  read_opt(j, "view", view);
  try {
    s.view = view_from_string(view);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  read_opt(j, "weighted", s.weighted);
  read_opt(j, "include_nfe", s.include_nfe);
  return s;
}

std::vector<ScoreSpec> default_score_specs() {
  std::vector<ScoreSpec> out;
  for (const auto& name : signal_catalog()) out.push_back(parse_score_spec(name));
  for (bool weighted : {false, true}) {
    for (auto view : {ViewKind::block, ViewKind::last, ViewKind::last_prefix, ViewKind::full}) {
      out.push_back(parse_score_spec(ad_signal_name(view, weighted)));
    }
  }
  out.push_back(parse_score_spec("d_cocoa_local"));
  out.push_back(parse_score_spec("d_cocoa_global"));
  return out;
}

RunConfig parse_run_config(const json& j) {
  reject_unknown(j, {"signals", "provider", "remask_mode", "eval", "io", "seed", "jobs", "strict"},
                 "run config");
  RunConfig c;
  try {
    if (j.contains("signals")) {
      for (const auto& s : j.at("signals")) c.scores.push_back(parse_score_spec(s));
    }
    if (j.contains("provider")) {
      const json& p = j.at("provider");
      reject_unknown(p,
                     {"kind", "render_masks", "endpoint", "batch_size", "timeout_ms", "retries",
                      "max_in_flight", "backoff_ms"},
                     "provider");
      if (p.contains("kind")) c.provider.kind = provider_kind_from_string(p.at("kind").get<std::string>());
      if (p.contains("render_masks")) {
        c.render_masks = render_masks_from_string(p.at("render_masks").get<std::string>());
      }
      read_opt(p, "endpoint", c.provider.endpoint);
      read_opt(p, "batch_size", c.provider.batch_size);
      read_opt(p, "retries", c.provider.retries);
      read_opt(p, "max_in_flight", c.provider.max_in_flight);
      if (p.contains("timeout_ms")) c.provider.timeout = std::chrono::milliseconds(p.at("timeout_ms").get<long>());
      if (p.contains("backoff_ms")) c.provider.backoff = std::chrono::milliseconds(p.at("backoff_ms").get<long>());
    }
    if (j.contains("remask_mode")) {
      const auto mode = j.at("remask_mode").get<std::string>();
      if (mode == "events") {
        c.remask_mode = RemaskMode::events;
      } else if (mode == "masked_state") {
        c.remask_mode = RemaskMode::masked_state;
      } else {
        throw ConfigError("unknown remask_mode '" + mode + "'");
      }
    }
    if (j.contains("eval")) {
      const json& e = j.at("eval");
      reject_unknown(e, {"metric", "preset", "threshold", "max_reject", "signals", "dataset"}, "eval");
      read_opt(e, "metric", c.eval.metric);
      read_opt(e, "preset", c.eval.preset);
      if (e.contains("threshold") && !e.at("threshold").is_null()) c.eval.threshold = e.at("threshold").get<double>();
      read_opt(e, "max_reject", c.eval.max_reject);
      read_opt(e, "signals", c.eval.signals);
      read_opt(e, "dataset", c.eval.dataset);
    }
    if (j.contains("io")) {
      const json& io = j.at("io");
      reject_unknown(io, {"traces", "reports", "quality", "metrics", "output_dir"}, "io");
      read_opt(io, "traces", c.io.traces);
      read_opt(io, "reports", c.io.reports);
      read_opt(io, "quality", c.io.quality);
      read_opt(io, "metrics", c.io.metrics);
      read_opt(io, "output_dir", c.io.output_dir);
    }
    read_opt(j, "seed", c.seed);
    read_opt(j, "jobs", c.jobs);
    read_opt(j, "strict", c.strict);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("invalid run config: ") + e.what());
  }
  if (c.eval.metric != "prr" && c.eval.metric != "roc_auc") {
    throw ConfigError("eval.metric must be 'prr' or 'roc_auc'");
  }
  return c;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const std::exception& e) {
    throw ConfigError(fmt::format("'{}' is not valid JSON: {}", path, e.what()));
  }
}

RunConfig load_run_config(const std::string& path) { return parse_run_config(read_json_file(path)); }

SimulatorSettings parse_simulator_config(const json& j) {
  reject_unknown(j,
                 {"vocab_size", "length", "steps", "unmask_policy", "dist", "seed", "instances",
                  "samples", "mode", "decode", "num_blocks", "mc_samples", "remask_prob", "sweep"},
                 "simulator config");
  SimulatorSettings s;
  try {
    auto& m = s.model;
    read_opt(j, "vocab_size", m.vocab_size);
    read_opt(j, "length", m.length);
    read_opt(j, "steps", m.steps);
    read_opt(j, "seed", m.seed);
    if (j.contains("unmask_policy")) {
      m.unmask_policy = oracle::unmask_policy_from_string(j.at("unmask_policy").get<std::string>());
    }
    if (j.contains("decode")) m.decode = oracle::decode_mode_from_string(j.at("decode").get<std::string>());
    read_opt(j, "num_blocks", m.num_blocks);
    read_opt(j, "mc_samples", m.mc_samples);
    read_opt(j, "remask_prob", m.remask_prob);
    read_opt(j, "instances", s.instances);
    read_opt(j, "samples", s.samples);
    read_opt(j, "sweep", s.sweep);
    if (j.contains("mode")) {
      const auto mode = j.at("mode").get<std::string>();
      if (mode == "monte_carlo") {
        s.mode = oracle::LossMode::monte_carlo;
      } else if (mode == "exact_discretized") {
        s.mode = oracle::LossMode::exact_discretized;
      } else {
        throw ConfigError("mode must be 'monte_carlo' or 'exact_discretized'");
      }
    }
    if (j.contains("dist") && j.at("dist").is_array()) {
      s.dist = "table";
      m.table = j.at("dist").get<std::vector<double>>();
    } else {
      read_opt(j, "dist", s.dist);
      const auto built = oracle::make_toy(m.vocab_size, m.length, m.steps, s.dist, m.seed, m.unmask_policy);
      m.table = built.table;
    }
    m.check();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("invalid simulator config: ") + e.what());
  }
  if (s.instances < 1) throw ConfigError("instances must be positive");
  return s;
}

}  // namespace dlmuq
