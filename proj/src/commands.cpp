#include "dlmuq/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "dlmuq/cocoa.hpp"
#include "dlmuq/dissimilarity.hpp"
#include "dlmuq/eval.hpp"
#include "dlmuq/report_io.hpp"
#include "dlmuq/trace_io.hpp"

namespace dlmuq {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw UsageError(fmt::format("no {} given", what));
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) throw UsageError(fmt::format("{} '{}' does not exist", what, path));
}

fs::path prepare_output_dir(const std::string& dir) {
  fs::path p = dir.empty() ? fs::path(".") : fs::path(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (!fs::is_directory(p)) throw UsageError(fmt::format("cannot create output directory '{}'", p.string()));
  return p;
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError(fmt::format("cannot write '{}'", path.string()));
  return out;
}

unsigned worker_count(unsigned jobs) {
  if (jobs > 0) return jobs;
  return std::max(1u, std::thread::hardware_concurrency());
}

bool needs_provider(const std::vector<ScoreSpec>& specs) {
  return std::any_of(specs.begin(), specs.end(),
                     [](const ScoreSpec& s) { return s.kind != ScoreSpec::Kind::signal; });
}

struct Outcome {
  std::optional<UncertaintyReport> report;
  std::string error;
};

}  // namespace

SimilarityConfig effective_similarity_config(const RunConfig& config) {
  SimilarityConfig c = config.provider;
  if (const char* env = std::getenv("DLMUQ_SIM_ENDPOINT"); env && *env) c.endpoint = env;
  return c;
}

UncertaintyReport score_instance(const InstanceTrace& trace, const std::vector<ScoreSpec>& specs,
                                 const RunConfig& config,
                                 const std::shared_ptr<const SimilarityProvider>& provider) {
  const auto violations = validate(trace);
  if (!violations.empty()) {
    const auto& v = violations.front();
    throw TraceError(fmt::format("{} violation(s), first: {} at {}: {}", violations.size(),
                                 v.invariant, v.location, v.detail));
  }
  SignalOptions options;
  options.remask_mode = config.remask_mode;
  UncertaintyReport report;
  report.instance_id = trace.instance_id;
  for (const auto& spec : specs) {
    SignalValue v;
    switch (spec.kind) {
      case ScoreSpec::Kind::signal:
        v = compute_signal(trace, spec.name, options);
        break;
      case ScoreSpec::Kind::dissimilarity:
        v = average_dissimilarity(trace, ADConfig{spec.view, spec.weighted, provider, config.render_masks});
        break;
      case ScoreSpec::Kind::cocoa: {
        CocoaConfig c;
        c.info_signal = spec.info_signal;
        c.consistency = ADConfig{spec.view, spec.weighted, provider, config.render_masks};
        c.include_nfe = spec.include_nfe;
        c.variant_name = spec.name;
        v = d_cocoa(trace, c, options);
        break;
      }
    }
    v.name = spec.name;
    report.signals[spec.name] = v;
  }
  return report;
}

int cmd_score(const RunConfig& config, std::ostream& log) {
  try {
    if (config.io.traces.empty()) throw UsageError("no trace files given");
    for (const auto& p : config.io.traces) require_file(p, "trace file");
    const auto specs = config.scores.empty() ? default_score_specs() : config.scores;
    std::shared_ptr<const SimilarityProvider> provider;
    if (needs_provider(specs)) provider = make_provider(effective_similarity_config(config));
    const auto dir = prepare_output_dir(config.io.output_dir);
    auto out = open_output(dir / "report.jsonl");

    const unsigned workers = worker_count(config.jobs);
    const std::size_t window = std::max<std::size_t>(16, 4 * static_cast<std::size_t>(workers));
    std::size_t scored = 0;
    std::size_t failed = 0;
    bool stop = false;

    for (const auto& path : config.io.traces) {
      std::ifstream in(path, std::ios::binary);
      if (!in) throw UsageError(fmt::format("cannot open '{}'", path));
      TraceReader reader(in);
      bool exhausted = false;
      while (!exhausted && !stop) {
        std::vector<InstanceTrace> batch;
        while (batch.size() < window) {
          try {
            auto t = reader.next();
            if (!t) {
              exhausted = true;
              break;
            }
            batch.push_back(std::move(*t));
          } catch (const TraceFormatError& e) {
            ++failed;
            fmt::print(log, "{}: byte {}{}: {}\n", path, e.offset(),
                       e.instance_id() ? " (" + *e.instance_id() + ")" : std::string(), e.what());
            if (config.strict) {
              stop = true;
              break;
            }
          }
        }
        std::vector<Outcome> outcomes(batch.size());
        std::atomic<std::size_t> cursor{0};
        auto work = [&] {
          for (std::size_t i; (i = cursor.fetch_add(1)) < batch.size();) {
            try {
              outcomes[i].report = score_instance(batch[i], specs, config, provider);
            } catch (const std::exception& e) {
              outcomes[i].error = e.what();
            }
          }
        };
        std::vector<std::thread> pool;
        const unsigned n_threads = std::min<std::size_t>(workers, batch.size());
        for (unsigned w = 1; w < n_threads; ++w) pool.emplace_back(work);
        work();
        for (auto& t : pool) t.join();

        for (std::size_t i = 0; i < batch.size(); ++i) {
          if (outcomes[i].report) {
            out << report_to_json(*outcomes[i].report).dump() << '\n';
            ++scored;
            continue;
          }
          ++failed;
          fmt::print(log, "{}: instance '{}': {}\n", path, batch[i].instance_id, outcomes[i].error);
          if (config.strict) {
            stop = true;
            break;
          }
        }
      }
      if (stop) break;
    }
    out.flush();
    if (!out) throw UsageError("write to report.jsonl failed");
    fmt::print(log, "scored {} instance(s), {} failure(s)\n", scored, failed);
    return failed ? kExitInstanceFailures : kExitOk;
  } catch (const UsageError& e) {
    fmt::print(log, "error: {}\n", e.what());
  } catch (const ConfigError& e) {
    fmt::print(log, "error: {}\n", e.what());
  } catch (const VersionMismatchError& e) {
    fmt::print(log, "error: {}\n", e.what());
  } catch (const TraceFormatError& e) {
    fmt::print(log, "error: byte {}: {}\n", e.offset(), e.what());
  } catch (const SimilarityError& e) {
    fmt::print(log, "error: {}\n", e.what());
  }
  return kExitUsage;
}

namespace {

template <typename T>
std::vector<T> read_jsonl_file(const std::string& path,
                               std::vector<T> (*reader)(std::istream&)) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError(fmt::format("cannot open '{}'", path));
  try {
    return reader(in);
  } catch (const std::exception& e) {
    throw UsageError(fmt::format("{}: {}", path, e.what()));
  }
}

void write_curve(std::ostream& out, const std::string& signal, const char* order,
                 const std::vector<eval::CurvePoint>& curve) {
  for (const auto& p : curve) {
    fmt::print(out, "{},{},{},{}\n", signal, order, p.reject_fraction, p.mean_quality);
  }
}

}  // namespace

int cmd_eval(const RunConfig& config, std::ostream& log) {
  try {
    require_file(config.io.reports, "report file");
    require_file(config.io.quality, "quality file");
    const auto& settings = config.eval;
    std::optional<double> threshold = settings.threshold;
    if (!threshold && !settings.preset.empty()) {
      threshold = eval::preset_threshold(settings.preset);
      if (!threshold) throw UsageError(fmt::format("unknown preset '{}'", settings.preset));
    }
    if (settings.metric == "roc_auc" && !threshold) {
      throw UsageError("roc_auc needs a threshold or a preset");
    }
    const auto reports = read_jsonl_file<UncertaintyReport>(config.io.reports, &read_reports);
    const auto qualities = read_jsonl_file<eval::QualityRecord>(config.io.quality, &eval::read_qualities);

    std::vector<std::string> signals = settings.signals;
    if (signals.empty()) {
      std::set<std::string> names;
      for (const auto& r : reports) {
        for (const auto& [name, v] : r.signals) names.insert(name);
      }
      signals.assign(names.begin(), names.end());
    }

    const auto dir = prepare_output_dir(config.io.output_dir);
    auto curves = open_output(dir / "curves.csv");
    curves << "signal,order,reject_fraction,mean_quality\n";
    json metrics = json::array();
    int failures = 0;
    for (const auto& signal : signals) {
      eval::JoinStats stats;
      json m = {{"signal", signal}, {"metric", settings.metric}, {"preset", settings.preset},
                {"dataset", settings.dataset}, {"max_reject", settings.max_reject}};
      try {
        const auto records = eval::join(reports, qualities, signal, &stats);
        m["n"] = records.size();
        if (settings.metric == "prr") {
          const auto r = eval::prr(records, settings.max_reject);
          m["value"] = r.prr;
          m["degenerate"] = r.degenerate;
          const auto unc = eval::rejection_curve(records, eval::RejectionOrder::by_uncertainty(),
                                                 settings.max_reject);
          const auto orc =
              eval::rejection_curve(records, eval::RejectionOrder::oracle(), settings.max_reject);
          auto flat = unc;
          for (auto& p : flat) p.mean_quality = unc.front().mean_quality;
          write_curve(curves, signal, "uncertainty", unc);
          write_curve(curves, signal, "oracle", orc);
          write_curve(curves, signal, "random", flat);
        } else {
          m["value"] = eval::roc_auc(records, *threshold);
          m["degenerate"] = false;
          m["threshold"] = *threshold;
        }
      } catch (const eval::EvalError& e) {
        ++failures;
        m["value"] = nullptr;
        m["error"] = e.what();
        fmt::print(log, "signal '{}': {}\n", signal, e.what());
      }
      m["matched"] = stats.matched;
      m["excluded"] = stats.excluded;
      m["unmatched_reports"] = stats.unmatched_reports;
      m["unmatched_qualities"] = stats.unmatched_qualities;
      metrics.push_back(std::move(m));
    }
    auto out = open_output(dir / "metrics.json");
    out << metrics.dump(2) << '\n';
    return failures ? kExitInstanceFailures : kExitOk;
  } catch (const UsageError& e) {
    fmt::print(log, "error: {}\n", e.what());
  } catch (const eval::EvalError& e) {
    fmt::print(log, "error: {}\n", e.what());
  }
  return kExitUsage;
}

json theorem_report_to_json(const oracle::TheoremReport& r) {
  return {{"mode", r.mode == oracle::LossMode::monte_carlo ? "monte_carlo" : "exact_discretized"},
          {"samples", r.samples},
          {"mean_u_ad", r.mean_u_ad.value},
          {"mean_u_ad_se", r.mean_u_ad.se},
          {"loss", r.loss.value},
          {"loss_se", r.loss.se},
          {"per_step_probs", r.per_step_probs},
          {"per_step_bounds", r.per_step_bounds},
          {"per_step_slack", r.per_step_slack},
          {"headline_slack", r.headline_slack},
          {"margin", r.margin},
          {"inequality_holds", r.inequality_holds}};
}

std::vector<oracle::ToyDiffusion> sweep_models(int count, std::uint64_t seed,
                                               oracle::UnmaskPolicy policy) {
  std::mt19937_64 rng(seed);
  const int vs[] = {2, 3, 4};
  const int ls[] = {2, 3};
  const int ts[] = {2, 4, 8};
  std::vector<oracle::ToyDiffusion> out;
  for (int i = 0; i < count; ++i) {
    const int v = vs[rng() % 3];
    const int l = ls[rng() % 2];
    const int t = ts[rng() % 3];
    const std::uint64_t s = rng();
    out.push_back(oracle::make_toy(v, l, t, "dirichlet:1.0", s, policy));
  }
  return out;
}

int cmd_simulate(const SimulatorSettings& settings, const std::string& output_dir, std::ostream& log) {
  try {
    const auto dir = prepare_output_dir(output_dir);
    const auto& model = settings.model;
    const auto traces = oracle::generate_traces(model, settings.instances);
    {
      auto out = open_output(dir / "traces.jsonl");
      write_traces(traces, out, oracle::toy_header(model));
    }
    json report;
    bool all_hold = true;
    if (settings.sweep > 0) {
      json entries = json::array();
      for (const auto& m : sweep_models(settings.sweep, model.seed, model.unmask_policy)) {
        const auto r = oracle::verify_error_bound(m, settings.samples, settings.mode);
        all_hold = all_hold && r.inequality_holds;
        json e = theorem_report_to_json(r);
        e["vocab_size"] = m.vocab_size;
        e["length"] = m.length;
        e["steps"] = m.steps;
        e["seed"] = m.seed;
        fmt::print(log, "V={} L={} T={} seed={}: E[u_AD]={:.6f} L={:.6f} holds={}\n", m.vocab_size,
                   m.length, m.steps, m.seed, r.mean_u_ad.value, r.loss.value, r.inequality_holds);
        entries.push_back(std::move(e));
      }
      report = {{"sweep", std::move(entries)}, {"all_hold", all_hold}};
    } else {
      const auto r = oracle::verify_error_bound(model, settings.samples, settings.mode);
      all_hold = r.inequality_holds;
      report = theorem_report_to_json(r);
      report["vocab_size"] = model.vocab_size;
      report["length"] = model.length;
      report["steps"] = model.steps;
      report["seed"] = model.seed;
      report["dist"] = settings.dist;
    }
    auto out = open_output(dir / "theorem_report.json");
    out << report.dump(2) << '\n';
    fmt::print(log, "wrote {} trace(s); inequality {}\n", traces.size(), all_hold ? "holds" : "VIOLATED");
    return all_hold ? kExitOk : kExitInstanceFailures;
  } catch (const oracle::OracleError& e) {
    fmt::print(log, "error: {}\n", e.what());
  } catch (const UsageError& e) {
    fmt::print(log, "error: {}\n", e.what());
  }
  return kExitUsage;
}

int cmd_validate(const std::vector<std::string>& paths, std::ostream& out, std::ostream& log) {
  if (paths.empty()) {
    fmt::print(log, "error: no trace files given\n");
    return kExitUsage;
  }
  std::size_t checked = 0;
  std::size_t bad = 0;
  for (const auto& path : paths) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
      fmt::print(log, "error: cannot open '{}'\n", path);
      return kExitUsage;
    }
    try {
      TraceReader reader(in);
      while (true) {
        std::optional<InstanceTrace> t;
        try {
          t = reader.next();
        } catch (const TraceFormatError& e) {
          ++bad;
          fmt::print(out, "{}\tbyte {}\t{}\tformat\t{}\n", path, e.offset(),
                     e.instance_id().value_or("-"), e.what());
          continue;
        }
        if (!t) break;
        ++checked;
        const auto violations = validate(*t);
        if (!violations.empty()) ++bad;
        for (const auto& v : violations) {
          fmt::print(out, "{}\t{}\t{}\t{}\t{}\n", path, t->instance_id, v.invariant, v.location, v.detail);
        }
      }
    } catch (const TraceError& e) {
      // Header-level problems make the whole file unusable.
      ++bad;
      fmt::print(out, "{}\t-\t-\theader\t{}\n", path, e.what());
    }
  }
  fmt::print(log, "checked {} trace(s), {} with problems\n", checked, bad);
  return bad ? kExitInstanceFailures : kExitOk;
}

int cmd_report(const std::vector<std::string>& metric_paths, const std::string& output_csv,
               std::ostream& log) {
  try {
    if (metric_paths.empty()) throw UsageError("no metric files given");
    std::vector<std::string> datasets;
    std::map<std::pair<std::string, std::string>, std::map<std::string, double>> cells;
    for (const auto& path : metric_paths) {
      require_file(path, "metric file");
      json metrics;
      try {
        metrics = read_json_file(path);
        if (!metrics.is_array()) throw UsageError("expected a JSON array");
        for (const auto& m : metrics) {
          std::string dataset = m.value("dataset", std::string());
          if (dataset.empty()) dataset = fs::path(path).parent_path().filename().string();
          if (dataset.empty()) dataset = fs::path(path).stem().string();
          if (std::find(datasets.begin(), datasets.end(), dataset) == datasets.end()) {
            datasets.push_back(dataset);
          }
          if (!m.contains("value") || m.at("value").is_null()) continue;
          cells[{m.at("signal").get<std::string>(), m.at("metric").get<std::string>()}][dataset] =
              m.at("value").get<double>();
        }
      } catch (const UsageError&) {
        throw;
      } catch (const std::exception& e) {
        throw UsageError(fmt::format("{}: {}", path, e.what()));
      }
    }
    std::ofstream out(output_csv, std::ios::binary);
    if (!out) throw UsageError(fmt::format("cannot write '{}'", output_csv));
    out << "signal,metric";
    for (const auto& d : datasets) out << ',' << d;
    out << ",mean\n";
    for (const auto& [key, row] : cells) {
      out << key.first << ',' << key.second;
      double sum = 0.0;
      for (const auto& d : datasets) {
        out << ',';
        if (auto it = row.find(d); it != row.end()) {
          out << fmt::format("{}", it->second);
          sum += it->second;
        }
      }
      out << ',' << fmt::format("{}", sum / static_cast<double>(row.size())) << '\n';
    }
    return kExitOk;
  } catch (const UsageError& e) {
    fmt::print(log, "error: {}\n", e.what());
  } catch (const ConfigError& e) {
    fmt::print(log, "error: {}\n", e.what());
  }
  return kExitUsage;
}

}  // namespace dlmuq
