#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "dlmuq/oracle.hpp"
#include "dlmuq/run_config.hpp"

namespace dlmuq {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInstanceFailures = 1;
inline constexpr int kExitUsage = 2;

/// Provider settings after the DLMUQ_SIM_ENDPOINT override.
SimilarityConfig effective_similarity_config(const RunConfig& config);

/// Scores one trace under every spec. Throws on inconsistent trace data.
UncertaintyReport score_instance(const InstanceTrace& trace, const std::vector<ScoreSpec>& specs,
                                 const RunConfig& config,
                                 const std::shared_ptr<const SimilarityProvider>& provider);

/// Reads config.io.traces, writes <output_dir>/report.jsonl.
int cmd_score(const RunConfig& config, std::ostream& log);

/// Joins config.io.reports with config.io.quality, writes
/// <output_dir>/metrics.json and <output_dir>/curves.csv.
int cmd_eval(const RunConfig& config, std::ostream& log);

/// Writes <output_dir>/traces.jsonl and <output_dir>/theorem_report.json.
int cmd_simulate(const SimulatorSettings& settings, const std::string& output_dir, std::ostream& log);

/// Lists violations of every trace in `paths` to `out`.
int cmd_validate(const std::vector<std::string>& paths, std::ostream& out, std::ostream& log);

/// Merges metric files into one CSV: signal, metric, one column per dataset, mean.
int cmd_report(const std::vector<std::string>& metric_paths, const std::string& output_csv,
               std::ostream& log);

nlohmann::json theorem_report_to_json(const oracle::TheoremReport& report);

/// Toy configurations of the randomized theorem sweep: V in {2,3,4}, L in
/// {2,3}, T in {2,4,8}, Dirichlet(1.0) tables, per-config seeds drawn from `seed`.
std::vector<oracle::ToyDiffusion> sweep_models(int count, std::uint64_t seed,
                                               oracle::UnmaskPolicy policy);

}  // namespace dlmuq
