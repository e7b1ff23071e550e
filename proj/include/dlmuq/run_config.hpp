#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dlmuq/cocoa.hpp"
#include "dlmuq/oracle.hpp"
#include "dlmuq/signals.hpp"
#include "dlmuq/similarity.hpp"

namespace dlmuq {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One requested score: a catalog signal, an AD variant, or a D-CoCoA variant.
struct ScoreSpec {
  enum class Kind { signal, dissimilarity, cocoa };
  Kind kind = Kind::signal;
  std::string name;  // report key
  ViewKind view = ViewKind::full;
  bool weighted = false;
  std::string info_signal;
  bool include_nfe = false;
};

/// Parses "mcnll", "ad_full", "ad_prog_block", "d_cocoa_local", ... or a
/// custom variant object {"variant_name", "info_signal", "view", "weighted",
/// "include_nfe"}.
ScoreSpec parse_score_spec(const nlohmann::json& j);
/// Every catalog signal, every AD view (plain and progressive), and both
/// named D-CoCoA variants.
std::vector<ScoreSpec> default_score_specs();

struct EvalSettings {
  std::string metric = "prr";  // prr | roc_auc
  std::string preset;
  std::optional<double> threshold;
  double max_reject = 0.5;
  std::vector<std::string> signals;  // empty: every signal found in the reports
  std::string dataset;
};

struct IoSettings {
  std::vector<std::string> traces;
  std::string reports;
  std::string quality;
  std::vector<std::string> metrics;
  std::string output_dir = ".";
};

struct RunConfig {
  std::vector<ScoreSpec> scores;
  SimilarityConfig provider;
  RenderMasks render_masks = RenderMasks::sentinel;
  RemaskMode remask_mode = RemaskMode::events;
  EvalSettings eval;
  IoSettings io;
  std::uint64_t seed = 0;
  unsigned jobs = 0;  // 0: hardware concurrency
  bool strict = false;
};

/// Strict parse: unknown keys are rejected.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

struct SimulatorSettings {
  oracle::ToyDiffusion model;
  std::string dist = "uniform";
  int instances = 100;
  std::size_t samples = 10000;
  oracle::LossMode mode = oracle::LossMode::monte_carlo;
  int sweep = 0;  // > 0: randomized theorem sweep over this many configs
};

/// Simulator config file: vocab_size, length, steps, unmask_policy, dist
/// ("uniform" | "dirichlet:<alpha>" | explicit table), seed, plus optional
/// instances, samples, mode, decode, num_blocks, mc_samples, remask_prob, sweep.
SimulatorSettings parse_simulator_config(const nlohmann::json& j);

nlohmann::json read_json_file(const std::string& path);

}  // namespace dlmuq
