#include "dlmuq/signals.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace dlmuq {

namespace {

// Mean over a block's steps of the per-step mean of `field`, accumulated over
// valid blocks and normalized by their total step count.
template <typename Field>
SignalValue trajectory_mean(const InstanceTrace& trace, const char* name, Field field) {
  const auto blocks = valid_blocks(trace);
  if (blocks.empty()) return SignalValue::undefined(name);
  double total = 0.0;
  long steps = 0;
  for (int b : blocks) {
    const auto idx = trace.block_step_indices(b);
    if (idx.empty()) return SignalValue::undefined(name);
    const double lb = static_cast<double>(trace.block_length(b));
    for (std::size_t i : idx) {
      double step_sum = 0.0;
      for (const auto& obs : trace.steps[i].positions) step_sum += field(obs);
      total += step_sum / lb;
    }
    steps += static_cast<long>(idx.size());
  }
  return SignalValue::defined(name, total / static_cast<double>(steps));
}

}  // namespace

SignalValue mcnll(const InstanceTrace& trace) {
  const int y_len = content_length(trace);
  // Single-token outputs are not masked.
  if (trace.mc_samples.empty() || y_len <= 1) return SignalValue::undefined("mcnll");
  double acc = 0.0;
  for (const auto& s : trace.mc_samples) {
    if (s.l < 1 || s.l > y_len) {
      throw SignalDataError(fmt::format("trace '{}': mc sample {} has l={} outside 1..{}",
                                        trace.instance_id, s.sample_index, s.l, y_len));
    }
    acc += static_cast<double>(y_len) / static_cast<double>(s.l) * s.sum_logprob;
  }
  return SignalValue::defined("mcnll", -acc / static_cast<double>(trace.mc_samples.size()));
}

SignalValue mcnll_norm(const InstanceTrace& trace) {
  SignalValue v = mcnll(trace);
  v.name = "mcnll_norm";
  if (v.well_defined) v.value /= static_cast<double>(content_length(trace));
  return v;
}

SignalValue traj_nll(const InstanceTrace& trace) {
  SignalValue v =
      trajectory_mean(trace, "traj_nll", [](const PositionObs& o) { return o.argmax_logprob; });
  if (v.well_defined) v.value = -v.value;
  return v;
}

SignalValue traj_entropy(const InstanceTrace& trace) {
  return trajectory_mean(trace, "traj_entropy", [](const PositionObs& o) { return o.entropy; });
}

SignalValue commit_nll(const InstanceTrace& trace) {
  const int y_len = content_length(trace);
  if (y_len == 0) return SignalValue::undefined("commit_nll");
  const Vocab& vocab = trace.vocab();
  double acc = 0.0;
  for (int b = 0; b < trace.num_blocks(); ++b) {
    const auto idx = trace.block_step_indices(b);
    for (int k = 0; k < trace.block_length(b); ++k) {
      if (vocab.is_special(trace.final_tokens[b][k])) continue;
      const PositionObs* commit = nullptr;
      for (std::size_t i : idx) {
        const auto& positions = trace.steps[i].positions;
        if (static_cast<int>(positions.size()) > k && positions[k].committed_now) {
          commit = &positions[k];
        }
      }
      if (commit == nullptr) {
        throw SignalDataError(fmt::format("trace '{}': no commit recorded for block {} position {}",
                                          trace.instance_id, b, k));
      }
      acc += commit->argmax_logprob;
    }
  }
  return SignalValue::defined("commit_nll", -acc / static_cast<double>(y_len));
}

SignalValue nfe(const InstanceTrace& trace) {
  return SignalValue::defined("nfe", static_cast<double>(trace.nfe));
}

SignalValue remask(const InstanceTrace& trace, RemaskMode mode) {
  if (trace.nfe < 1) return SignalValue::undefined("remask");
  double total = 0.0;
  for (const auto& rec : trace.steps) {
    long count = 0;
    for (const auto& obs : rec.positions) {
      count += mode == RemaskMode::events ? obs.remasked_now : obs.was_masked;
    }
    total += static_cast<double>(count);
  }
  return SignalValue::defined("remask", total / static_cast<double>(trace.nfe));
}

SignalValue flip_count(const InstanceTrace& trace) {
  const int y_len = content_length(trace);
  if (y_len == 0) return SignalValue::undefined("flip_count");
  long flips = 0;
  for (int b = 0; b < trace.num_blocks(); ++b) {
    const auto idx = trace.block_step_indices(b);
    for (std::size_t s = 1; s < idx.size(); ++s) {
      const auto& prev = trace.steps[idx[s - 1]].positions;
      const auto& cur = trace.steps[idx[s]].positions;
      const std::size_t n = std::min(prev.size(), cur.size());
      for (std::size_t k = 0; k < n; ++k) flips += prev[k].argmax_token != cur[k].argmax_token;
    }
  }
  return SignalValue::defined("flip_count", static_cast<double>(flips) / y_len);
}

const std::vector<std::string>& signal_catalog() {
  static const std::vector<std::string> names{"mcnll",      "mcnll_norm", "traj_nll",
                                              "traj_entropy", "commit_nll", "nfe",
                                              "remask",     "flip_count"};
  return names;
}

bool is_signal_name(const std::string& name) {
  const auto& c = signal_catalog();
  return std::find(c.begin(), c.end(), name) != c.end();
}

SignalValue compute_signal(const InstanceTrace& trace, const std::string& name,
                           const SignalOptions& options) {
  if (name == "mcnll") return mcnll(trace);
  if (name == "mcnll_norm") return mcnll_norm(trace);
  if (name == "traj_nll") return traj_nll(trace);
  if (name == "traj_entropy") return traj_entropy(trace);
  if (name == "commit_nll") return commit_nll(trace);
  if (name == "nfe") return nfe(trace);
  if (name == "remask") return remask(trace, options.remask_mode);
  if (name == "flip_count") return flip_count(trace);
  throw std::invalid_argument("unknown signal '" + name + "'");
}

UncertaintyReport score_all(const InstanceTrace& trace, std::span<const std::string> selection,
                            const SignalOptions& options) {
  for (const auto& name : selection) {
    if (!is_signal_name(name)) throw std::invalid_argument("unknown signal '" + name + "'");
  }
  UncertaintyReport report;
  report.instance_id = trace.instance_id;
  for (const auto& name : selection) {
    report.signals[name] = compute_signal(trace, name, options);
  }
  return report;
}

}  // namespace dlmuq
