#pragma once

#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dlmuq/trace.hpp"

namespace dlmuq {

/// One scalar uncertainty score. Larger means more uncertain. `value` is
/// meaningful only when `well_defined` is set.
struct SignalValue {
  std::string name;
  double value = 0.0;
  bool well_defined = false;

  static SignalValue defined(std::string name, double value) {
    return {std::move(name), value, true};
  }
  static SignalValue undefined(std::string name) { return {std::move(name), 0.0, false}; }
};

struct UncertaintyReport {
  std::string instance_id;
  std::map<std::string, SignalValue> signals;
};

/// Inconsistent trace data (as opposed to an unmet precondition, which
/// yields an undefined SignalValue).
class SignalDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// How the remask signal counts per-step positions: remask events, or
/// positions that are masked when entering the step.
enum class RemaskMode { events, masked_state };

struct SignalOptions {
  RemaskMode remask_mode = RemaskMode::events;
};

inline constexpr int kDefaultMcSamples = 16;

SignalValue mcnll(const InstanceTrace& trace);
SignalValue mcnll_norm(const InstanceTrace& trace);
SignalValue traj_nll(const InstanceTrace& trace);
SignalValue traj_entropy(const InstanceTrace& trace);
SignalValue commit_nll(const InstanceTrace& trace);
SignalValue nfe(const InstanceTrace& trace);
SignalValue remask(const InstanceTrace& trace, RemaskMode mode = RemaskMode::events);
SignalValue flip_count(const InstanceTrace& trace);

/// Names accepted by score_all / compute_signal.
const std::vector<std::string>& signal_catalog();
bool is_signal_name(const std::string& name);

SignalValue compute_signal(const InstanceTrace& trace, const std::string& name,
                           const SignalOptions& options = {});

UncertaintyReport score_all(const InstanceTrace& trace, std::span<const std::string> selection,
                            const SignalOptions& options = {});

}  // namespace dlmuq
