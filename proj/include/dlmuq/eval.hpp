#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dlmuq/signals.hpp"

namespace dlmuq::eval {

struct EvalRecord {
  std::string instance_id;
  double quality = 0.0;
  double uncertainty = 0.0;
};

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class OrderKind { by_uncertainty, oracle, random };

struct RejectionOrder {
  OrderKind kind = OrderKind::by_uncertainty;
  std::uint64_t seed = 0;  // random only

  static RejectionOrder by_uncertainty() { return {OrderKind::by_uncertainty, 0}; }
  static RejectionOrder oracle() { return {OrderKind::oracle, 0}; }
  static RejectionOrder random(std::uint64_t seed) { return {OrderKind::random, seed}; }
};

struct CurvePoint {
  double reject_fraction = 0.0;
  double mean_quality = 0.0;
};

inline constexpr double kDefaultMaxReject = 0.5;

/// Mean quality of the retained records after rejecting k of n, for
/// k = 0..floor(max_reject * n).
///
/// by_uncertainty rejects the highest uncertainty first (ties: ascending
/// instance_id); oracle rejects the lowest quality first (same tie rule);
/// random rejects in a seeded shuffle order.
std::vector<CurvePoint> rejection_curve(std::span<const EvalRecord> records, RejectionOrder order,
                                        double max_reject = kDefaultMaxReject);

/// Trapezoidal area under curve points.
double curve_area(std::span<const CurvePoint> curve);

struct PRRResult {
  double prr = 0.0;
  double auc_unc = 0.0;
  double auc_oracle = 0.0;
  double auc_random = 0.0;
  bool degenerate = false;
};

/// Prediction rejection ratio over rejection rates up to max_reject. The
/// random baseline is the flat curve at the overall mean quality.
PRRResult prr(std::span<const EvalRecord> records, double max_reject = kDefaultMaxReject);

/// PRR with an empirical random baseline: the mean area over `shuffles`
/// seeded random orders.
PRRResult prr_empirical_random(std::span<const EvalRecord> records, std::size_t shuffles,
                               std::uint64_t seed, double max_reject = kDefaultMaxReject);

/// ROC-AUC of uncertainty as a score for the negative class (quality below
/// threshold), via rank sums with midranks for ties.
double roc_auc(std::span<const EvalRecord> records, double threshold);

/// Quality thresholds for ROC-AUC labels.
struct TaskPreset {
  std::string name;
  double threshold;
};
const std::vector<TaskPreset>& task_presets();
std::optional<double> preset_threshold(const std::string& name);

struct JoinStats {
  std::size_t matched = 0;
  std::size_t unmatched_reports = 0;
  std::size_t unmatched_qualities = 0;
  std::size_t excluded = 0;  // matched but the signal was not well defined
};

struct QualityRecord {
  std::string instance_id;
  double quality = 0.0;
};

/// Inner join of reports and qualities on instance_id for one signal.
/// Duplicate ids on either side are an error. Output follows report order.
std::vector<EvalRecord> join(std::span<const UncertaintyReport> reports,
                             std::span<const QualityRecord> qualities, const std::string& signal,
                             JoinStats* stats = nullptr);

/// Quality file: JSON Lines {"instance_id":..., "quality": float}.
std::vector<QualityRecord> read_qualities(std::istream& in);

}  // namespace dlmuq::eval
