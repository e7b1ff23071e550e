#include "dlmuq/eval.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <random>
#include <unordered_map>
#include <unordered_set>

#include <fmt/format.h>
#include <json.hpp>

namespace dlmuq::eval {

namespace {

std::vector<std::size_t> rejection_order(std::span<const EvalRecord> records, RejectionOrder order) {
  std::vector<std::size_t> idx(records.size());
  std::iota(idx.begin(), idx.end(), 0);
  switch (order.kind) {
    case OrderKind::by_uncertainty:
      std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (records[a].uncertainty != records[b].uncertainty) {
          return records[a].uncertainty > records[b].uncertainty;
        }
        return records[a].instance_id < records[b].instance_id;
      });
      break;
    case OrderKind::oracle:
      std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (records[a].quality != records[b].quality) return records[a].quality < records[b].quality;
        return records[a].instance_id < records[b].instance_id;
      });
      break;
    case OrderKind::random: {
      std::mt19937_64 rng(order.seed);
      std::shuffle(idx.begin(), idx.end(), rng);
      break;
    }
  }
  return idx;
}

void check_records(std::span<const EvalRecord> records, double max_reject) {
  if (records.size() < 2) {
    throw EvalError(fmt::format("need at least 2 records, got {}", records.size()));
  }
  if (!(max_reject > 0.0 && max_reject <= 1.0)) {
    throw EvalError(fmt::format("max_reject {} outside (0, 1]", max_reject));
  }
  for (const auto& r : records) {
    if (!std::isfinite(r.quality) || !std::isfinite(r.uncertainty)) {
      throw EvalError("record '" + r.instance_id + "' has a non-finite value");
    }
  }
}

std::size_t max_rejected(std::size_t n, double max_reject) {
  return static_cast<std::size_t>(std::floor(max_reject * static_cast<double>(n)));
}

}  // namespace

std::vector<CurvePoint> rejection_curve(std::span<const EvalRecord> records, RejectionOrder order,
                                        double max_reject) {
  check_records(records, max_reject);
  const std::size_t n = records.size();
  const auto idx = rejection_order(records, order);
  // Suffix sums: retained set after rejecting k is idx[k..n).
  std::vector<double> suffix(n + 1, 0.0);
  for (std::size_t i = n; i-- > 0;) suffix[i] = suffix[i + 1] + records[idx[i]].quality;
  const std::size_t k_max = std::min(max_rejected(n, max_reject), n - 1);
  std::vector<CurvePoint> curve;
  curve.reserve(k_max + 1);
  for (std::size_t k = 0; k <= k_max; ++k) {
    curve.push_back({static_cast<double>(k) / static_cast<double>(n),
                     suffix[k] / static_cast<double>(n - k)});
  }
  return curve;
}

double curve_area(std::span<const CurvePoint> curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    area += 0.5 * (curve[i].mean_quality + curve[i - 1].mean_quality) *
            (curve[i].reject_fraction - curve[i - 1].reject_fraction);
  }
  return area;
}

namespace {

PRRResult finish_prr(double auc_unc, double auc_oracle, double auc_random, double scale) {
  PRRResult r;
  r.auc_unc = auc_unc;
  r.auc_oracle = auc_oracle;
  r.auc_random = auc_random;
  const double denom = auc_oracle - auc_random;
  // Flat-quality data leaves only rounding noise between oracle and random.
  if (!(denom > 1e-12 * std::max(scale, 1e-300))) {
    r.degenerate = true;
    r.prr = 0.0;
    return r;
  }
  r.prr = (auc_unc - auc_random) / denom;
  return r;
}

}  // namespace

PRRResult prr(std::span<const EvalRecord> records, double max_reject) {
  const auto unc = rejection_curve(records, RejectionOrder::by_uncertainty(), max_reject);
  const auto orc = rejection_curve(records, RejectionOrder::oracle(), max_reject);
  const double mean = unc.front().mean_quality;
  const double width = unc.back().reject_fraction;
  const double scale = std::max(std::abs(mean), 1.0) * std::max(width, 1.0 / records.size());
  return finish_prr(curve_area(unc), curve_area(orc), width * mean, scale);
}

PRRResult prr_empirical_random(std::span<const EvalRecord> records, std::size_t shuffles,
                               std::uint64_t seed, double max_reject) {
  if (shuffles == 0) throw EvalError("empirical random baseline needs at least one shuffle");
  const auto unc = rejection_curve(records, RejectionOrder::by_uncertainty(), max_reject);
  const auto orc = rejection_curve(records, RejectionOrder::oracle(), max_reject);
  double random_area = 0.0;
  for (std::size_t s = 0; s < shuffles; ++s) {
    random_area += curve_area(rejection_curve(records, RejectionOrder::random(seed + s), max_reject));
  }
  random_area /= static_cast<double>(shuffles);
  const double scale = std::max(std::abs(unc.front().mean_quality), 1.0) *
                       std::max(unc.back().reject_fraction, 1.0 / records.size());
  return finish_prr(curve_area(unc), curve_area(orc), random_area, scale);
}

double roc_auc(std::span<const EvalRecord> records, double threshold) {
  const std::size_t n = records.size();
  std::size_t n_pos = 0;
  for (const auto& r : records) {
    if (!std::isfinite(r.quality) || !std::isfinite(r.uncertainty)) {
      throw EvalError("record '" + r.instance_id + "' has a non-finite value");
    }
    n_pos += r.quality >= threshold;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw EvalError(fmt::format("ROC-AUC needs both classes: {} positive, {} negative at threshold {}",
                                n_pos, n_neg, threshold));
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return records[a].uncertainty < records[b].uncertainty; });
  // Midranks (1-based) summed over the negative class.
  double neg_rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && records[idx[j]].uncertainty == records[idx[i]].uncertainty) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t m = i; m < j; ++m) {
      if (records[idx[m]].quality < threshold) neg_rank_sum += midrank;
    }
    i = j;
  }
  const double neg = static_cast<double>(n_neg);
  return (neg_rank_sum - neg * (neg + 1.0) / 2.0) / (neg * static_cast<double>(n_pos));
}

const std::vector<TaskPreset>& task_presets() {
  static const std::vector<TaskPreset> presets{
      {"qa", 0.3}, {"summ", 0.3}, {"mt", 0.8}, {"accuracy", 0.5}};
  return presets;
}

std::optional<double> preset_threshold(const std::string& name) {
  for (const auto& p : task_presets()) {
    if (p.name == name) return p.threshold;
  }
  return std::nullopt;
}

std::vector<EvalRecord> join(std::span<const UncertaintyReport> reports,
                             std::span<const QualityRecord> qualities, const std::string& signal,
                             JoinStats* stats) {
  std::unordered_map<std::string, double> quality_by_id;
  for (const auto& q : qualities) {
    if (!quality_by_id.emplace(q.instance_id, q.quality).second) {
      throw EvalError("duplicate instance_id '" + q.instance_id + "' in quality records");
    }
  }
  std::unordered_set<std::string> seen;
  JoinStats local;
  std::vector<EvalRecord> out;
  for (const auto& r : reports) {
    if (!seen.insert(r.instance_id).second) {
      throw EvalError("duplicate instance_id '" + r.instance_id + "' in uncertainty reports");
    }
    const auto q = quality_by_id.find(r.instance_id);
    if (q == quality_by_id.end()) {
      ++local.unmatched_reports;
      continue;
    }
    ++local.matched;
    const auto s = r.signals.find(signal);
    if (s == r.signals.end() || !s->second.well_defined) {
      ++local.excluded;
      continue;
    }
    out.push_back({r.instance_id, q->second, s->second.value});
  }
  for (const auto& q : qualities) {
    if (!seen.count(q.instance_id)) ++local.unmatched_qualities;
  }
  if (stats) *stats = local;
  return out;
}

std::vector<QualityRecord> read_qualities(std::istream& in) {
  std::vector<QualityRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      QualityRecord q{j.at("instance_id").get<std::string>(), j.at("quality").get<double>()};
      if (!std::isfinite(q.quality)) throw EvalError("non-finite quality");
      out.push_back(std::move(q));
    } catch (const std::exception& e) {
      throw EvalError(fmt::format("quality file line {}: {}", line_no, e.what()));
    }
  }
  return out;
}

}  // namespace dlmuq::eval
