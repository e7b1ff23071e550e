#include "dlmuq/dissimilarity.hpp"

#include <algorithm>

#include <fmt/format.h>

namespace dlmuq {

namespace {

struct PendingTrajectory {
  int block;      // block index used in precomputed keys
  TrajectoryView view;
  int steps;
};

}  // namespace

std::optional<DissimilarityProfile> dissimilarity_profile(const InstanceTrace& trace, ViewKind view,
                                                          const SimilarityProvider& provider,
                                                          RenderMasks render_masks) {
  std::vector<PendingTrajectory> pending;
  switch (view) {
    case ViewKind::block:
      for (int b : valid_blocks(trace)) {
        pending.push_back({b, TrajectoryView::of_block(b), 0});
      }
      break;
    case ViewKind::last:
    case ViewKind::last_prefix: {
      const auto last = last_valid_block(trace);
      if (!last) return std::nullopt;
      pending.push_back({*last, {view, *last}, 0});
      break;
    }
    case ViewKind::full:
      pending.push_back({0, TrajectoryView::full(), 0});
      break;
  }
  if (pending.empty()) return std::nullopt;
  for (auto& p : pending) {
    p.steps = view_steps(trace, p.view);
    if (p.steps == 0) return std::nullopt;
  }

  DissimilarityProfile profile;
  if (provider.kind() == ProviderKind::precomputed) {
    if (!trace.precomputed_similarity) {
      throw DissimilarityError("trace '" + trace.instance_id + "' carries no precomputed similarity");
    }
    for (const auto& p : pending) {
      DissimilarityProfile::Trajectory traj{p.block, {}};
      for (int t = 1; t <= p.steps; ++t) {
        const SimilarityKey key{view, p.block, t};
        const auto it = trace.precomputed_similarity->find(key);
        if (it == trace.precomputed_similarity->end()) {
          throw DissimilarityError(fmt::format("trace '{}': no precomputed similarity for ({}, {}, {})",
                                               trace.instance_id, to_string(view), p.block, t));
        }
        traj.d.push_back(1.0 - std::clamp(it->second, 0.0, 1.0));
      }
      profile.trajectories.push_back(std::move(traj));
    }
    return profile;
  }

  std::vector<SimilarityPair> pairs;
  const Vocab& vocab = trace.vocab();
  for (const auto& p : pending) {
    const auto reference = render_sequence(vocab, view_reference(trace, p.view), render_masks);
    for (int t = 1; t <= p.steps; ++t) {
      pairs.push_back({render_sequence(vocab, intermediate_sequence(trace, p.view, t), render_masks),
                       reference});
    }
  }
  const auto sims = similarity_batch(provider, pairs);
  std::size_t next = 0;
  for (const auto& p : pending) {
    DissimilarityProfile::Trajectory traj{p.block, {}};
    for (int t = 1; t <= p.steps; ++t) traj.d.push_back(1.0 - sims[next++]);
    profile.trajectories.push_back(std::move(traj));
  }
  return profile;
}

double progressive_weight(int s, int T) {
  return static_cast<double>(T - s + 1) / static_cast<double>(T);
}

namespace {

// Mean over trajectories of (1/T) * sum_s weight(s, T) * D_s.
template <typename Weight>
double weighted_profile_mean(const DissimilarityProfile& profile, Weight weight) {
  double acc = 0.0;
  for (const auto& traj : profile.trajectories) {
    const int T = static_cast<int>(traj.d.size());
    double sum = 0.0;
    for (int s = 1; s <= T; ++s) sum += weight(s, T) * traj.d[s - 1];
    acc += sum / static_cast<double>(T);
  }
  return acc / static_cast<double>(profile.trajectories.size());
}

}  // namespace

double profile_average(const DissimilarityProfile& profile) {
  return weighted_profile_mean(profile, [](int, int) { return 1.0; });
}

double profile_progressive(const DissimilarityProfile& profile) {
  return weighted_profile_mean(profile, progressive_weight);
}

double profile_lower_bound(const DissimilarityProfile& profile) {
  return weighted_profile_mean(profile, [](int, int T) { return 1.0 / static_cast<double>(T); });
}

std::string ad_signal_name(ViewKind view, bool weighted) {
  return (weighted ? "ad_prog_" : "ad_") + to_string(view);
}

SignalValue average_dissimilarity(const InstanceTrace& trace, const ADConfig& config) {
  if (!config.provider) throw std::invalid_argument("ADConfig without a similarity provider");
  const std::string name = ad_signal_name(config.view, config.weighted);
  const auto profile = dissimilarity_profile(trace, config.view, *config.provider, config.render_masks);
  if (!profile) return SignalValue::undefined(name);
  return SignalValue::defined(
      name, config.weighted ? profile_progressive(*profile) : profile_average(*profile));
}

SignalValue progressive_dissimilarity(const InstanceTrace& trace, const ADConfig& config) {
  ADConfig weighted = config;
  weighted.weighted = true;
  return average_dissimilarity(trace, weighted);
}

}  // namespace dlmuq
