#pragma once

#include <memory>
#include <string>
#include <vector>

#include "dlmuq/signals.hpp"
#include "dlmuq/similarity.hpp"
#include "dlmuq/trace.hpp"

namespace dlmuq {

struct ADConfig {
  ViewKind view = ViewKind::full;
  bool weighted = false;  // progressive weighting
  std::shared_ptr<const SimilarityProvider> provider;
  RenderMasks render_masks = RenderMasks::sentinel;
};

/// Per-step dissimilarities D_t = 1 - sim(state_t, reference) in generation
/// order. The block view holds one trajectory per valid block; the other
/// views hold exactly one.
struct DissimilarityProfile {
  struct Trajectory {
    int block = 0;
    std::vector<double> d;
  };
  std::vector<Trajectory> trajectories;
};

class DissimilarityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Empty optional when the view has no trajectory to score (no valid block,
/// or a trajectory without steps).
std::optional<DissimilarityProfile> dissimilarity_profile(const InstanceTrace& trace, ViewKind view,
                                                          const SimilarityProvider& provider,
                                                          RenderMasks render_masks);

/// Weight of the s-th generation step (s = 1 earliest) among T: (T - s + 1) / T.
double progressive_weight(int s, int T);

/// Mean of D over steps, averaged over trajectories.
double profile_average(const DissimilarityProfile& profile);
/// Progress-weighted mean, averaged over trajectories.
double profile_progressive(const DissimilarityProfile& profile);
/// AD / T per trajectory, averaged over trajectories; the lower progressive
/// bound. Accumulated term by term so that
///   profile_lower_bound <= profile_progressive <= profile_average
/// holds in floating point as well as in exact arithmetic.
double profile_lower_bound(const DissimilarityProfile& profile);

/// Unweighted AD under config.view, or the progressive variant when
/// config.weighted is set.
SignalValue average_dissimilarity(const InstanceTrace& trace, const ADConfig& config);
SignalValue progressive_dissimilarity(const InstanceTrace& trace, const ADConfig& config);

/// Report name of an AD signal, e.g. "ad_full" or "ad_prog_block".
std::string ad_signal_name(ViewKind view, bool weighted);

}  // namespace dlmuq
