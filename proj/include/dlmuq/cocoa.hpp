#pragma once

#include <string>

#include "dlmuq/dissimilarity.hpp"
#include "dlmuq/signals.hpp"

namespace dlmuq {

/// One point of the D-CoCoA ablation grid: an information-based signal,
/// trajectory dissimilarity, and an optional NFE factor.
struct CocoaConfig {
  std::string info_signal = "commit_nll";
  ADConfig consistency;
  bool include_nfe = false;
  std::string variant_name = "d_cocoa";
};

/// Signals allowed as the information factor.
bool is_info_signal(const std::string& name);

/// info * AD, or info * (NFE * AD) with include_nfe. Undefined when any factor is.
SignalValue d_cocoa(const InstanceTrace& trace, const CocoaConfig& config,
                    const SignalOptions& options = {});

/// commit_nll * unweighted block-view AD.
CocoaConfig local_cocoa_config(std::shared_ptr<const SimilarityProvider> provider,
                               RenderMasks render_masks = RenderMasks::sentinel);
/// mcnll_norm * (NFE * unweighted full-view AD).
CocoaConfig global_cocoa_config(std::shared_ptr<const SimilarityProvider> provider,
                                RenderMasks render_masks = RenderMasks::sentinel);

SignalValue d_cocoa_local(const InstanceTrace& trace,
                          std::shared_ptr<const SimilarityProvider> provider,
                          RenderMasks render_masks = RenderMasks::sentinel);
SignalValue d_cocoa_global(const InstanceTrace& trace,
                           std::shared_ptr<const SimilarityProvider> provider,
                           RenderMasks render_masks = RenderMasks::sentinel);

}  // namespace dlmuq
