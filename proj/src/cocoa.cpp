#include "dlmuq/cocoa.hpp"

#include <algorithm>
#include <array>

namespace dlmuq {

bool is_info_signal(const std::string& name) {
  static const std::array<const char*, 5> names{"mcnll", "mcnll_norm", "traj_nll", "traj_entropy",
                                                "commit_nll"};
  return std::any_of(names.begin(), names.end(), [&](const char* n) { return name == n; });
}

SignalValue d_cocoa(const InstanceTrace& trace, const CocoaConfig& config,
                    const SignalOptions& options) {
  if (!is_info_signal(config.info_signal)) {
    throw std::invalid_argument("'" + config.info_signal + "' cannot serve as information signal");
  }
  const SignalValue info = compute_signal(trace, config.info_signal, options);
  if (!info.well_defined) return SignalValue::undefined(config.variant_name);
  const SignalValue ad = average_dissimilarity(trace, config.consistency);
  if (!ad.well_defined) return SignalValue::undefined(config.variant_name);
  const double consistency =
      config.include_nfe ? static_cast<double>(trace.nfe) * ad.value : ad.value;
  return SignalValue::defined(config.variant_name, info.value * consistency);
}

CocoaConfig local_cocoa_config(std::shared_ptr<const SimilarityProvider> provider,
                               RenderMasks render_masks) {
  return {"commit_nll", {ViewKind::block, false, std::move(provider), render_masks}, false,
          "d_cocoa_local"};
}

CocoaConfig global_cocoa_config(std::shared_ptr<const SimilarityProvider> provider,
                                RenderMasks render_masks) {
  return {"mcnll_norm", {ViewKind::full, false, std::move(provider), render_masks}, true,
          "d_cocoa_global"};
}

SignalValue d_cocoa_local(const InstanceTrace& trace,
                          std::shared_ptr<const SimilarityProvider> provider,
                          RenderMasks render_masks) {
  return d_cocoa(trace, local_cocoa_config(std::move(provider), render_masks));
}

SignalValue d_cocoa_global(const InstanceTrace& trace,
                           std::shared_ptr<const SimilarityProvider> provider,
                           RenderMasks render_masks) {
  return d_cocoa(trace, global_cocoa_config(std::move(provider), render_masks));
}

}  // namespace dlmuq
