#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dlmuq {

using TokenId = std::int32_t;

inline constexpr int kTraceFormatVersion = 1;

struct Vocab {
  std::vector<std::string> entries;  // indexed by token id
  TokenId mask_id = 0;
  std::vector<TokenId> special_ids;  // mask_id is expected to be listed here

  std::size_t size() const { return entries.size(); }
  bool contains(TokenId id) const {
    return id >= 0 && static_cast<std::size_t>(id) < entries.size();
  }
  bool is_special(TokenId id) const;

  bool operator==(const Vocab&) const = default;
};

struct TraceHeader {
  int format_version = kTraceFormatVersion;
  std::string model_name;
  std::string task;
  int max_steps_per_block = 1;
  int block_length = 1;
  int num_blocks = 1;
  Vocab vocab;

  bool operator==(const TraceHeader&) const = default;
};

/// Observation of one in-block position during one denoising step.
///
/// `argmax_token` is the token the sampler predicts for the position at this
/// step; positions that are already committed repeat their committed token.
struct PositionObs {
  int position = 0;
  TokenId argmax_token = 0;
  double argmax_logprob = 0.0;  // nats, <= 0
  double entropy = 0.0;         // nats, >= 0, over the full vocabulary
  bool was_masked = false;      // masked when entering this step
  bool committed_now = false;
  bool remasked_now = false;

  bool operator==(const PositionObs&) const = default;
};

struct StepRecord {
  int block = 0;
  int step = 1;  // 1-based generation order within the block
  std::vector<PositionObs> positions;

  bool operator==(const StepRecord&) const = default;
};

struct MCMaskSample {
  int sample_index = 0;
  int l = 0;
  std::vector<int> masked_positions;  // global output positions
  double sum_logprob = 0.0;

  bool operator==(const MCMaskSample&) const = default;
};

enum class ViewKind { block, last, last_prefix, full };

std::string to_string(ViewKind view);
ViewKind view_from_string(const std::string& name);

/// Key of an externally supplied similarity value. `block` is the block index
/// for the block view, the last valid block for last/last_prefix, and 0 for
/// the full view (where `step` is the global step).
struct SimilarityKey {
  ViewKind view = ViewKind::full;
  int block = 0;
  int step = 0;

  auto operator<=>(const SimilarityKey&) const = default;
};

using PrecomputedSimilarity = std::map<SimilarityKey, double>;

/// Recorded denoising trajectory of one generation.
///
/// `steps` is stored in global generation order; the steps of block b carry
/// step indices 1..T_b in order. Immutable once built.
struct InstanceTrace {
  std::string instance_id;
  std::shared_ptr<const TraceHeader> header;
  std::vector<std::vector<TokenId>> final_tokens;  // one sequence per block
  std::vector<StepRecord> steps;
  std::vector<int> steps_per_block;
  int nfe = 0;
  std::vector<MCMaskSample> mc_samples;
  std::optional<PrecomputedSimilarity> precomputed_similarity;

  const Vocab& vocab() const { return header->vocab; }
  int num_blocks() const { return static_cast<int>(final_tokens.size()); }
  int block_length(int block) const {
    return static_cast<int>(final_tokens.at(block).size());
  }
  /// Indices into `steps` of block b's steps, in generation order.
  std::vector<std::size_t> block_step_indices(int block) const;
  /// Concatenation of all blocks' final tokens.
  std::vector<TokenId> output() const;

  /// Equality on content; headers compare by value.
  bool same_content(const InstanceTrace& other) const;
};

/// |y|: number of non-special tokens in the final output.
int content_length(const InstanceTrace& trace);
bool is_valid_block(const InstanceTrace& trace, int block);
/// Indices of blocks holding at least one non-special final token.
std::vector<int> valid_blocks(const InstanceTrace& trace);
/// Highest-index valid block, if any.
std::optional<int> last_valid_block(const InstanceTrace& trace);

struct Violation {
  std::string invariant;
  std::string location;
  std::string detail;
};

/// Checks every trace invariant; empty result means the trace is valid.
std::vector<Violation> validate(const InstanceTrace& trace);

class TraceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A trajectory view together with the block it targets (block view only).
struct TrajectoryView {
  ViewKind kind = ViewKind::full;
  int block = 0;

  static TrajectoryView of_block(int b) { return {ViewKind::block, b}; }
  static TrajectoryView last() { return {ViewKind::last, 0}; }
  static TrajectoryView last_prefix() { return {ViewKind::last_prefix, 0}; }
  static TrajectoryView full() { return {ViewKind::full, 0}; }
};

/// Number of trajectory states T under a view (step indices run 1..T).
int view_steps(const InstanceTrace& trace, TrajectoryView view);

/// Intermediate argmax sequence after `step` steps of the view. Step 0 is the
/// fully masked start. A block whose steps are exhausted renders at its final
/// tokens; a block not yet started renders as mask_id.
std::vector<TokenId> intermediate_sequence(const InstanceTrace& trace,
                                           TrajectoryView view, int step);

/// Final-output counterpart of intermediate_sequence for the view.
std::vector<TokenId> view_reference(const InstanceTrace& trace,
                                    TrajectoryView view);

/// Deterministic detokenization: surface strings of non-special tokens in
/// order. Mask tokens become `mask_sentinel` when it is set, else dropped.
std::string render_text(const Vocab& vocab, const std::vector<TokenId>& tokens,
                        const std::optional<std::string>& mask_sentinel);

}  // namespace dlmuq
