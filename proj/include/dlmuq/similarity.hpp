#pragma once

#include <chrono>
#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dlmuq/trace.hpp"

namespace dlmuq {

enum class ProviderKind { exact_match, token_levenshtein, token_lcs, precomputed, remote };

std::string to_string(ProviderKind kind);
ProviderKind provider_kind_from_string(const std::string& name);

/// How mask tokens in intermediate states are shown to a similarity provider.
enum class RenderMasks { sentinel, strip };

std::string to_string(RenderMasks mode);
RenderMasks render_masks_from_string(const std::string& name);

inline const std::string kMaskSentinel = "␣[MASK]";

struct SimilarityConfig {
  ProviderKind kind = ProviderKind::token_lcs;
  std::string endpoint;  // remote only, e.g. "http://127.0.0.1:8080"
  std::size_t batch_size = 32;
  std::chrono::milliseconds timeout{30000};
  int retries = 3;
  std::size_t max_in_flight = 4;
  std::chrono::milliseconds backoff{200};  // first retry delay, doubled per retry
};

/// A sequence as seen by providers: token ids for the local providers and a
/// detokenized rendering for the remote one.
struct RenderedSequence {
  std::vector<TokenId> tokens;
  std::string text;

  /// Treats every byte of `text` as one token.
  static RenderedSequence from_text(std::string text);
};

struct SimilarityPair {
  RenderedSequence a;
  RenderedSequence b;
};

RenderedSequence render_sequence(const Vocab& vocab, const std::vector<TokenId>& tokens,
                                 RenderMasks mode);

class SimilarityProvider {
 public:
  virtual ~SimilarityProvider() = default;
  virtual ProviderKind kind() const = 0;
  /// One score in [0,1] per pair, in input order.
  virtual std::vector<double> similarity(std::span<const SimilarityPair> pairs) const = 0;
};

class SimilarityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Remote scoring failed after all retries.
class RemoteSimilarityError : public SimilarityError {
 public:
  RemoteSimilarityError(const std::string& what, std::size_t failed_pairs)
      : SimilarityError(what), failed_pairs_(failed_pairs) {}
  std::size_t failed_pairs() const { return failed_pairs_; }

 private:
  std::size_t failed_pairs_;
};

std::shared_ptr<const SimilarityProvider> make_provider(const SimilarityConfig& config);

std::vector<double> similarity_batch(const SimilarityProvider& provider,
                                     std::span<const SimilarityPair> pairs);

/// 1 - edit_distance / max(|a|, |b|); 1 for two empty sequences.
double levenshtein_similarity(std::span<const TokenId> a, std::span<const TokenId> b);
/// LCS-based F-measure (ROUGE-L, beta = 1).
double lcs_f_measure(std::span<const TokenId> a, std::span<const TokenId> b);
std::size_t lcs_length(std::span<const TokenId> a, std::span<const TokenId> b);

}  // namespace dlmuq
