#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dlmuq/dissimilarity.hpp"
#include "dlmuq/trace.hpp"

namespace dlmuq::oracle {

enum class UnmaskPolicy { random_order, confidence_order };
/// sample: committed tokens are drawn from the exact posterior (ancestral
/// sampling). greedy: each masked position predicts its marginal argmax.
enum class DecodeMode { sample, greedy };

std::string to_string(UnmaskPolicy policy);
UnmaskPolicy unmask_policy_from_string(const std::string& name);
std::string to_string(DecodeMode mode);
DecodeMode decode_mode_from_string(const std::string& name);

inline constexpr std::size_t kMaxSequences = 1'000'000;
/// Bound on |V|^L * 2^L for exact forward-process enumeration.
inline constexpr std::size_t kMaxExactPairs = 1u << 22;
/// Marker for a masked position in a partial sequence.
inline constexpr int kMasked = -1;

class OracleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Sequences are indexed in mixed radix with position 0 most significant.
struct ToyDiffusion {
  int vocab_size = 2;
  int length = 2;
  std::vector<double> table;  // probability of each of vocab_size^length sequences
  int steps = 1;
  UnmaskPolicy unmask_policy = UnmaskPolicy::random_order;
  std::uint64_t seed = 0;
  DecodeMode decode = DecodeMode::sample;
  int num_blocks = 1;  // 1, or 2 to exercise trajectory views
  int mc_samples = 16;
  double remask_prob = 0.0;

  std::size_t num_sequences() const { return table.size(); }
  std::vector<int> sequence(std::size_t index) const;
  std::size_t index_of(const std::vector<int>& seq) const;
  /// Throws OracleError when an invariant does not hold.
  void check() const;
};

std::vector<double> uniform_table(int vocab_size, int length);
std::vector<double> dirichlet_table(int vocab_size, int length, double alpha, std::mt19937_64& rng);

/// Builds a model from a distribution spec: "uniform", "dirichlet:<alpha>".
ToyDiffusion make_toy(int vocab_size, int length, int steps, const std::string& dist,
                      std::uint64_t seed, UnmaskPolicy policy = UnmaskPolicy::random_order);

struct Posterior {
  std::vector<std::vector<double>> marginals;  // [position][token]
  double mass = 0.0;                           // data mass consistent with z
  std::size_t mode_index = 0;                  // joint argmax (lowest index on ties)
  double mode_prob = 0.0;                      // p(mode | z)
};

/// Exact posterior of the data distribution given a partially masked
/// sequence (kMasked marks masked positions). Unmasked positions get point
/// masses. Throws OracleError when z has zero probability.
Posterior exact_posterior(const ToyDiffusion& model, const std::vector<int>& z);

double entropy(const std::vector<double>& dist);

/// Vocabulary of toy traces: tokens 0..V-1 render as 'a', 'b', ...; V is the mask.
TraceHeader toy_header(const ToyDiffusion& model);

/// Block lengths used by the simulator (one block, or two halves).
std::vector<int> block_lengths(const ToyDiffusion& model);

/// Simulates n generations with the exact denoiser. Trace i uses an RNG
/// stream derived from (model.seed, i), so outputs are reproducible.
std::vector<InstanceTrace> generate_traces(const ToyDiffusion& model, int n);

/// n MC mask samples for output y: l ~ Uniform{1..|y|}, a uniform l-subset
/// masked, summed exact log-probabilities of the masked tokens.
std::vector<MCMaskSample> draw_mc_samples(const ToyDiffusion& model, const std::vector<int>& y,
                                          int n, std::mt19937_64& rng);

struct Estimate {
  double value = 0.0;
  double se = 0.0;
};

enum class LossMode { exact_discretized, monte_carlo };

/// Discretized masking loss: (1/T) sum_t (T/t) E[sum over masked i of -log p(y_i | z_t)]
/// with independent Bernoulli(t/T) masking.
Estimate masking_loss(const ToyDiffusion& model, LossMode mode, std::size_t samples);

struct TheoremReport {
  LossMode mode = LossMode::monte_carlo;
  std::size_t samples = 0;
  Estimate mean_u_ad;
  Estimate loss;
  std::vector<double> per_step_probs;   // P(y~_t != y), t = 1..T
  std::vector<double> per_step_bounds;  // (t/T) L_t
  std::vector<double> per_step_slack;   // 3 standard errors of the paired difference
  double headline_slack = 0.0;
  bool inequality_holds = false;
  double margin = 0.0;  // loss - mean_u_ad
};

/// Checks E[u_AD] <= L^discr and P(y~_t != y) <= (t/T) L_t for every t, with
/// the indicator dissimilarity and joint-argmax decoding. In monte_carlo
/// mode each t draws `samples` pairs and the checks allow 3 standard errors.
TheoremReport verify_error_bound(const ToyDiffusion& model, std::size_t samples,
                              LossMode mode = LossMode::monte_carlo);

struct BoundCheck {
  std::string instance_id;
  bool defined = false;
  double lower = 0.0;  // AD / T
  double progressive = 0.0;
  double ad = 0.0;
  bool holds = true;
};

/// Per-trace check of AD/T <= progressive AD <= AD, with no tolerance.
std::vector<BoundCheck> verify_progressive_bounds(std::span<const InstanceTrace> traces, const ADConfig& config);

}  // namespace dlmuq::oracle
