#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dlmuq/eval.hpp"
#include "dlmuq/oracle.hpp"
#include "dlmuq/trace.hpp"

namespace testsupport {

using dlmuq::TokenId;

/// Tokens "t0".."t{n-1}", then "[MASK]" (id n) and "<eos>" (id n+1), both special.
dlmuq::TraceHeader small_header(int vocab_n, int block_length, int num_blocks, int max_steps);

/// One hand-written step of one block. `state` has one char per position:
/// 'm' masked and stays masked, 'c' commits now, 'k' already committed,
/// 'r' remasked now.
struct HandStep {
  std::vector<TokenId> tokens;
  std::vector<double> logprob;
  std::vector<double> entropy;
  std::string state;
};

/// Assembles a trace with blocks generated one after another. Empty logprob
/// or entropy vectors default to zeros.
dlmuq::InstanceTrace hand_trace(std::shared_ptr<const dlmuq::TraceHeader> header, std::string id,
                                std::vector<std::vector<TokenId>> final_tokens,
                                std::vector<std::vector<HandStep>> blocks);

// Naive replay of per-step signals; walks steps once with per-position maps.
struct Replay {
  double traj_nll = 0.0;
  double traj_entropy = 0.0;
  double commit_nll = 0.0;
  double remask_events = 0.0;
  double remask_masked = 0.0;
  double flip_count = 0.0;
  double nfe = 0.0;
  bool traj_defined = false;
};
Replay replay(const dlmuq::InstanceTrace& trace);

/// Reference state sequence of a view rebuilt by stepping through the trace.
struct ViewStates {
  std::vector<std::vector<TokenId>> states;  // t = 1..T
  std::vector<TokenId> reference;
};
/// One entry per trajectory (valid blocks for the block view).
std::vector<ViewStates> replay_view(const dlmuq::InstanceTrace& trace, dlmuq::ViewKind view);

/// Token sequence as seen by the local providers.
std::vector<TokenId> visible_tokens(const dlmuq::Vocab& vocab, const std::vector<TokenId>& tokens,
                                    bool keep_masks);

double naive_lcs_f(const std::vector<TokenId>& a, const std::vector<TokenId>& b);
double naive_levenshtein_sim(const std::vector<TokenId>& a, const std::vector<TokenId>& b);

using SimFn = std::function<double(const std::vector<TokenId>&, const std::vector<TokenId>&)>;
/// Mean over trajectories of (1/T) sum_s w_s D_s, optionally progressive.
double naive_ad(const dlmuq::InstanceTrace& trace, dlmuq::ViewKind view, const SimFn& sim,
                bool progressive, bool keep_masks = true);

// Toy-model oracles computed straight from the probability table.
std::vector<std::vector<double>> brute_marginals(const std::vector<double>& table, int V, int L,
                                                 const std::vector<int>& z);

/// Exact value of the MCNLL surrogate: expectation over l ~ U{1..n} and a
/// uniform l-subset of (n/l) * sum of masked -log p(y_i | unmasked y).
double mcnll_surrogate(const dlmuq::oracle::ToyDiffusion& model, const std::vector<int>& y);

struct BruteTheorem {
  std::vector<double> p_err;
  std::vector<double> bound;
  double mean_u_ad = 0.0;
  double loss = 0.0;
};
BruteTheorem brute_theorem(const dlmuq::oracle::ToyDiffusion& model);

// Evaluation oracles.
std::vector<double> naive_curve(const std::vector<dlmuq::eval::EvalRecord>& records, bool oracle,
                                double max_reject);
double naive_prr(const std::vector<dlmuq::eval::EvalRecord>& records, double max_reject);
double pairwise_auc(const std::vector<dlmuq::eval::EvalRecord>& records, double threshold);

std::string temp_dir(const std::string& name);
std::string read_file(const std::string& path);

}  // namespace testsupport
