#include "dlmuq/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include <fmt/format.h>

namespace dlmuq::oracle {

std::string to_string(UnmaskPolicy policy) {
  return policy == UnmaskPolicy::random_order ? "random_order" : "confidence_order";
}

UnmaskPolicy unmask_policy_from_string(const std::string& name) {
  if (name == "random_order") return UnmaskPolicy::random_order;
  if (name == "confidence_order") return UnmaskPolicy::confidence_order;
  throw std::invalid_argument("unknown unmask_policy '" + name + "'");
}

std::string to_string(DecodeMode mode) { return mode == DecodeMode::sample ? "sample" : "greedy"; }

DecodeMode decode_mode_from_string(const std::string& name) {
  if (name == "sample") return DecodeMode::sample;
  if (name == "greedy") return DecodeMode::greedy;
  throw std::invalid_argument("unknown decode mode '" + name + "'");
}

namespace {

std::size_t ipow(std::size_t base, int exp) {
  std::size_t out = 1;
  for (int i = 0; i < exp; ++i) {
    if (out > std::numeric_limits<std::size_t>::max() / base) {
      return std::numeric_limits<std::size_t>::max();
    }
    out *= base;
  }
  return out;
}

// Iterates sequence digits in index order, position 0 most significant.
class Odometer {
 public:
  Odometer(int vocab_size, int length) : v_(vocab_size), digits_(length, 0) {}
  const std::vector<int>& digits() const { return digits_; }
  void advance() {
    for (int i = static_cast<int>(digits_.size()) - 1; i >= 0; --i) {
      if (++digits_[i] < v_) return;
      digits_[i] = 0;
    }
  }

 private:
  int v_;
  std::vector<int> digits_;
};

bool consistent(const std::vector<int>& seq, const std::vector<int>& z) {
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (z[i] != kMasked && z[i] != seq[i]) return false;
  }
  return true;
}

std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

// Draws a complete sequence from p_data(. | z).
std::vector<int> sample_consistent(const ToyDiffusion& model, const std::vector<int>& z,
                                   double mass, std::mt19937_64& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, mass)(rng);
  Odometer it(model.vocab_size, model.length);
  double acc = 0.0;
  std::vector<int> last;
  for (std::size_t idx = 0; idx < model.num_sequences(); ++idx, it.advance()) {
    const double p = model.table[idx];
    if (p <= 0.0 || !consistent(it.digits(), z)) continue;
    acc += p;
    last = it.digits();
    if (u < acc) return last;
  }
  return last;  // rounding at the top of the range
}

int argmax(const std::vector<double>& dist) {
  return static_cast<int>(std::max_element(dist.begin(), dist.end()) - dist.begin());
}

struct RunningStat {
  std::size_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++n;
    const double delta = x - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (x - mean);
  }
  double variance() const { return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0; }
  double se2() const { return n > 0 ? variance() / static_cast<double>(n) : 0.0; }
};

// Neumaier-compensated accumulator.
struct CompensatedSum {
  double sum = 0.0;
  double c = 0.0;
  void add(double x) {
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x)) {
      c += (sum - t) + x;
    } else {
      c += (x - t) + sum;
    }
    sum = t;
  }
  double value() const { return sum + c; }
};

}  // namespace

std::vector<int> ToyDiffusion::sequence(std::size_t index) const {
  std::vector<int> out(length, 0);
  for (int i = length - 1; i >= 0; --i) {
    out[i] = static_cast<int>(index % vocab_size);
    index /= vocab_size;
  }
  return out;
}

std::size_t ToyDiffusion::index_of(const std::vector<int>& seq) const {
  std::size_t idx = 0;
  for (int d : seq) idx = idx * vocab_size + static_cast<std::size_t>(d);
  return idx;
}

void ToyDiffusion::check() const {
  if (vocab_size < 2 || vocab_size > 8) throw OracleError("vocab_size must be in 2..8");
  if (length < 2 || length > 6) throw OracleError("length must be in 2..6");
  if (steps < 1) throw OracleError("steps must be positive");
  if (num_blocks != 1 && num_blocks != 2) throw OracleError("num_blocks must be 1 or 2");
  if (mc_samples < 0) throw OracleError("mc_samples must be non-negative");
  if (!(remask_prob >= 0.0 && remask_prob <= 1.0)) throw OracleError("remask_prob must be in [0,1]");
  const std::size_t n = ipow(vocab_size, length);
  if (n > kMaxSequences) throw OracleError("vocab_size^length exceeds the enumeration bound");
  if (table.size() != n) {
    throw OracleError(fmt::format("table has {} entries, expected {}", table.size(), n));
  }
  CompensatedSum total;
  for (double p : table) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw OracleError("table entries must be finite and >= 0");
    total.add(p);
  }
  if (std::abs(total.value() - 1.0) > 1e-12) {
    throw OracleError(fmt::format("table sums to {:.17g}, not 1", total.value()));
  }
}

std::vector<double> uniform_table(int vocab_size, int length) {
  const std::size_t n = ipow(vocab_size, length);
  return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

std::vector<double> dirichlet_table(int vocab_size, int length, double alpha,
                                    std::mt19937_64& rng) {
  if (!(alpha > 0.0)) throw OracleError("dirichlet alpha must be positive");
  const std::size_t n = ipow(vocab_size, length);
  if (n > kMaxSequences) throw OracleError("vocab_size^length exceeds the enumeration bound");
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> table(n);
  CompensatedSum total;
  for (double& p : table) {
    p = gamma(rng);
    total.add(p);
  }
  for (double& p : table) p /= total.value();
  return table;
}

ToyDiffusion make_toy(int vocab_size, int length, int steps, const std::string& dist,
                      std::uint64_t seed, UnmaskPolicy policy) {
  ToyDiffusion model;
  model.vocab_size = vocab_size;
  model.length = length;
  model.steps = steps;
  model.seed = seed;
  model.unmask_policy = policy;
  if (dist == "uniform") {
    model.table = uniform_table(vocab_size, length);
  } else if (dist.rfind("dirichlet:", 0) == 0) {
    const double alpha = std::stod(dist.substr(10));
    auto rng = stream_rng(seed, 0xD1D1ULL);
    model.table = dirichlet_table(vocab_size, length, alpha, rng);
  } else {
    throw OracleError("unknown distribution spec '" + dist + "'");
  }
  model.check();
  return model;
}

Posterior exact_posterior(const ToyDiffusion& model, const std::vector<int>& z) {
  if (static_cast<int>(z.size()) != model.length) throw OracleError("partial sequence has wrong length");
  Posterior post;
  post.marginals.assign(model.length, std::vector<double>(model.vocab_size, 0.0));
  Odometer it(model.vocab_size, model.length);
  for (std::size_t idx = 0; idx < model.num_sequences(); ++idx, it.advance()) {
    const double p = model.table[idx];
    if (p <= 0.0 || !consistent(it.digits(), z)) continue;
    post.mass += p;
    if (p > post.mode_prob) {
      post.mode_prob = p;
      post.mode_index = idx;
    }
    for (int i = 0; i < model.length; ++i) post.marginals[i][it.digits()[i]] += p;
  }
  if (!(post.mass > 0.0)) throw OracleError("partial sequence has zero probability under the data");
  for (auto& m : post.marginals) {
    for (double& p : m) p /= post.mass;
  }
  for (int i = 0; i < model.length; ++i) {
    if (z[i] != kMasked) {
      std::fill(post.marginals[i].begin(), post.marginals[i].end(), 0.0);
      post.marginals[i][z[i]] = 1.0;
    }
  }
  post.mode_prob /= post.mass;
  return post;
}

double entropy(const std::vector<double>& dist) {
  double h = 0.0;
  for (double p : dist) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::max(h, 0.0);
}

TraceHeader toy_header(const ToyDiffusion& model) {
  TraceHeader h;
  h.model_name = "toy-oracle";
  h.task = "toy";
  h.max_steps_per_block = model.steps;
  const auto lengths = block_lengths(model);
  h.block_length = *std::max_element(lengths.begin(), lengths.end());
  h.num_blocks = static_cast<int>(lengths.size());
  for (int v = 0; v < model.vocab_size; ++v) h.vocab.entries.push_back(std::string(1, char('a' + v)));
  h.vocab.entries.push_back("[MASK]");
  h.vocab.mask_id = model.vocab_size;
  h.vocab.special_ids = {model.vocab_size};
  return h;
}

std::vector<int> block_lengths(const ToyDiffusion& model) {
  if (model.num_blocks == 1) return {model.length};
  const int first = (model.length + 1) / 2;
  return {first, model.length - first};
}

std::vector<MCMaskSample> draw_mc_samples(const ToyDiffusion& model, const std::vector<int>& y,
                                          int n, std::mt19937_64& rng) {
  std::vector<MCMaskSample> out;
  const int len = static_cast<int>(y.size());
  if (n <= 0 || len <= 1) return out;
  std::unordered_map<std::uint32_t, Posterior> memo;
  std::vector<int> order(len);
  for (int m = 0; m < n; ++m) {
    const int l = std::uniform_int_distribution<int>(1, len)(rng);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<int> masked(order.begin(), order.begin() + l);
    std::sort(masked.begin(), masked.end());
    std::uint32_t bits = 0;
    for (int p : masked) bits |= 1u << p;
    auto found = memo.find(bits);
    if (found == memo.end()) {
      std::vector<int> z = y;
      for (int p : masked) z[p] = kMasked;
      found = memo.emplace(bits, exact_posterior(model, z)).first;
    }
    double sum = 0.0;
    for (int p : masked) sum += std::log(found->second.marginals[p][y[p]]);
    out.push_back({m, l, std::move(masked), std::min(sum, 0.0)});
  }
  return out;
}

namespace {

InstanceTrace simulate_one(const ToyDiffusion& model, std::shared_ptr<const TraceHeader> header,
                           std::size_t index) {
  auto rng = stream_rng(model.seed, index + 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto lengths = block_lengths(model);
  const int T = model.steps;

  InstanceTrace trace;
  trace.instance_id = fmt::format("toy-{}-{:06}", model.seed, index);
  trace.header = std::move(header);
  std::vector<int> z(model.length, kMasked);

  int offset = 0;
  for (int b = 0; b < static_cast<int>(lengths.size()); ++b) {
    const int lb = lengths[b];
    const int group = (lb + T - 1) / T;
    std::vector<bool> masked(lb, true);
    std::vector<double> commit_logprob(lb, 0.0);
    int n_masked = lb;
    int s = 0;
    while (n_masked > 0) {
      ++s;
      const Posterior post = exact_posterior(model, z);
      std::vector<int> pred(lb, 0);
      std::vector<int> sample;
      if (model.decode == DecodeMode::sample) sample = sample_consistent(model, z, post.mass, rng);
      std::vector<int> candidates;
      for (int k = 0; k < lb; ++k) {
        if (!masked[k]) continue;
        const auto& marg = post.marginals[offset + k];
        pred[k] = model.decode == DecodeMode::sample ? sample[offset + k] : argmax(marg);
        candidates.push_back(k);
      }

      const int n_commit = s == T ? n_masked : std::min(group, n_masked);
      if (model.unmask_policy == UnmaskPolicy::random_order) {
        std::shuffle(candidates.begin(), candidates.end(), rng);
      } else {
        std::stable_sort(candidates.begin(), candidates.end(), [&](int a, int c) {
          return post.marginals[offset + a][pred[a]] > post.marginals[offset + c][pred[c]];
        });
      }
      std::vector<bool> commit(lb, false);
      for (int i = 0; i < n_commit; ++i) commit[candidates[i]] = true;

      std::vector<bool> remask(lb, false);
      if (model.remask_prob > 0.0 && s < T) {
        int capacity = group * (T - s) - (n_masked - n_commit);
        std::vector<int> settled;
        for (int k = 0; k < lb; ++k) {
          if (!masked[k]) settled.push_back(k);
        }
        std::shuffle(settled.begin(), settled.end(), rng);
        for (int k : settled) {
          if (capacity <= 0) break;
          if (unit(rng) < model.remask_prob) {
            remask[k] = true;
            --capacity;
          }
        }
      }

      StepRecord rec{b, s, {}};
      for (int k = 0; k < lb; ++k) {
        PositionObs obs;
        obs.position = k;
        obs.was_masked = masked[k];
        if (masked[k]) {
          const auto& marg = post.marginals[offset + k];
          obs.argmax_token = pred[k];
          obs.argmax_logprob = std::min(std::log(marg[pred[k]]), 0.0);
          obs.entropy = entropy(marg);
          obs.committed_now = commit[k];
        } else {
          // Committed positions repeat their token and commit log-probability.
          obs.argmax_token = z[offset + k];
          obs.argmax_logprob = commit_logprob[k];
          obs.entropy = 0.0;
          obs.remasked_now = remask[k];
        }
        rec.positions.push_back(obs);
      }
      for (int k = 0; k < lb; ++k) {
        if (commit[k]) {
          z[offset + k] = pred[k];
          commit_logprob[k] = rec.positions[k].argmax_logprob;
          masked[k] = false;
          --n_masked;
        } else if (remask[k]) {
          z[offset + k] = kMasked;
          masked[k] = true;
          ++n_masked;
        }
      }
      trace.steps.push_back(std::move(rec));
      if (model.decode == DecodeMode::greedy) {
        // Per-position argmaxes can jointly land outside the support.
        exact_posterior(model, z);
      }
    }
    trace.steps_per_block.push_back(s);
    trace.final_tokens.emplace_back(z.begin() + offset, z.begin() + offset + lb);
    offset += lb;
  }
  trace.nfe = std::accumulate(trace.steps_per_block.begin(), trace.steps_per_block.end(), 0);
  trace.mc_samples = draw_mc_samples(model, z, model.mc_samples, rng);
  return trace;
}

}  // namespace

std::vector<InstanceTrace> generate_traces(const ToyDiffusion& model, int n) {
  model.check();
  if (n < 1) throw OracleError("trace count must be positive");
  auto header = std::make_shared<const TraceHeader>(toy_header(model));
  std::vector<InstanceTrace> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(simulate_one(model, header, static_cast<std::size_t>(i)));
  return out;
}

// ---------------------------------------------------------------------------

namespace {

struct ForwardStats {
  std::vector<double> p_err;     // P(y~_t != y)
  std::vector<double> bound;     // E[sum_{i in M} -log p(y_i | z_t)] = (t/T) L_t
  std::vector<double> p_err_se2;
  std::vector<double> bound_se2;
  std::vector<double> diff_se2;      // paired indicator - bound term
  std::vector<double> headline_se2;  // paired indicator - (T/t) bound term
};

ForwardStats forward_exact(const ToyDiffusion& model) {
  const int L = model.length;
  const int V = model.vocab_size;
  const int T = model.steps;
  const std::size_t pairs = model.num_sequences() * (std::size_t{1} << L);
  if (pairs > kMaxExactPairs) {
    throw OracleError(fmt::format(
        "exact enumeration needs {} (sequence, mask) pairs, above the bound {}; use monte_carlo mode",
        pairs, kMaxExactPairs));
  }
  // Per mask pattern: expected error of the joint argmax and expected masked
  // negative log-likelihood, unweighted by the pattern probability.
  const std::uint32_t patterns = 1u << L;
  std::vector<double> err(patterns, 0.0);
  std::vector<double> nll(patterns, 0.0);
  for (std::uint32_t bits = 0; bits < patterns; ++bits) {
    std::vector<int> unmasked;
    std::vector<int> masked_pos;
    for (int i = 0; i < L; ++i) ((bits >> i) & 1u ? masked_pos : unmasked).push_back(i);
    const std::size_t groups = ipow(V, static_cast<int>(unmasked.size()));
    const std::size_t width = masked_pos.size() * V;
    std::vector<double> mass(groups, 0.0);
    std::vector<double> best(groups, 0.0);
    std::vector<double> marg(groups * width, 0.0);
    auto group_of = [&](const std::vector<int>& d) {
      std::size_t g = 0;
      for (int i : unmasked) g = g * V + static_cast<std::size_t>(d[i]);
      return g;
    };
    Odometer it(V, L);
    for (std::size_t idx = 0; idx < model.num_sequences(); ++idx, it.advance()) {
      const double p = model.table[idx];
      if (p <= 0.0) continue;
      const std::size_t g = group_of(it.digits());
      mass[g] += p;
      best[g] = std::max(best[g], p);
      for (std::size_t j = 0; j < masked_pos.size(); ++j) {
        marg[g * width + j * V + it.digits()[masked_pos[j]]] += p;
      }
    }
    CompensatedSum e;
    for (std::size_t g = 0; g < groups; ++g) e.add(mass[g] - best[g]);
    CompensatedSum loss;
    Odometer it2(V, L);
    for (std::size_t idx = 0; idx < model.num_sequences(); ++idx, it2.advance()) {
      const double p = model.table[idx];
      if (p <= 0.0) continue;
      const std::size_t g = group_of(it2.digits());
      double term = 0.0;
      for (std::size_t j = 0; j < masked_pos.size(); ++j) {
        term -= std::log(marg[g * width + j * V + it2.digits()[masked_pos[j]]] / mass[g]);
      }
      loss.add(p * term);
    }
    err[bits] = e.value();
    nll[bits] = loss.value();
  }

  ForwardStats out;
  for (int t = 1; t <= T; ++t) {
    const double tau = static_cast<double>(t) / T;
    CompensatedSum p_err;
    CompensatedSum bound;
    for (std::uint32_t bits = 0; bits < patterns; ++bits) {
      const int k = __builtin_popcount(bits);
      const double w = std::pow(tau, k) * std::pow(1.0 - tau, L - k);
      if (w == 0.0) continue;
      p_err.add(w * err[bits]);
      bound.add(w * nll[bits]);
    }
    out.p_err.push_back(p_err.value());
    out.bound.push_back(bound.value());
  }
  const std::size_t n = static_cast<std::size_t>(T);
  out.p_err_se2.assign(n, 0.0);
  out.bound_se2.assign(n, 0.0);
  out.diff_se2.assign(n, 0.0);
  out.headline_se2.assign(n, 0.0);
  return out;
}

ForwardStats forward_monte_carlo(const ToyDiffusion& model, std::size_t samples) {
  if (samples < 1) throw OracleError("monte_carlo mode needs at least one sample");
  const int L = model.length;
  const int T = model.steps;
  std::discrete_distribution<std::size_t> draw_y(model.table.begin(), model.table.end());
  std::unordered_map<std::uint64_t, Posterior> memo;
  ForwardStats out;
  for (int t = 1; t <= T; ++t) {
    auto rng = stream_rng(model.seed, 0x7E0000ULL + static_cast<std::uint64_t>(t));
    const double tau = static_cast<double>(t) / T;
    std::bernoulli_distribution mask(tau);
    RunningStat ind_stat, bound_stat, diff_stat, headline_stat;
    for (std::size_t s = 0; s < samples; ++s) {
      const std::size_t y_idx = draw_y(rng);
      const auto y = model.sequence(y_idx);
      std::vector<int> z = y;
      std::uint64_t code = 0;
      for (int i = 0; i < L; ++i) {
        if (mask(rng)) z[i] = kMasked;
        code = code * static_cast<std::uint64_t>(model.vocab_size + 1) +
               static_cast<std::uint64_t>(z[i] == kMasked ? model.vocab_size : z[i]);
      }
      auto found = memo.find(code);
      if (found == memo.end()) found = memo.emplace(code, exact_posterior(model, z)).first;
      const Posterior& post = found->second;
      const double ind = post.mode_index != y_idx ? 1.0 : 0.0;
      double term = 0.0;
      for (int i = 0; i < L; ++i) {
        if (z[i] == kMasked) term -= std::log(post.marginals[i][y[i]]);
      }
      ind_stat.add(ind);
      bound_stat.add(term);
      diff_stat.add(ind - term);
      headline_stat.add(ind - term / tau);
    }
    out.p_err.push_back(ind_stat.mean);
    out.bound.push_back(bound_stat.mean);
    out.p_err_se2.push_back(ind_stat.se2());
    out.bound_se2.push_back(bound_stat.se2() / (tau * tau));
    out.diff_se2.push_back(diff_stat.se2());
    out.headline_se2.push_back(headline_stat.se2());
  }
  return out;
}

ForwardStats forward_process(const ToyDiffusion& model, LossMode mode, std::size_t samples) {
  model.check();
  return mode == LossMode::exact_discretized ? forward_exact(model)
                                             : forward_monte_carlo(model, samples);
}

double sqrt_sum(const std::vector<double>& v) {
  return std::sqrt(std::accumulate(v.begin(), v.end(), 0.0));
}

}  // namespace

Estimate masking_loss(const ToyDiffusion& model, LossMode mode, std::size_t samples) {
  const ForwardStats stats = forward_process(model, mode, samples);
  const int T = model.steps;
  CompensatedSum loss;
  for (int t = 1; t <= T; ++t) loss.add(stats.bound[t - 1] * T / t);
  return {loss.value() / T, sqrt_sum(stats.bound_se2) / T};
}

TheoremReport verify_error_bound(const ToyDiffusion& model, std::size_t samples, LossMode mode) {
  const ForwardStats stats = forward_process(model, mode, samples);
  const int T = model.steps;
  TheoremReport report;
  report.mode = mode;
  report.samples = mode == LossMode::monte_carlo ? samples : 0;
  report.per_step_probs = stats.p_err;
  report.per_step_bounds = stats.bound;

  CompensatedSum ad;
  CompensatedSum loss;
  for (int t = 1; t <= T; ++t) {
    ad.add(stats.p_err[t - 1]);
    loss.add(stats.bound[t - 1] * T / t);
  }
  report.mean_u_ad = {ad.value() / T, sqrt_sum(stats.p_err_se2) / T};
  report.loss = {loss.value() / T, sqrt_sum(stats.bound_se2) / T};
  report.margin = report.loss.value - report.mean_u_ad.value;

  // Exact mode only needs room for rounding in the enumeration sums.
  constexpr double kExactRounding = 1e-12;
  bool holds = true;
  for (int t = 0; t < T; ++t) {
    const double slack = mode == LossMode::monte_carlo ? 3.0 * std::sqrt(stats.diff_se2[t])
                                                       : kExactRounding;
    report.per_step_slack.push_back(slack);
    holds = holds && stats.p_err[t] <= stats.bound[t] + slack;
  }
  report.headline_slack =
      mode == LossMode::monte_carlo ? 3.0 * sqrt_sum(stats.headline_se2) / T : kExactRounding;
  holds = holds && report.mean_u_ad.value <= report.loss.value + report.headline_slack;
  report.inequality_holds = holds;
  return report;
}

std::vector<BoundCheck> verify_progressive_bounds(std::span<const InstanceTrace> traces, const ADConfig& config) {
  if (!config.provider) throw std::invalid_argument("ADConfig without a similarity provider");
  std::vector<BoundCheck> out;
  out.reserve(traces.size());
  for (const auto& trace : traces) {
    BoundCheck check;
    check.instance_id = trace.instance_id;
    const auto profile =
        dissimilarity_profile(trace, config.view, *config.provider, config.render_masks);
    if (profile) {
      check.defined = true;
      check.lower = profile_lower_bound(*profile);
      check.progressive = profile_progressive(*profile);
      check.ad = profile_average(*profile);
      check.holds = check.lower <= check.progressive && check.progressive <= check.ad;
    }
    out.push_back(std::move(check));
  }
  return out;
}

}  // namespace dlmuq::oracle
