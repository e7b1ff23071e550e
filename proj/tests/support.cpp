#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace testsupport {

using namespace dlmuq;

TraceHeader small_header(int vocab_n, int block_length, int num_blocks, int max_steps) {
  TraceHeader h;
  h.model_name = "hand";
  h.task = "unit";
  h.max_steps_per_block = max_steps;
  h.block_length = block_length;
  h.num_blocks = num_blocks;
  for (int i = 0; i < vocab_n; ++i) h.vocab.entries.push_back("t" + std::to_string(i));
  h.vocab.entries.push_back("[MASK]");
  h.vocab.entries.push_back("<eos>");
  h.vocab.mask_id = vocab_n;
  h.vocab.special_ids = {vocab_n, vocab_n + 1};
  return h;
}

InstanceTrace hand_trace(std::shared_ptr<const TraceHeader> header, std::string id,
                         std::vector<std::vector<TokenId>> final_tokens,
                         std::vector<std::vector<HandStep>> blocks) {
  InstanceTrace t;
  t.instance_id = std::move(id);
  t.header = std::move(header);
  t.final_tokens = std::move(final_tokens);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    int s = 0;
    for (const auto& hs : blocks[b]) {
      StepRecord rec{static_cast<int>(b), ++s, {}};
      for (std::size_t k = 0; k < hs.state.size(); ++k) {
        PositionObs o;
        o.position = static_cast<int>(k);
        o.argmax_token = hs.tokens.at(k);
        o.argmax_logprob = hs.logprob.empty() ? 0.0 : hs.logprob[k];
        o.entropy = hs.entropy.empty() ? 0.0 : hs.entropy[k];
        const char c = hs.state[k];
        o.was_masked = c == 'm' || c == 'c';
        o.committed_now = c == 'c';
        o.remasked_now = c == 'r';
        rec.positions.push_back(o);
      }
      t.steps.push_back(std::move(rec));
    }
    t.steps_per_block.push_back(s);
    t.nfe += s;
  }
  return t;
}

namespace {

bool special(const Vocab& v, TokenId id) {
  return std::find(v.special_ids.begin(), v.special_ids.end(), id) != v.special_ids.end();
}

}  // namespace

Replay replay(const InstanceTrace& trace) {
  const Vocab& v = trace.header->vocab;
  std::vector<bool> valid;
  int y_len = 0;
  for (const auto& block : trace.final_tokens) {
    int n = 0;
    for (TokenId id : block) n += special(v, id) ? 0 : 1;
    y_len += n;
    valid.push_back(n > 0);
  }
  std::map<std::pair<int, int>, double> commit_lp;
  std::map<std::pair<int, int>, TokenId> previous;
  double nll = 0.0;
  double ent = 0.0;
  long valid_steps = 0;
  long remasks = 0;
  long masked = 0;
  long flips = 0;
  for (const auto& rec : trace.steps) {
    const double lb = static_cast<double>(trace.final_tokens[rec.block].size());
    double step_lp = 0.0;
    double step_h = 0.0;
    for (const auto& o : rec.positions) {
      step_lp += o.argmax_logprob;
      step_h += o.entropy;
      if (o.remasked_now) ++remasks;
      if (o.was_masked) ++masked;
      const std::pair<int, int> key{rec.block, o.position};
      if (o.committed_now) commit_lp[key] = o.argmax_logprob;
      auto it = previous.find(key);
      if (it != previous.end() && it->second != o.argmax_token) ++flips;
      previous[key] = o.argmax_token;
    }
    if (valid[rec.block]) {
      nll += step_lp / lb;
      ent += step_h / lb;
      ++valid_steps;
    }
  }
  Replay r;
  r.nfe = trace.nfe;
  r.traj_defined = valid_steps > 0;
  if (valid_steps > 0) {
    r.traj_nll = -nll / static_cast<double>(valid_steps);
    r.traj_entropy = ent / static_cast<double>(valid_steps);
  }
  double commit_sum = 0.0;
  for (std::size_t b = 0; b < trace.final_tokens.size(); ++b) {
    for (std::size_t k = 0; k < trace.final_tokens[b].size(); ++k) {
      if (special(v, trace.final_tokens[b][k])) continue;
      commit_sum += commit_lp.at({static_cast<int>(b), static_cast<int>(k)});
    }
  }
  if (y_len > 0) {
    r.commit_nll = -commit_sum / y_len;
    r.flip_count = static_cast<double>(flips) / y_len;
  }
  r.remask_events = static_cast<double>(remasks) / trace.nfe;
  r.remask_masked = static_cast<double>(masked) / trace.nfe;
  return r;
}

std::vector<ViewStates> replay_view(const InstanceTrace& trace, ViewKind view) {
  const Vocab& v = trace.header->vocab;
  const int nb = static_cast<int>(trace.final_tokens.size());
  std::vector<int> tb(nb, 0);
  for (const auto& rec : trace.steps) ++tb[rec.block];
  std::vector<int> valid;
  for (int b = 0; b < nb; ++b) {
    bool any = false;
    for (TokenId id : trace.final_tokens[b]) any = any || !special(v, id);
    if (any) valid.push_back(b);
  }
  auto one_block = [&](int b) {
    std::vector<std::vector<TokenId>> states;
    for (const auto& rec : trace.steps) {
      if (rec.block != b) continue;
      std::vector<TokenId> s;
      for (const auto& o : rec.positions) s.push_back(o.argmax_token);
      states.push_back(s);
    }
    if (!states.empty()) states.back() = trace.final_tokens[b];
    return states;
  };
  std::vector<ViewStates> out;
  if (view == ViewKind::block) {
    for (int b : valid) out.push_back({one_block(b), trace.final_tokens[b]});
    return out;
  }
  if (view == ViewKind::last || view == ViewKind::last_prefix) {
    if (valid.empty()) return out;
    const int last = valid.back();
    ViewStates vs{one_block(last), trace.final_tokens[last]};
    if (view == ViewKind::last_prefix) {
      std::vector<TokenId> prefix;
      for (int b = 0; b < last; ++b) {
        prefix.insert(prefix.end(), trace.final_tokens[b].begin(), trace.final_tokens[b].end());
      }
      for (auto& s : vs.states) s.insert(s.begin(), prefix.begin(), prefix.end());
      vs.reference.insert(vs.reference.begin(), prefix.begin(), prefix.end());
    }
    out.push_back(std::move(vs));
    return out;
  }
  std::vector<std::vector<TokenId>> cur(nb);
  std::vector<int> done(nb, 0);
  ViewStates vs;
  for (int b = 0; b < nb; ++b) {
    cur[b] = tb[b] == 0 ? trace.final_tokens[b]
                        : std::vector<TokenId>(trace.final_tokens[b].size(), v.mask_id);
    vs.reference.insert(vs.reference.end(), trace.final_tokens[b].begin(), trace.final_tokens[b].end());
  }
  for (const auto& rec : trace.steps) {
    const int b = rec.block;
    ++done[b];
    cur[b].clear();
    for (const auto& o : rec.positions) cur[b].push_back(o.argmax_token);
    if (done[b] == tb[b]) cur[b] = trace.final_tokens[b];
    std::vector<TokenId> s;
    for (const auto& c : cur) s.insert(s.end(), c.begin(), c.end());
    vs.states.push_back(std::move(s));
  }
  out.push_back(std::move(vs));
  return out;
}

std::vector<TokenId> visible_tokens(const Vocab& vocab, const std::vector<TokenId>& tokens,
                                    bool keep_masks) {
  std::vector<TokenId> out;
  for (TokenId id : tokens) {
    if (id == vocab.mask_id) {
      if (keep_masks) out.push_back(id);
    } else if (!special(vocab, id)) {
      out.push_back(id);
    }
  }
  return out;
}

namespace {

std::size_t lcs_rec(const std::vector<TokenId>& a, const std::vector<TokenId>& b, std::size_t i,
                    std::size_t j, std::map<std::pair<std::size_t, std::size_t>, std::size_t>& memo) {
  if (i == a.size() || j == b.size()) return 0;
  const auto key = std::make_pair(i, j);
  if (auto it = memo.find(key); it != memo.end()) return it->second;
  std::size_t r = a[i] == b[j] ? 1 + lcs_rec(a, b, i + 1, j + 1, memo)
                               : std::max(lcs_rec(a, b, i + 1, j, memo), lcs_rec(a, b, i, j + 1, memo));
  memo[key] = r;
  return r;
}

std::size_t edit_rec(const std::vector<TokenId>& a, const std::vector<TokenId>& b, std::size_t i,
                     std::size_t j, std::map<std::pair<std::size_t, std::size_t>, std::size_t>& memo) {
  if (i == a.size()) return b.size() - j;
  if (j == b.size()) return a.size() - i;
  const auto key = std::make_pair(i, j);
  if (auto it = memo.find(key); it != memo.end()) return it->second;
  std::size_t r = std::min({edit_rec(a, b, i + 1, j, memo) + 1, edit_rec(a, b, i, j + 1, memo) + 1,
                            edit_rec(a, b, i + 1, j + 1, memo) + (a[i] == b[j] ? 0 : 1)});
  memo[key] = r;
  return r;
}

}  // namespace

double naive_lcs_f(const std::vector<TokenId>& a, const std::vector<TokenId>& b) {
  if (a.empty() && b.empty()) return 1.0;
  if (a.empty() || b.empty()) return 0.0;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  const double l = static_cast<double>(lcs_rec(a, b, 0, 0, memo));
  if (l == 0.0) return 0.0;
  const double r = l / a.size();
  const double p = l / b.size();
  return 2.0 * p * r / (p + r);
}

double naive_levenshtein_sim(const std::vector<TokenId>& a, const std::vector<TokenId>& b) {
  const std::size_t m = std::max(a.size(), b.size());
  if (m == 0) return 1.0;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  return 1.0 - static_cast<double>(edit_rec(a, b, 0, 0, memo)) / static_cast<double>(m);
}

double naive_ad(const InstanceTrace& trace, ViewKind view, const SimFn& sim, bool progressive,
                bool keep_masks) {
  const auto views = replay_view(trace, view);
  const Vocab& v = trace.header->vocab;
  double acc = 0.0;
  for (const auto& vs : views) {
    const int T = static_cast<int>(vs.states.size());
    const auto ref = visible_tokens(v, vs.reference, keep_masks);
    double sum = 0.0;
    for (int s = 1; s <= T; ++s) {
      const double d = 1.0 - sim(visible_tokens(v, vs.states[s - 1], keep_masks), ref);
      const double w = progressive ? static_cast<double>(T - s + 1) / T : 1.0;
      sum += w * d;
    }
    acc += sum / T;
  }
  return acc / static_cast<double>(views.size());
}

std::vector<std::vector<double>> brute_marginals(const std::vector<double>& table, int V, int L,
                                                 const std::vector<int>& z) {
  std::vector<std::vector<double>> m(L, std::vector<double>(V, 0.0));
  double mass = 0.0;
  for (std::size_t idx = 0; idx < table.size(); ++idx) {
    std::vector<int> digits(L);
    std::size_t rest = idx;
    for (int i = L - 1; i >= 0; --i) {
      digits[i] = static_cast<int>(rest % V);
      rest /= V;
    }
    bool ok = true;
    for (int i = 0; i < L; ++i) ok = ok && (z[i] < 0 || z[i] == digits[i]);
    if (!ok) continue;
    mass += table[idx];
    for (int i = 0; i < L; ++i) m[i][digits[i]] += table[idx];
  }
  for (auto& row : m) {
    for (double& p : row) p /= mass;
  }
  return m;
}

double mcnll_surrogate(const oracle::ToyDiffusion& model, const std::vector<int>& y) {
  const int n = static_cast<int>(y.size());
  double total = 0.0;
  for (int l = 1; l <= n; ++l) {
    double subsets = 0.0;
    double acc = 0.0;
    for (std::uint32_t bits = 0; bits < (1u << n); ++bits) {
      if (__builtin_popcount(bits) != l) continue;
      subsets += 1.0;
      std::vector<int> z = y;
      for (int i = 0; i < n; ++i) {
        if ((bits >> i) & 1u) z[i] = -1;
      }
      const auto m = brute_marginals(model.table, model.vocab_size, model.length, z);
      double nll = 0.0;
      for (int i = 0; i < n; ++i) {
        if ((bits >> i) & 1u) nll -= std::log(m[i][y[i]]);
      }
      acc += static_cast<double>(n) / l * nll;
    }
    total += acc / subsets / n;
  }
  return total;
}

BruteTheorem brute_theorem(const oracle::ToyDiffusion& model) {
  const int V = model.vocab_size;
  const int L = model.length;
  const int T = model.steps;
  const std::size_t n = model.table.size();
  auto digits_of = [&](std::size_t idx) {
    std::vector<int> d(L);
    for (int i = L - 1; i >= 0; --i) {
      d[i] = static_cast<int>(idx % V);
      idx /= V;
    }
    return d;
  };
  BruteTheorem out;
  for (int t = 1; t <= T; ++t) {
    const double tau = static_cast<double>(t) / T;
    double err = 0.0;
    double bound = 0.0;
    for (std::size_t yi = 0; yi < n; ++yi) {
      const double py = model.table[yi];
      if (py == 0.0) continue;
      const auto y = digits_of(yi);
      for (std::uint32_t bits = 0; bits < (1u << L); ++bits) {
        std::vector<int> z = y;
        for (int i = 0; i < L; ++i) {
          if ((bits >> i) & 1u) z[i] = -1;
        }
        double w = 1.0;
        for (int i = 0; i < L; ++i) w *= ((bits >> i) & 1u) ? tau : 1.0 - tau;
        if (w == 0.0) continue;
        // Joint argmax over sequences consistent with z, first index wins ties.
        std::size_t best = n;
        double best_p = -1.0;
        for (std::size_t s = 0; s < n; ++s) {
          const auto d = digits_of(s);
          bool ok = true;
          for (int i = 0; i < L; ++i) ok = ok && (z[i] < 0 || z[i] == d[i]);
          if (ok && model.table[s] > best_p) {
            best_p = model.table[s];
            best = s;
          }
        }
        const auto m = brute_marginals(model.table, V, L, z);
        double nll = 0.0;
        for (int i = 0; i < L; ++i) {
          if (z[i] < 0) nll -= std::log(m[i][y[i]]);
        }
        err += py * w * (best != yi ? 1.0 : 0.0);
        bound += py * w * nll;
      }
    }
    out.p_err.push_back(err);
    out.bound.push_back(bound);
    out.mean_u_ad += err / T;
    out.loss += static_cast<double>(T) / t * bound / T;
  }
  return out;
}

std::vector<double> naive_curve(const std::vector<eval::EvalRecord>& records, bool oracle,
                                double max_reject) {
  const std::size_t n = records.size();
  const std::size_t kmax = std::min<std::size_t>(static_cast<std::size_t>(max_reject * n), n - 1);
  std::vector<double> out;
  for (std::size_t k = 0; k <= kmax; ++k) {
    auto sorted = records;
    // Keep order: the first n-k after sorting so that rejected items are last.
    std::sort(sorted.begin(), sorted.end(), [&](const auto& a, const auto& b) {
      if (oracle) {
        if (a.quality != b.quality) return a.quality > b.quality;
      } else if (a.uncertainty != b.uncertainty) {
        return a.uncertainty < b.uncertainty;
      }
      return a.instance_id > b.instance_id;
    });
    double sum = 0.0;
    for (std::size_t i = 0; i < n - k; ++i) sum += sorted[i].quality;
    out.push_back(sum / static_cast<double>(n - k));
  }
  return out;
}

double naive_prr(const std::vector<eval::EvalRecord>& records, double max_reject) {
  const auto unc = naive_curve(records, false, max_reject);
  const auto orc = naive_curve(records, true, max_reject);
  const double n = static_cast<double>(records.size());
  auto area = [&](const std::vector<double>& c) {
    double a = 0.0;
    for (std::size_t i = 1; i < c.size(); ++i) a += (c[i] + c[i - 1]) / 2.0 / n;
    return a;
  };
  const double width = static_cast<double>(unc.size() - 1) / n;
  const double random = unc.front() * width;
  return (area(unc) - random) / (area(orc) - random);
}

double pairwise_auc(const std::vector<eval::EvalRecord>& records, double threshold) {
  double wins = 0.0;
  double pairs = 0.0;
  for (const auto& neg : records) {
    if (neg.quality >= threshold) continue;
    for (const auto& pos : records) {
      if (pos.quality < threshold) continue;
      pairs += 1.0;
      if (neg.uncertainty > pos.uncertainty) {
        wins += 1.0;
      } else if (neg.uncertainty == pos.uncertainty) {
        wins += 0.5;
      }
    }
  }
  return wins / pairs;
}

std::string temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("dlmuq-test-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace testsupport
