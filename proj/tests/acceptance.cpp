// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include <fmt/format.h>

#include "dlmuq/cocoa.hpp"
#include "dlmuq/commands.hpp"
#include "dlmuq/eval.hpp"
#include "dlmuq/oracle.hpp"
#include "dlmuq/signals.hpp"
#include "dlmuq/trace_io.hpp"
#include "support.hpp"

using namespace dlmuq;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(const std::string& name, const std::function<Outcome()>& body) {
  const auto start = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  std::printf("%s %s: %s [%.2fs]\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
  failures += !o.pass;
}

double elapsed(Clock::time_point since) {
  return std::chrono::duration<double>(Clock::now() - since).count();
}

bool close(double a, double b, double tol) { return std::abs(a - b) <= tol * std::max(1.0, std::abs(b)); }

std::shared_ptr<const SimilarityProvider> provider(ProviderKind kind) {
  SimilarityConfig c;
  c.kind = kind;
  return make_provider(c);
}

// Simulator traces over random small configurations.
std::vector<InstanceTrace> random_traces(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<InstanceTrace> out;
  while (static_cast<int>(out.size()) < n) {
    auto m = oracle::make_toy(2 + static_cast<int>(rng() % 4), 2 + static_cast<int>(rng() % 4),
                              1 + static_cast<int>(rng() % 8), "dirichlet:0.5", rng(),
                              rng() % 2 ? oracle::UnmaskPolicy::random_order
                                        : oracle::UnmaskPolicy::confidence_order);
    m.num_blocks = 1 + static_cast<int>(rng() % 2);
    m.remask_prob = rng() % 2 ? 0.3 : 0.0;
    m.mc_samples = 8;
    for (auto& t : oracle::generate_traces(m, 10)) {
      if (static_cast<int>(out.size()) < n) out.push_back(std::move(t));
    }
  }
  return out;
}

Outcome theorem_sweep() {
  const auto start = Clock::now();
  const std::uint64_t seed = 20240601;
  const auto models = sweep_models(20, seed, oracle::UnmaskPolicy::random_order);
  int held = 0;
  double worst = 1e300;
  std::string seeds;
  for (const auto& m : models) {
    const auto r = oracle::verify_error_bound(m, 10000);
    held += r.inequality_holds;
    worst = std::min(worst, r.margin + r.headline_slack);
    seeds += fmt::format("{}{}", seeds.empty() ? "" : ",", m.seed);
  }
  const double secs = elapsed(start);
  return {held == 20 && secs < 120.0,
          fmt::format("{}/20 configs hold (mean and per-step), min slack-adjusted margin {:.4g}, "
                      "{:.1f}s < 120s, sweep seed {}, config seeds [{}]",
                      held, worst, secs, seed, seeds)};
}

Outcome exact_case() {
  const auto start = Clock::now();
  const auto m = oracle::make_toy(2, 2, 2, "uniform", 0);
  const auto r = oracle::verify_error_bound(m, 0, oracle::LossMode::exact_discretized);
  const double secs = elapsed(start);
  const auto b = testsupport::brute_theorem(m);
  bool match = std::abs(r.mean_u_ad.value - b.mean_u_ad) <= 1e-10 && std::abs(r.loss.value - b.loss) <= 1e-10;
  for (int t = 0; t < 2; ++t) {
    match = match && std::abs(r.per_step_probs[t] - b.p_err[t]) <= 1e-10 &&
            std::abs(r.per_step_bounds[t] - b.bound[t]) <= 1e-10;
  }
  const bool strict = r.mean_u_ad.value < r.loss.value;
  return {match && strict && r.inequality_holds && secs < 1.0,
          fmt::format("E[u_AD]={:.12g} L={:.12g} brute=({:.12g}, {:.12g}) strict={} {:.4f}s < 1s",
                      r.mean_u_ad.value, r.loss.value, b.mean_u_ad, b.loss, strict, secs)};
}

Outcome progressive_bounds() {
  const auto start = Clock::now();
  const auto traces = random_traces(1000, 99);
  std::size_t checked = 0, violations = 0;
  for (auto kind : {ProviderKind::exact_match, ProviderKind::token_lcs}) {
    for (auto view : {ViewKind::block, ViewKind::last, ViewKind::last_prefix, ViewKind::full}) {
      for (const auto& c : oracle::verify_progressive_bounds(traces, ADConfig{view, false, provider(kind)})) {
        if (!c.defined) continue;
        ++checked;
        violations += !c.holds;
      }
    }
  }
  const double secs = elapsed(start);
  return {violations == 0 && checked > 0 && secs < 30.0,
          fmt::format("{} violations over {} (trace, provider, view) checks, {:.1f}s < 30s", violations,
                      checked, secs)};
}

std::vector<eval::EvalRecord> uniform_records(std::size_t n, std::mt19937_64& rng, int levels = 0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<eval::EvalRecord> r;
  for (std::size_t i = 0; i < n; ++i) {
    double q = u(rng);
    double c = u(rng);
    if (levels > 0) {
      q = static_cast<double>(rng() % levels) / levels;
      c = static_cast<double>(rng() % levels);
    }
    r.push_back({fmt::format("r{:05}", i), q, c});
  }
  return r;
}

Outcome prr_calibration() {
  std::mt19937_64 rng(5150);
  auto oracle_fixture = uniform_records(500, rng);
  for (auto& x : oracle_fixture) x.uncertainty = -x.quality;
  const double oracle_prr = eval::prr(oracle_fixture).prr;
  const bool oracle_ok = std::abs(oracle_prr - 1.0) <= 1e-9;

  double sum = 0.0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    std::mt19937_64 r(1'000'000 + s);
    sum += eval::prr(uniform_records(200, r)).prr;
  }
  const double mean = sum / 1000.0;
  const bool random_ok = std::abs(mean) < 0.02;

  int fixtures = 0, mismatches = 0;
  for (int i = 0; i < 300; ++i) {
    const std::size_t n = 2 + rng() % 99;
    const auto recs = uniform_records(n, rng, i % 2 ? 5 : 0);
    ++fixtures;
    const auto p = eval::prr(recs);
    if (!p.degenerate && !close(p.prr, testsupport::naive_prr(recs, 0.5), 1e-12)) ++mismatches;
    try {
      if (eval::roc_auc(recs, 0.5) != testsupport::pairwise_auc(recs, 0.5)) ++mismatches;
    } catch (const eval::EvalError&) {
      // one class only at this threshold
    }
  }
  return {oracle_ok && random_ok && mismatches == 0,
          fmt::format("oracle PRR={:.12f} (tol 1e-9), mean independent PRR={:.5f} over 1000 seeds (< 0.02), "
                      "{} brute-force mismatches on {} fixtures of <= 100 records",
                      oracle_prr, mean, mismatches, fixtures)};
}

Outcome mcnll_estimator() {
  auto m = oracle::make_toy(5, 4, 4, "dirichlet:1.0", 4242);
  m.mc_samples = 4096;
  auto trace = oracle::generate_traces(m, 1).front();
  const auto y_tokens = trace.output();
  const std::vector<int> y(y_tokens.begin(), y_tokens.end());
  const double exact = testsupport::mcnll_surrogate(m, y);
  const double estimate = mcnll(trace).value;
  const double rel = std::abs(estimate - exact) / exact;

  // N * Var across independent batches should stay roughly constant.
  const int batches = 400;
  std::vector<double> scaled;
  for (int n : {16, 256, 4096}) {
    std::mt19937_64 rng(777 + n);
    double s1 = 0.0, s2 = 0.0;
    for (int b = 0; b < batches; ++b) {
      InstanceTrace t = trace;
      t.mc_samples = oracle::draw_mc_samples(m, y, n, rng);
      const double v = mcnll(t).value;
      s1 += v;
      s2 += v * v;
    }
    const double var = (s2 - s1 * s1 / batches) / (batches - 1);
    scaled.push_back(var * n);
  }
  const double lo = *std::min_element(scaled.begin(), scaled.end());
  const double hi = *std::max_element(scaled.begin(), scaled.end());
  const bool variance_ok = hi / lo <= 1.5;
  return {rel <= 0.02 && variance_ok,
          fmt::format("estimate {:.6f} vs exhaustive {:.6f}, rel err {:.4f} (<= 0.02); N*Var at N=16,256,4096 "
                      "= {:.4f}, {:.4f}, {:.4f} (max/min {:.3f} <= 1.5)",
                      estimate, exact, rel, scaled[0], scaled[1], scaled[2], hi / lo)};
}

Outcome replay_equivalence() {
  const auto traces = random_traces(100, 1234);
  int mismatches = 0;
  for (const auto& t : traces) {
    const auto r = testsupport::replay(t);
    auto cmp = [&](const SignalValue& v, double expected) {
      if (!v.well_defined || !close(v.value, expected, 1e-12)) ++mismatches;
    };
    if (r.traj_defined) {
      cmp(traj_nll(t), r.traj_nll);
      cmp(traj_entropy(t), r.traj_entropy);
    }
    cmp(commit_nll(t), r.commit_nll);
    cmp(remask(t, RemaskMode::events), r.remask_events);
    cmp(remask(t, RemaskMode::masked_state), r.remask_masked);
    cmp(flip_count(t), r.flip_count);
    cmp(nfe(t), r.nfe);
  }
  return {mismatches == 0, fmt::format("{} mismatches (tol 1e-12) over 100 traces and 7 signal values each", mismatches)};
}

Outcome cocoa_sanity() {
  struct Scenario {
    int V, L, T;
    double alpha;
    std::uint64_t seed;
  };
  const Scenario scenarios[] = {{3, 4, 4, 0.3, 101}, {4, 4, 4, 0.5, 202}, {3, 6, 6, 0.4, 303}};
  const auto lcs = provider(ProviderKind::token_lcs);
  bool all = true;
  std::string detail;
  for (const auto& s : scenarios) {
    auto m = oracle::make_toy(s.V, s.L, s.T, fmt::format("dirichlet:{}", s.alpha), s.seed);
    m.num_blocks = 2;
    m.remask_prob = 0.3;
    m.mc_samples = 16;
    const auto mode = std::max_element(m.table.begin(), m.table.end()) - m.table.begin();
    const auto traces = oracle::generate_traces(m, 400);
    auto score = [&](const std::function<SignalValue(const InstanceTrace&)>& f) {
      std::vector<eval::EvalRecord> recs;
      for (const auto& t : traces) {
        const auto v = f(t);
        if (!v.well_defined) continue;
        const auto y = t.output();
        const double q = m.index_of(std::vector<int>(y.begin(), y.end())) == static_cast<std::size_t>(mode);
        recs.push_back({t.instance_id, q, v.value});
      }
      return eval::prr(recs).prr;
    };
    const double g = score([&](const InstanceTrace& t) { return d_cocoa_global(t, lcs); });
    const double l = score([&](const InstanceTrace& t) { return d_cocoa_local(t, lcs); });
    const double f_mcnll = score(mcnll_norm);
    const double f_nfe_ad = score([&](const InstanceTrace& t) {
      auto v = average_dissimilarity(t, ADConfig{ViewKind::full, false, lcs});
      v.value *= t.nfe;
      return v;
    });
    const double f_commit = score(commit_nll);
    const double f_ad_block = score([&](const InstanceTrace& t) {
      return average_dissimilarity(t, ADConfig{ViewKind::block, false, lcs});
    });
    const bool ok_g = g > 0.0 && g >= std::min(f_mcnll, f_nfe_ad);
    const bool ok_l = l > 0.0 && l >= std::min(f_commit, f_ad_block);
    all = all && ok_g && ok_l;
    detail += fmt::format("{}seed {}: G={:.3f} (factors {:.3f}, {:.3f}) L={:.3f} (factors {:.3f}, {:.3f})",
                          detail.empty() ? "" : "; ", s.seed, g, f_mcnll, f_nfe_ad, l, f_commit, f_ad_block);
  }
  return {all, detail};
}

Outcome round_trip() {
  const auto traces = random_traces(500, 4321);
  int invalid = 0;
  for (const auto& t : traces) invalid += !validate(t).empty();
  // Traces from one header per file.
  int files = 0, differ = 0;
  for (std::size_t i = 0; i < traces.size();) {
    std::size_t j = i;
    while (j < traces.size() && traces[j].header == traces[i].header) ++j;
    const std::vector<InstanceTrace> group(traces.begin() + i, traces.begin() + j);
    for (bool gz : {false, true}) {
      std::ostringstream a;
      write_traces(group, a, std::nullopt, gz);
      std::istringstream in(a.str());
      const auto back = read_traces(in);
      std::ostringstream b;
      write_traces(back, b, std::nullopt, gz);
      ++files;
      bool same = a.str() == b.str() && back.size() == group.size();
      for (std::size_t k = 0; same && k < back.size(); ++k) same = back[k].same_content(group[k]);
      differ += !same;
    }
    i = j;
  }
  return {invalid == 0 && differ == 0,
          fmt::format("{}/500 traces invalid; {} of {} plain/gzip files differ after read then write", invalid,
                      differ, files)};
}

}  // namespace

int main() {
  criterion("theorem sweep", theorem_sweep);
  criterion("exact enumeration case", exact_case);
  criterion("bound sandwich", progressive_bounds);
  criterion("PRR calibration", prr_calibration);
  criterion("MCNLL estimator", mcnll_estimator);
  criterion("signal replay equivalence", replay_equivalence);
  criterion("D-CoCoA sanity", cocoa_sanity);
  criterion("round trip and validation", round_trip);
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
