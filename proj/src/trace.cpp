#include "dlmuq/trace.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>

namespace dlmuq {

bool Vocab::is_special(TokenId id) const {
  return id == mask_id ||
         std::find(special_ids.begin(), special_ids.end(), id) != special_ids.end();
}

std::string to_string(ViewKind view) {
  switch (view) {
    case ViewKind::block:
      return "block";
    case ViewKind::last:
      return "last";
    case ViewKind::last_prefix:
      return "last_prefix";
    case ViewKind::full:
      return "full";
  }
  return "full";
}

ViewKind view_from_string(const std::string& name) {
  if (name == "block") return ViewKind::block;
  if (name == "last") return ViewKind::last;
  if (name == "last_prefix") return ViewKind::last_prefix;
  if (name == "full") return ViewKind::full;
  throw std::invalid_argument("unknown trajectory view '" + name + "'");
}

std::vector<std::size_t> InstanceTrace::block_step_indices(int block) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (steps[i].block == block) out.push_back(i);
  }
  return out;
}

std::vector<TokenId> InstanceTrace::output() const {
  std::vector<TokenId> out;
  for (const auto& block : final_tokens) out.insert(out.end(), block.begin(), block.end());
  return out;
}

bool InstanceTrace::same_content(const InstanceTrace& other) const {
  const bool headers_equal =
      (header == other.header) || (header && other.header && *header == *other.header);
  return headers_equal && instance_id == other.instance_id &&
         final_tokens == other.final_tokens && steps == other.steps &&
         steps_per_block == other.steps_per_block && nfe == other.nfe &&
         mc_samples == other.mc_samples &&
         precomputed_similarity == other.precomputed_similarity;
}

int content_length(const InstanceTrace& trace) {
  int n = 0;
  for (const auto& block : trace.final_tokens) {
    for (TokenId t : block) {
      if (!trace.vocab().is_special(t)) ++n;
    }
  }
  return n;
}

bool is_valid_block(const InstanceTrace& trace, int block) {
  const auto& tokens = trace.final_tokens.at(block);
  return std::any_of(tokens.begin(), tokens.end(),
                     [&](TokenId t) { return !trace.vocab().is_special(t); });
}

std::vector<int> valid_blocks(const InstanceTrace& trace) {
  std::vector<int> out;
  for (int b = 0; b < trace.num_blocks(); ++b) {
    if (is_valid_block(trace, b)) out.push_back(b);
  }
  return out;
}

std::optional<int> last_valid_block(const InstanceTrace& trace) {
  for (int b = trace.num_blocks() - 1; b >= 0; --b) {
    if (is_valid_block(trace, b)) return b;
  }
  return std::nullopt;
}

namespace {

class ViolationSink {
 public:
  void add(std::string invariant, std::string location, std::string detail) {
    out_.push_back({std::move(invariant), std::move(location), std::move(detail)});
  }
  std::vector<Violation> take() { return std::move(out_); }

 private:
  std::vector<Violation> out_;
};

std::string at(int block, int step, int position) {
  return fmt::format("block {} step {} position {}", block, step, position);
}

void validate_header(const TraceHeader& header, ViolationSink& sink) {
  if (header.format_version != kTraceFormatVersion) {
    sink.add("format_version", "header",
             fmt::format("expected {}, got {}", kTraceFormatVersion, header.format_version));
  }
  if (header.max_steps_per_block < 1 || header.block_length < 1 || header.num_blocks < 1) {
    sink.add("header_dimensions", "header",
             "max_steps_per_block, block_length and num_blocks must be positive");
  }
  const Vocab& v = header.vocab;
  if (!v.contains(v.mask_id)) {
    sink.add("vocab_mask_id", "header.vocab", fmt::format("mask_id {} not in vocab", v.mask_id));
  }
  for (TokenId id : v.special_ids) {
    if (!v.contains(id)) {
      sink.add("vocab_special_ids", "header.vocab", fmt::format("special id {} not in vocab", id));
    }
  }
}

}  // namespace

std::vector<Violation> validate(const InstanceTrace& trace) {
  ViolationSink sink;
  if (!trace.header) {
    sink.add("header", "trace", "missing header");
    return sink.take();
  }
  const TraceHeader& header = *trace.header;
  const Vocab& vocab = header.vocab;
  validate_header(header, sink);

  const int num_blocks = trace.num_blocks();
  if (num_blocks != header.num_blocks) {
    sink.add("num_blocks", "final_tokens",
             fmt::format("{} blocks, header declares {}", num_blocks, header.num_blocks));
  }
  for (int b = 0; b < num_blocks; ++b) {
    const auto& tokens = trace.final_tokens[b];
    if (tokens.empty()) sink.add("block_length", fmt::format("block {}", b), "empty block");
    for (std::size_t k = 0; k < tokens.size(); ++k) {
      if (!vocab.contains(tokens[k]) || tokens[k] == vocab.mask_id) {
        sink.add("final_token", fmt::format("block {} position {}", b, k),
                 fmt::format("token {} is not a valid output token", tokens[k]));
      }
    }
  }

  // Per-step structure, flags and numeric ranges.
  std::vector<int> step_counts(std::max(num_blocks, 0), 0);
  bool steps_well_formed = true;
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    const StepRecord& rec = trace.steps[i];
    if (rec.block < 0 || rec.block >= num_blocks) {
      sink.add("step_block", fmt::format("steps[{}]", i), fmt::format("block {} out of range", rec.block));
      steps_well_formed = false;
      continue;
    }
    const int expected_step = ++step_counts[rec.block];
    if (rec.step != expected_step) {
      sink.add("step_order", fmt::format("steps[{}]", i),
               fmt::format("block {} step {} where {} expected", rec.block, rec.step, expected_step));
      steps_well_formed = false;
    }
    const int lb = trace.block_length(rec.block);
    if (static_cast<int>(rec.positions.size()) != lb) {
      sink.add("step_positions", fmt::format("block {} step {}", rec.block, rec.step),
               fmt::format("{} positions logged, block has {}", rec.positions.size(), lb));
      steps_well_formed = false;
      continue;
    }
    for (int k = 0; k < lb; ++k) {
      const PositionObs& obs = rec.positions[k];
      const std::string loc = at(rec.block, rec.step, k);
      if (obs.position != k) {
        sink.add("position_order", loc, fmt::format("position field is {}", obs.position));
        steps_well_formed = false;
      }
      if (!vocab.contains(obs.argmax_token)) {
        sink.add("argmax_token", loc, fmt::format("token {} not in vocab", obs.argmax_token));
      }
      if (!(std::isfinite(obs.argmax_logprob) && obs.argmax_logprob <= 0.0)) {
        sink.add("argmax_logprob", loc, fmt::format("{} is not a finite value <= 0", obs.argmax_logprob));
      }
      if (!(std::isfinite(obs.entropy) && obs.entropy >= 0.0)) {
        sink.add("entropy", loc, fmt::format("{} is not a finite value >= 0", obs.entropy));
      }
      if (obs.committed_now && !obs.was_masked) {
        sink.add("commit_from_mask", loc, "committed_now without was_masked");
      }
      if (obs.committed_now && obs.remasked_now) {
        sink.add("commit_remask_exclusive", loc, "committed_now and remasked_now both set");
      }
      if (obs.remasked_now && obs.was_masked) {
        sink.add("remask_from_commit", loc, "remasked_now on a position that is already masked");
      }
    }
  }

  if (!trace.steps_per_block.empty()) {
    if (static_cast<int>(trace.steps_per_block.size()) != num_blocks) {
      sink.add("steps_per_block", "steps_per_block",
               fmt::format("{} entries for {} blocks", trace.steps_per_block.size(), num_blocks));
    } else {
      long total = 0;
      for (int b = 0; b < num_blocks; ++b) {
        const int tb = trace.steps_per_block[b];
        total += tb;
        if (tb != step_counts[b]) {
          sink.add("steps_per_block", fmt::format("block {}", b),
                   fmt::format("declares {} steps, {} recorded", tb, step_counts[b]));
        }
        if (tb > header.max_steps_per_block) {
          sink.add("max_steps_per_block", fmt::format("block {}", b),
                   fmt::format("{} steps exceed the bound {}", tb, header.max_steps_per_block));
        }
      }
      if (trace.nfe != total) {
        sink.add("nfe", "nfe", fmt::format("nfe {} != sum of steps_per_block {}", trace.nfe, total));
      }
    }
  } else if (trace.nfe != static_cast<int>(trace.steps.size())) {
    sink.add("nfe", "nfe",
             fmt::format("nfe {} != number of step records {}", trace.nfe, trace.steps.size()));
  }

  // Mask-state machine and commit consistency, per position.
  if (steps_well_formed) {
    for (int b = 0; b < num_blocks; ++b) {
      const auto idx = trace.block_step_indices(b);
      const int lb = trace.block_length(b);
      for (int k = 0; k < lb; ++k) {
        bool masked = true;
        std::optional<TokenId> committed_token;
        int last_commit_step = 0;
        bool state_ok = true;
        for (std::size_t i : idx) {
          const StepRecord& rec = trace.steps[i];
          const PositionObs& obs = rec.positions[k];
          if (obs.was_masked != masked && state_ok) {
            sink.add("mask_state", at(b, rec.step, k),
                     fmt::format("was_masked={} but replay says {}", obs.was_masked, masked));
            state_ok = false;
          }
          if (obs.committed_now) {
            committed_token = obs.argmax_token;
            last_commit_step = rec.step;
            masked = false;
          } else if (obs.remasked_now) {
            committed_token.reset();
            masked = true;
          }
        }
        const std::string loc = fmt::format("block {} position {}", b, k);
        if (!committed_token) {
          sink.add("commit_missing", loc, "position never ends in a committed state");
        } else if (*committed_token != trace.final_tokens[b][k]) {
          sink.add("commit_token", loc,
                   fmt::format("committed {} at step {}, final token is {}", *committed_token,
                               last_commit_step, trace.final_tokens[b][k]));
        }
      }
    }
  }

  const int y_len = content_length(trace);
  const int total_len = static_cast<int>(trace.output().size());
  for (std::size_t m = 0; m < trace.mc_samples.size(); ++m) {
    const MCMaskSample& s = trace.mc_samples[m];
    const std::string loc = fmt::format("mc_samples[{}]", m);
    if (s.l < 1 || s.l > y_len) {
      sink.add("mc_l_range", loc, fmt::format("l={} outside 1..{}", s.l, y_len));
    }
    if (static_cast<int>(s.masked_positions.size()) != s.l) {
      sink.add("mc_l_count", loc,
               fmt::format("{} masked positions for l={}", s.masked_positions.size(), s.l));
    }
    std::set<int> seen;
    for (int p : s.masked_positions) {
      if (p < 0 || p >= total_len || !seen.insert(p).second) {
        sink.add("mc_positions", loc, fmt::format("position {} out of range or repeated", p));
      }
    }
    if (!(std::isfinite(s.sum_logprob) && s.sum_logprob <= 0.0)) {
      sink.add("mc_sum_logprob", loc, fmt::format("{} is not a finite value <= 0", s.sum_logprob));
    }
  }

  if (trace.precomputed_similarity) {
    for (const auto& [key, sim] : *trace.precomputed_similarity) {
      if (!(sim >= 0.0 && sim <= 1.0)) {
        sink.add("precomputed_similarity",
                 fmt::format("{} block {} step {}", to_string(key.view), key.block, key.step),
                 fmt::format("similarity {} outside [0,1]", sim));
      }
    }
  }
  return sink.take();
}

namespace {

std::vector<TokenId> block_state(const InstanceTrace& trace, int block,
                                 const std::vector<std::size_t>& idx, int step) {
  const int tb = static_cast<int>(idx.size());
  if (step >= tb) return trace.final_tokens[block];
  if (step <= 0) return std::vector<TokenId>(trace.block_length(block), trace.vocab().mask_id);
  std::vector<TokenId> out;
  for (const auto& obs : trace.steps[idx[step - 1]].positions) out.push_back(obs.argmax_token);
  return out;
}

int require_last_block(const InstanceTrace& trace) {
  const auto last = last_valid_block(trace);
  if (!last) throw TraceError("trace '" + trace.instance_id + "' has no valid block");
  return *last;
}

}  // namespace

int view_steps(const InstanceTrace& trace, TrajectoryView view) {
  switch (view.kind) {
    case ViewKind::block:
      if (view.block < 0 || view.block >= trace.num_blocks()) {
        throw TraceError(fmt::format("block {} out of range", view.block));
      }
      return static_cast<int>(trace.block_step_indices(view.block).size());
    case ViewKind::last:
    case ViewKind::last_prefix:
      return static_cast<int>(trace.block_step_indices(require_last_block(trace)).size());
    case ViewKind::full:
      return static_cast<int>(trace.steps.size());
  }
  return 0;
}

std::vector<TokenId> intermediate_sequence(const InstanceTrace& trace, TrajectoryView view,
                                           int step) {
  const int t_max = view_steps(trace, view);
  if (step < 0 || step > t_max) {
    throw TraceError(fmt::format("step {} outside 0..{} for {} view", step, t_max,
                                 to_string(view.kind)));
  }
  switch (view.kind) {
    case ViewKind::block:
      return block_state(trace, view.block, trace.block_step_indices(view.block), step);
    case ViewKind::last: {
      const int last = require_last_block(trace);
      return block_state(trace, last, trace.block_step_indices(last), step);
    }
    case ViewKind::last_prefix: {
      const int last = require_last_block(trace);
      std::vector<TokenId> out;
      for (int b = 0; b < last; ++b) {
        out.insert(out.end(), trace.final_tokens[b].begin(), trace.final_tokens[b].end());
      }
      const auto state = block_state(trace, last, trace.block_step_indices(last), step);
      out.insert(out.end(), state.begin(), state.end());
      return out;
    }
    case ViewKind::full: {
      std::vector<int> done(trace.num_blocks(), 0);
      for (int g = 0; g < step; ++g) ++done[trace.steps[g].block];
      std::vector<TokenId> out;
      for (int b = 0; b < trace.num_blocks(); ++b) {
        const auto state = block_state(trace, b, trace.block_step_indices(b), done[b]);
        out.insert(out.end(), state.begin(), state.end());
      }
      return out;
    }
  }
  return {};
}

std::vector<TokenId> view_reference(const InstanceTrace& trace, TrajectoryView view) {
  switch (view.kind) {
    case ViewKind::block:
      return trace.final_tokens.at(view.block);
    case ViewKind::last:
      return trace.final_tokens[require_last_block(trace)];
    case ViewKind::last_prefix: {
      const int last = require_last_block(trace);
      std::vector<TokenId> out;
      for (int b = 0; b <= last; ++b) {
        out.insert(out.end(), trace.final_tokens[b].begin(), trace.final_tokens[b].end());
      }
      return out;
    }
    case ViewKind::full:
      return trace.output();
  }
  return {};
}

std::string render_text(const Vocab& vocab, const std::vector<TokenId>& tokens,
                        const std::optional<std::string>& mask_sentinel) {
  std::string out;
  for (TokenId t : tokens) {
    if (t == vocab.mask_id) {
      if (mask_sentinel) out += *mask_sentinel;
    } else if (!vocab.is_special(t) && vocab.contains(t)) {
      out += vocab.entries[t];
    }
  }
  return out;
}

}  // namespace dlmuq
