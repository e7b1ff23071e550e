#include "dlmuq/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <future>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>
#include <json.hpp>

namespace dlmuq {

std::string to_string(ProviderKind kind) {
  switch (kind) {
    case ProviderKind::exact_match:
      return "exact_match";
    case ProviderKind::token_levenshtein:
      return "token_levenshtein";
    case ProviderKind::token_lcs:
      return "token_lcs";
    case ProviderKind::precomputed:
      return "precomputed";
    case ProviderKind::remote:
      return "remote";
  }
  return "token_lcs";
}

ProviderKind provider_kind_from_string(const std::string& name) {
  for (auto k : {ProviderKind::exact_match, ProviderKind::token_levenshtein, ProviderKind::token_lcs,
                 ProviderKind::precomputed, ProviderKind::remote}) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown similarity provider '" + name + "'");
}

std::string to_string(RenderMasks mode) {
  return mode == RenderMasks::sentinel ? "sentinel" : "strip";
}

RenderMasks render_masks_from_string(const std::string& name) {
  if (name == "sentinel") return RenderMasks::sentinel;
  if (name == "strip") return RenderMasks::strip;
  throw std::invalid_argument("unknown render_masks mode '" + name + "'");
}

RenderedSequence RenderedSequence::from_text(std::string text) {
  RenderedSequence s;
  s.tokens.reserve(text.size());
  for (unsigned char c : text) s.tokens.push_back(static_cast<TokenId>(c));
  s.text = std::move(text);
  return s;
}

RenderedSequence render_sequence(const Vocab& vocab, const std::vector<TokenId>& tokens,
                                 RenderMasks mode) {
  RenderedSequence s;
  for (TokenId t : tokens) {
    if (t == vocab.mask_id) {
      if (mode == RenderMasks::sentinel) s.tokens.push_back(t);
    } else if (!vocab.is_special(t)) {
      s.tokens.push_back(t);
    }
  }
  s.text = render_text(vocab, tokens,
                       mode == RenderMasks::sentinel ? std::optional<std::string>(kMaskSentinel)
                                                     : std::nullopt);
  return s;
}

std::size_t lcs_length(std::span<const TokenId> a, std::span<const TokenId> b) {
  std::vector<std::size_t> row(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = 0;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = a[i - 1] == b[j - 1] ? diag + 1 : std::max(row[j], row[j - 1]);
      diag = up;
    }
  }
  return row[b.size()];
}

double lcs_f_measure(std::span<const TokenId> a, std::span<const TokenId> b) {
  if (a.empty() && b.empty()) return 1.0;
  if (a.empty() || b.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(a, b));
  if (lcs == 0.0) return 0.0;
  const double recall = lcs / static_cast<double>(a.size());
  const double precision = lcs / static_cast<double>(b.size());
  return 2.0 * precision * recall / (precision + recall);
}

double levenshtein_similarity(std::span<const TokenId> a, std::span<const TokenId> b) {
  const std::size_t longest = std::max(a.size(), b.size());
  if (longest == 0) return 1.0;
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return 1.0 - static_cast<double>(row[b.size()]) / static_cast<double>(longest);
}

namespace {

template <typename Fn>
class LocalProvider final : public SimilarityProvider {
 public:
  LocalProvider(ProviderKind kind, Fn fn) : kind_(kind), fn_(fn) {}
  ProviderKind kind() const override { return kind_; }
  std::vector<double> similarity(std::span<const SimilarityPair> pairs) const override {
    std::vector<double> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) out.push_back(fn_(p.a.tokens, p.b.tokens));
    return out;
  }

 private:
  ProviderKind kind_;
  Fn fn_;
};

template <typename Fn>
std::shared_ptr<const SimilarityProvider> local(ProviderKind kind, Fn fn) {
  return std::make_shared<LocalProvider<Fn>>(kind, fn);
}

// Values live in the trace; the dissimilarity module reads them directly.
class PrecomputedProvider final : public SimilarityProvider {
 public:
  ProviderKind kind() const override { return ProviderKind::precomputed; }
  std::vector<double> similarity(std::span<const SimilarityPair>) const override {
    throw SimilarityError("precomputed similarities are only available through a trace");
  }
};

class RemoteProvider final : public SimilarityProvider {
 public:
  explicit RemoteProvider(SimilarityConfig config) : config_(std::move(config)) {
    if (config_.endpoint.empty()) throw SimilarityError("remote provider needs an endpoint");
    if (config_.batch_size == 0) config_.batch_size = 1;
    if (config_.max_in_flight == 0) config_.max_in_flight = 1;
  }

  ProviderKind kind() const override { return ProviderKind::remote; }

  std::vector<double> similarity(std::span<const SimilarityPair> pairs) const override {
    std::vector<double> out(pairs.size(), 0.0);
    std::deque<std::pair<std::size_t, std::future<std::vector<double>>>> in_flight;
    std::size_t failed = 0;
    std::string first_error;

    auto collect = [&] {
      auto [start, fut] = std::move(in_flight.front());
      in_flight.pop_front();
      try {
        const auto scores = fut.get();
        std::copy(scores.begin(), scores.end(), out.begin() + static_cast<std::ptrdiff_t>(start));
      } catch (const std::exception& e) {
        failed += std::min(config_.batch_size, pairs.size() - start);
        if (first_error.empty()) first_error = e.what();
      }
    };

    for (std::size_t start = 0; start < pairs.size(); start += config_.batch_size) {
      if (in_flight.size() >= config_.max_in_flight) collect();
      const auto batch = pairs.subspan(start, std::min(config_.batch_size, pairs.size() - start));
      in_flight.emplace_back(start, std::async(std::launch::async, [this, batch] {
                               return score_with_retry(batch);
                             }));
    }
    while (!in_flight.empty()) collect();
    if (failed > 0) {
      throw RemoteSimilarityError(
          fmt::format("remote similarity failed for {} pair(s): {}", failed, first_error), failed);
    }
    return out;
  }

 private:
  std::vector<double> score_with_retry(std::span<const SimilarityPair> batch) const {
    std::string last_error;
    auto delay = config_.backoff;
    for (int attempt = 0; attempt <= config_.retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(delay);
        delay *= 2;
      }
      try {
        return score_once(batch);
      } catch (const std::exception& e) {
        last_error = e.what();
      }
    }
    throw SimilarityError(
        fmt::format("{} attempt(s) exhausted: {}", config_.retries + 1, last_error));
  }

  std::vector<double> score_once(std::span<const SimilarityPair> batch) const {
    httplib::Client client(config_.endpoint);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
    const auto usecs =
        std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());

    nlohmann::json body{{"pairs", nlohmann::json::array()}};
    for (const auto& p : batch) body["pairs"].push_back({p.a.text, p.b.text});
    auto res = client.Post("/v1/similarity", body.dump(), "application/json");
    if (!res) throw SimilarityError("transport error: " + httplib::to_string(res.error()));
    if (res->status != 200) throw SimilarityError(fmt::format("HTTP status {}", res->status));
    const auto reply = nlohmann::json::parse(res->body);
    if (!reply.is_object() || !reply.contains("scores") || !reply["scores"].is_array()) {
      throw SimilarityError("response lacks a scores array");
    }
    const auto& scores = reply["scores"];
    if (scores.size() != batch.size()) {
      throw SimilarityError(
          fmt::format("response has {} scores for {} pairs", scores.size(), batch.size()));
    }
    std::vector<double> out;
    out.reserve(scores.size());
    for (const auto& s : scores) {
      if (!s.is_number()) throw SimilarityError("non-numeric score");
      const double v = s.get<double>();
      if (std::isnan(v)) throw SimilarityError("NaN score");
      out.push_back(std::clamp(v, 0.0, 1.0));
    }
    return out;
  }

  SimilarityConfig config_;
};

}  // namespace

std::shared_ptr<const SimilarityProvider> make_provider(const SimilarityConfig& config) {
  switch (config.kind) {
    case ProviderKind::exact_match:
      return local(ProviderKind::exact_match,
                   [](std::span<const TokenId> a, std::span<const TokenId> b) {
                     return std::equal(a.begin(), a.end(), b.begin(), b.end()) ? 1.0 : 0.0;
                   });
    case ProviderKind::token_levenshtein:
      return local(ProviderKind::token_levenshtein,
                   [](std::span<const TokenId> a, std::span<const TokenId> b) {
                     return levenshtein_similarity(a, b);
                   });
    case ProviderKind::token_lcs:
      return local(ProviderKind::token_lcs,
                   [](std::span<const TokenId> a, std::span<const TokenId> b) {
                     return lcs_f_measure(a, b);
                   });
    case ProviderKind::precomputed:
      return std::make_shared<PrecomputedProvider>();
    case ProviderKind::remote:
      return std::make_shared<RemoteProvider>(config);
  }
  throw std::invalid_argument("unknown provider kind");
}

std::vector<double> similarity_batch(const SimilarityProvider& provider,
                                     std::span<const SimilarityPair> pairs) {
  auto scores = provider.similarity(pairs);
  if (scores.size() != pairs.size()) {
    throw SimilarityError("provider returned a score count different from the pair count");
  }
  for (double& s : scores) s = std::clamp(s, 0.0, 1.0);
  return scores;
}

}  // namespace dlmuq
