// Copyright 2026 The ShortV Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

// Layer Contribution (LC) and cosine-similarity layer profiles over a
// calibration set, redundancy rankings, and replacement plans.
//
// LC of layer i for token class X is the mean over calibration samples of
// KL(p_vanilla || p_i^X), where p are last-position next-token distributions and
// p_i^X comes from the model with only layer i frozen for X.

#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "shortv/core_math.hpp"
#include "shortv/error.hpp"
#include "shortv/model.hpp"
#include "shortv/model_types.hpp"

namespace shortv {

enum class TokenClass : std::uint8_t { kVisual, kText, kAll };
enum class ScoreMetric : std::uint8_t { kLayerContribution, kCosine };

inline const char* to_string(TokenClass c) {
  switch (c) {
    case TokenClass::kVisual: return "visual";
    case TokenClass::kText: return "text";
    case TokenClass::kAll: return "all";
  }
  return "visual";
}
inline const char* to_string(ScoreMetric m) {
  return m == ScoreMetric::kLayerContribution ? "lc" : "cosine";
}

inline FrozenSelector selector_for(TokenClass c) {
  switch (c) {
    case TokenClass::kVisual: return FrozenSelector::visual();
    case TokenClass::kText: return FrozenSelector::text();
    case TokenClass::kAll: return FrozenSelector::all();
  }
  return FrozenSelector::visual();
}

inline bool in_class(TokenRole role, TokenClass c) {
  return c == TokenClass::kAll || (c == TokenClass::kVisual) == (role == TokenRole::kVisual);
}

struct CalibrationSet {
  std::vector<TokenSequence> samples;
};

/// Per-layer, per-class mean scores. For LC the unit is nats; for cosine the
/// score is a similarity in [-1, 1].
struct LayerScoreReport {
  ScoreMetric metric = ScoreMetric::kLayerContribution;
  std::size_t num_layers = 0;
  std::vector<std::map<TokenClass, double>> scores;  // indexed by layer
  std::size_t n_samples = 0;
  std::uint64_t fingerprint = 0;
  std::size_t excluded_rows = 0;  // zero-norm rows skipped by the cosine profile

  bool has(TokenClass c) const {
    return !scores.empty() &&
           std::all_of(scores.begin(), scores.end(), [c](const auto& m) { return m.count(c); });
  }
};

using LCReport = LayerScoreReport;

struct RedundancyRanking {
  std::vector<std::size_t> order;  // most redundant first
  ScoreMetric metric = ScoreMetric::kLayerContribution;
  TokenClass token_class = TokenClass::kVisual;
};

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Callers write results
/// into per-index slots, so reductions stay in index order.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

namespace detail {

inline void check_calibration(const CalibrationSet& calib, const Weights& w,
                              std::span<const TokenClass> classes) {
  require(!calib.samples.empty(), ErrorKind::kInput, "calibration set is empty");
  for (std::size_t s = 0; s < calib.samples.size(); ++s) {
    const auto& seq = calib.samples[s];
    seq.validate(w.config);
    for (auto c : classes) {
      const bool any = c == TokenClass::kAll || (c == TokenClass::kText ? seq.text_count() > 0
                                                                         : seq.visual_count() > 0);
      require(any, ErrorKind::kInput,
              "calibration sample " + std::to_string(s) + " has no " + to_string(c) + " tokens");
    }
  }
}

inline double mean_in_order(std::span<const double> xs) {
  double sum = 0.0;
  for (double x : xs) sum += x;
  return sum / static_cast<double>(xs.size());
}

}  // namespace detail

/// LC of one layer for one token class, each sample run end to end under both plans.
inline double lc_score(const Weights& weights, std::size_t layer, TokenClass cls,
                       const CalibrationSet& calib, std::size_t threads = 1) {
  const auto L = weights.config.num_layers;
  require(layer < L, ErrorKind::kInput, "layer index out of range");
  const TokenClass classes[] = {cls};
  detail::check_calibration(calib, weights, classes);
  const auto dense = LayerPlan::all_dense(L);
  const auto frozen = LayerPlan::single_frozen(L, layer, selector_for(cls));
  std::vector<double> kl(calib.samples.size());
  parallel_for(kl.size(), threads, [&](std::size_t s) {
    const auto& seq = calib.samples[s];
    kl[s] = kl_divergence(logits_last(seq, weights, dense), logits_last(seq, weights, frozen));
  });
  return detail::mean_in_order(kl);
}

/// Full per-layer LC report. Layers before the frozen one are shared with the
/// vanilla pass, so each sample runs L - i layers per (i, class) instead of L.
inline LCReport lc_profile(const Weights& weights, const CalibrationSet& calib,
                           std::span<const TokenClass> classes, std::size_t threads = 1) {
  const auto L = weights.config.num_layers;
  require(!classes.empty(), ErrorKind::kInput, "no token classes requested");
  detail::check_calibration(calib, weights, classes);
  const std::size_t S = calib.samples.size(), C = classes.size();

  // kl[(s * L + i) * C + c]
  std::vector<double> kl(S * L * C, 0.0);
  parallel_for(S, threads, [&](std::size_t s) {
    std::vector<SequenceState> inputs;
    ForwardOptions opts;
    opts.on_layer = [&](std::size_t, const SequenceState& in, const Matrix&) {
      inputs.push_back(in);
    };
    const auto dense = LayerPlan::all_dense(L);
    const auto vanilla = last_logits(forward_from(initial_state(calib.samples[s], weights),
                                                  weights, dense, 0, opts),
                                     weights);
    for (std::size_t i = 0; i < L; ++i) {
      for (std::size_t c = 0; c < C; ++c) {
        const auto plan = LayerPlan::single_frozen(L, i, selector_for(classes[c]));
        const auto modified = last_logits(forward_from(inputs[i], weights, plan, i), weights);
        kl[(s * L + i) * C + c] = kl_divergence(vanilla, modified);
      }
    }
  });

  LCReport rep;
  rep.metric = ScoreMetric::kLayerContribution;
  rep.num_layers = L;
  rep.n_samples = S;
  rep.fingerprint = fingerprint(weights);
  rep.scores.resize(L);
  std::vector<double> column(S);
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t s = 0; s < S; ++s) column[s] = kl[(s * L + i) * C + c];
      rep.scores[i][classes[c]] = detail::mean_in_order(column);
    }
  }
  return rep;
}

/// Mean cosine similarity between each layer's input and output rows of class
/// `cls` during an all-dense pass, pooled over samples and positions.
inline LayerScoreReport cosine_profile(const Weights& weights, const CalibrationSet& calib,
                                       TokenClass cls, std::size_t threads = 1) {
  const auto L = weights.config.num_layers;
  const TokenClass classes[] = {cls};
  detail::check_calibration(calib, weights, classes);
  const std::size_t S = calib.samples.size();
  std::vector<double> sums(S * L, 0.0);
  std::vector<std::size_t> counts(S * L, 0), excluded(S, 0);
  parallel_for(S, threads, [&](std::size_t s) {
    ForwardOptions opts;
    opts.on_layer = [&](std::size_t l, const SequenceState& in, const Matrix& out) {
      for (std::size_t r = 0; r < in.roles.size(); ++r) {
        if (!in_class(in.roles[r], cls)) continue;
        try {
          sums[s * L + l] += cosine_similarity(in.hidden.row(r), out.row(r));
          ++counts[s * L + l];
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::kDegenerate) throw;
          ++excluded[s];
        }
      }
    };
    forward(calib.samples[s], weights, LayerPlan::all_dense(L), opts);
  });

  LayerScoreReport rep;
  rep.metric = ScoreMetric::kCosine;
  rep.num_layers = L;
  rep.n_samples = S;
  rep.fingerprint = fingerprint(weights);
  rep.scores.resize(L);
  for (auto e : excluded) rep.excluded_rows += e;
  for (std::size_t l = 0; l < L; ++l) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t s = 0; s < S; ++s) {
      sum += sums[s * L + l];
      n += counts[s * L + l];
    }
    require(n > 0, ErrorKind::kDegenerate,
            "cosine profile: every row of layer " + std::to_string(l) + " has zero norm");
    rep.scores[l][cls] = sum / static_cast<double>(n);
  }
  return rep;
}

/// Most redundant first: ascending LC or descending cosine similarity. Ties go
/// to the deeper layer.
inline RedundancyRanking rank_layers(const LayerScoreReport& report, TokenClass cls) {
  require(report.scores.size() == report.num_layers && report.has(cls), ErrorKind::kInput,
          std::string("report has no scores for class ") + to_string(cls));
  const auto L = report.num_layers;
  std::vector<std::size_t> order(L);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const bool ascending = report.metric == ScoreMetric::kLayerContribution;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double sa = report.scores[a].at(cls), sb = report.scores[b].at(cls);
    if (sa != sb) return ascending ? sa < sb : sa > sb;
    return a > b;
  });
  return {order, report.metric, cls};
}

/// Frozen(selector) at ranking[0 .. N), dense elsewhere.
inline LayerPlan make_plan(const RedundancyRanking& ranking, std::size_t n,
                           const FrozenSelector& selector) {
  const auto L = ranking.order.size();
  require(n <= L, ErrorKind::kInput,
          "N=" + std::to_string(n) + " exceeds layer count " + std::to_string(L));
  auto plan = LayerPlan::all_dense(L);
  for (std::size_t i = 0; i < n; ++i) plan[ranking.order[i]] = LayerKind::freeze(selector);
  return plan;
}

// ---------------------------------------------------------------------------
// Selection ablations.

/// Deterministic generator used by every randomized tool. Draws are taken as
/// raw 64-bit outputs of std::mt19937_64, reduced with `%`, so sequences are
/// identical across standard libraries.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : gen_(seed) {}
  std::uint64_t next() { return gen_(); }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(gen_() % n); }
  /// Uniform in [0, 1) with 24 bits of precision.
  float unit() { return static_cast<float>(gen_() >> 40) * (1.0f / 16777216.0f); }

  /// First k entries of a Fisher-Yates shuffle of 0..n-1.
  std::vector<std::size_t> choose(std::size_t n, std::size_t k) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[below(i)]);
    idx.resize(std::min(k, n));
    return idx;
  }

 private:
  std::mt19937_64 gen_;
};

/// Mean over samples of KL(vanilla || plan), where the plan may depend on the sample.
template <typename PlanFor>
double mean_kl_to_vanilla_per_sample(const Weights& weights, const CalibrationSet& eval, PlanFor&& plan_for,
                          std::size_t threads = 1) {
  require(!eval.samples.empty(), ErrorKind::kInput, "evaluation set is empty");
  const auto dense = LayerPlan::all_dense(weights.config.num_layers);
  std::vector<double> kl(eval.samples.size());
  parallel_for(kl.size(), threads, [&](std::size_t s) {
    const auto& seq = eval.samples[s];
    const LayerPlan plan = plan_for(s, seq);
    kl[s] = kl_divergence(logits_last(seq, weights, dense), logits_last(seq, weights, plan));
  });
  return detail::mean_in_order(kl);
}

inline double mean_kl_to_vanilla(const Weights& weights, const CalibrationSet& eval,
                                 const LayerPlan& plan, std::size_t threads = 1) {
  return mean_kl_to_vanilla_per_sample(
      weights, eval, [&](std::size_t, const TokenSequence&) { return plan; }, threads);
}

struct AblationResult {
  std::size_t n = 0;
  // Selection strategy, all freezing visual tokens.
  double lc_visual = 0.0;
  double cosine_visual = 0.0;
  std::vector<double> random_visual;
  double random_visual_mean = 0.0;
  // Frozen-token variants.
  double lc_text = 0.0;            // text-class LC ranking, text frozen
  double lc_all_frozen_all = 0.0;  // all-token LC ranking, every token frozen
  double lc_all_random_tokens = 0.0;  // all-token LC ranking, v random tokens frozen
  std::vector<std::size_t> lc_visual_layers, cosine_visual_layers, lc_text_layers;
};

/// Selects layers on `calib` and measures mean KL-to-vanilla on `eval`.
inline AblationResult ablate(const Weights& weights, const CalibrationSet& calib,
                             const CalibrationSet& eval, std::size_t n, std::size_t trials,
                             std::uint64_t seed, std::size_t threads = 1) {
  const auto L = weights.config.num_layers;
  require(n <= L, ErrorKind::kInput, "N exceeds layer count");
  const TokenClass classes[] = {TokenClass::kVisual, TokenClass::kText, TokenClass::kAll};
  const auto lc = lc_profile(weights, calib, classes, threads);
  const auto cos = cosine_profile(weights, calib, TokenClass::kVisual, threads);

  AblationResult r;
  r.n = n;
  const auto lc_vis_plan = make_plan(rank_layers(lc, TokenClass::kVisual), n, FrozenSelector::visual());
  const auto cos_plan = make_plan(rank_layers(cos, TokenClass::kVisual), n, FrozenSelector::visual());
  const auto text_plan = make_plan(rank_layers(lc, TokenClass::kText), n, FrozenSelector::text());
  const auto all_rank = rank_layers(lc, TokenClass::kAll);
  const auto all_plan = make_plan(all_rank, n, FrozenSelector::all());
  const auto vl = lc_vis_plan.frozen_layers();
  r.lc_visual_layers.assign(vl.begin(), vl.end());
  const auto cl = cos_plan.frozen_layers();
  r.cosine_visual_layers.assign(cl.begin(), cl.end());
  const auto tl = text_plan.frozen_layers();
  r.lc_text_layers.assign(tl.begin(), tl.end());

  r.lc_visual = mean_kl_to_vanilla(weights, eval, lc_vis_plan, threads);
  r.cosine_visual = mean_kl_to_vanilla(weights, eval, cos_plan, threads);
  r.lc_text = mean_kl_to_vanilla(weights, eval, text_plan, threads);
  r.lc_all_frozen_all = mean_kl_to_vanilla(weights, eval, all_plan, threads);

  SeededRng rng(seed);
  for (std::size_t k = 0; k < trials; ++k) {
    RedundancyRanking random_rank{rng.choose(L, L), ScoreMetric::kLayerContribution,
                                  TokenClass::kVisual};
    r.random_visual.push_back(mean_kl_to_vanilla(
        weights, eval, make_plan(random_rank, n, FrozenSelector::visual()), threads));
  }
  r.random_visual_mean =
      r.random_visual.empty() ? 0.0 : detail::mean_in_order(r.random_visual);

  // One random token set per evaluation sample, sized like its visual tokens.
  std::vector<std::set<std::int64_t>> random_tokens;
  for (const auto& seq : eval.samples) {
    std::set<std::int64_t> pick;
    for (auto p : rng.choose(seq.size(), seq.visual_count())) pick.insert(static_cast<std::int64_t>(p));
    random_tokens.push_back(std::move(pick));
  }
  r.lc_all_random_tokens = mean_kl_to_vanilla_per_sample(
      weights, eval,
      [&](std::size_t s, const TokenSequence&) {
        return make_plan(all_rank, n, FrozenSelector::explicit_set(random_tokens[s]));
      },
      threads);
  return r;
}

}  // namespace shortv
