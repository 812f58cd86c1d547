// Copyright 2026 The ShortV Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

// Analytical FLOPs of attention and FFN matrix products, per layer and per
// schedule. Norms, softmax, rotary embedding, residual adds and the LM head are
// not counted. Term mapping for a layer over n = t + v rows:
//   2n*4h*h    W_Q, W_K, W_V, W_O projections
//   2n*3m*h    gate, up and down FFN projections
//   4n*n*h     Q K^T scores and attention-weighted values (full rectangle)
// In a layer with q updated rows and f frozen rows, W_Q, W_O and the FFN see q
// rows, W_K and W_V see all rows, and the score products are q x (q + f).

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "shortv/error.hpp"
#include "shortv/model.hpp"
#include "shortv/model_types.hpp"
#include "shortv/pruning.hpp"

namespace shortv {

using FlopCount = std::uint64_t;

/// FLOPs of one dense layer: 2(t+v)(4h+3m)h + 4(t+v)^2 h.
inline FlopCount dense_layer_flops(std::uint64_t t, std::uint64_t v, std::uint64_t h,
                                   std::uint64_t m) {
  require(t + v >= 1, ErrorKind::kInput, "dense_layer_flops: t + v must be >= 1");
  const auto n = t + v;
  return 2 * n * (4 * h + 3 * m) * h + 4 * n * n * h;
}

/// Layer where `queries` rows are updated and `frozen` rows only supply keys and values.
inline FlopCount frozen_layer_flops(std::uint64_t queries, std::uint64_t frozen, std::uint64_t h,
                                    std::uint64_t m) {
  if (queries == 0) return 0;
  return 2 * queries * (4 * h + 3 * m) * h + 4 * frozen * h * h +
         4 * queries * (queries + frozen) * h;
}

/// FLOPs of one layer with visual tokens frozen: 2t(4h+3m)h + 4vh^2 + 4t(t+v)h.
inline FlopCount shortv_layer_flops(std::uint64_t t, std::uint64_t v, std::uint64_t h,
                                    std::uint64_t m) {
  require(t >= 1, ErrorKind::kInput, "shortv_layer_flops: needs at least one text token");
  return frozen_layer_flops(t, v, h, m);
}

/// Whole-model ratio with N of L layers replaced: ((L-N)F + N F*) / (L F).
inline double model_ratio(std::uint64_t L, std::uint64_t N, std::uint64_t t, std::uint64_t v,
                          std::uint64_t h, std::uint64_t m) {
  require(L >= 1, ErrorKind::kInput, "model_ratio: L must be >= 1");
  require(N <= L, ErrorKind::kInput, "model_ratio: N must be <= L");
  const auto dense = dense_layer_flops(t, v, h, m);
  const auto sparse = shortv_layer_flops(t, v, h, m);
  const long double num = static_cast<long double>((L - N) * dense) +
                          static_cast<long double>(N) * static_cast<long double>(sparse);
  return static_cast<double>(num / (static_cast<long double>(L) * static_cast<long double>(dense)));
}

struct LayerFlops {
  std::size_t layer = 0;
  bool frozen = false;
  std::string selector;  // "dense", "visual", "text", "all", "explicit"
  std::uint64_t t = 0, v = 0, queries = 0;
  FlopCount flops = 0;
};

struct FlopsReport {
  std::uint64_t hidden = 0, intermediate = 0;
  std::vector<LayerFlops> layers;
  FlopCount total = 0;
  FlopCount dense_total = 0;  // all-dense, no pruning, input counts of layer 0
  double ratio = 1.0;
};

inline const char* selector_name(const LayerKind& k) {
  if (k.is_dense()) return "dense";
  switch (k.frozen->kind) {
    case SelectorKind::kVisual: return "visual";
    case SelectorKind::kText: return "text";
    case SelectorKind::kAll: return "all";
    case SelectorKind::kExplicit: return "explicit";
  }
  return "dense";
}

namespace detail {

inline void check_schedule(const ModelConfig& cfg, const PruneConfig& prune,
                           std::span<const TokenCounts> counts) {
  require(counts.size() == cfg.num_layers, ErrorKind::kInput,
          "schedule has " + std::to_string(counts.size()) + " layer counts, model has " +
              std::to_string(cfg.num_layers));
  prune.validate(cfg.num_layers);
  const std::size_t cut = prune.enabled() ? prune.layer() + 1 : cfg.num_layers;
  for (std::size_t l = 1; l < counts.size(); ++l) {
    const bool same = counts[l] == counts[l - 1];
    if (l == cut) {
      require(counts[l].text <= counts[l - 1].text && counts[l].visual <= counts[l - 1].visual,
              ErrorKind::kInput, "schedule counts grow at layer " + std::to_string(l));
    } else {
      require(same, ErrorKind::kInput,
              "schedule counts change at layer " + std::to_string(l) +
                  " where no pruning event occurs");
    }
  }
  if (cut < counts.size()) {
    const auto t0 = counts[0].text, v0 = counts[0].visual;
    const auto& after = counts[cut];
    if (const auto* f = std::get_if<FastV>(&prune.strategy)) {
      require(after.text == t0 && after.visual == v0 - fastv_drop_count(f->ratio, v0),
              ErrorKind::kInput, "schedule counts inconsistent with FastV drop");
    } else if (std::holds_alternative<Vtw>(prune.strategy)) {
      require(after.text == t0 && after.visual == 0, ErrorKind::kInput,
              "schedule counts inconsistent with VTW drop");
    }
  }
}

}  // namespace detail

/// Sums per-layer FLOPs under `plan` with each layer's surviving (t_l, v_l);
/// ratio is against L dense layers on the unpruned layer-0 counts.
/// `queries` optionally supplies realized updated-row counts, required for
/// explicit-position selectors.
inline FlopsReport schedule_flops(const ModelConfig& cfg, const LayerPlan& plan,
                                  const PruneConfig& prune, std::span<const TokenCounts> counts,
                                  std::span<const std::size_t> queries = {}) {
  require(plan.size() == cfg.num_layers, ErrorKind::kInput, "plan length != num_layers");
  detail::check_schedule(cfg, prune, counts);
  FlopsReport rep;
  rep.hidden = cfg.hidden_size;
  rep.intermediate = cfg.intermediate_size;
  const auto h = cfg.hidden_size, m = cfg.intermediate_size;
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const auto [t, v] = counts[l];
    LayerFlops lf;
    lf.layer = l;
    lf.t = t;
    lf.v = v;
    lf.frozen = !plan[l].is_dense();
    lf.selector = selector_name(plan[l]);
    const std::uint64_t n = t + v;
    if (plan[l].is_dense()) {
      lf.queries = n;
      lf.flops = dense_layer_flops(t, v, h, m);
    } else {
      switch (plan[l].frozen->kind) {
        case SelectorKind::kVisual: lf.queries = t; break;
        case SelectorKind::kText: lf.queries = v; break;
        case SelectorKind::kAll: lf.queries = 0; break;
        case SelectorKind::kExplicit:
          require(queries.size() == cfg.num_layers, ErrorKind::kInput,
                  "explicit selectors need realized per-layer query counts");
          lf.queries = queries[l];
          break;
      }
      require(lf.queries <= n, ErrorKind::kInput, "more queries than rows");
      lf.flops = frozen_layer_flops(lf.queries, n - lf.queries, h, m);
    }
    rep.total += lf.flops;
    rep.layers.push_back(std::move(lf));
  }
  rep.dense_total = cfg.num_layers * dense_layer_flops(counts[0].text, counts[0].visual, h, m);
  rep.ratio = static_cast<double>(static_cast<long double>(rep.total) /
                                  static_cast<long double>(rep.dense_total));
  return rep;
}

struct CrossCheck {
  FlopCount analytical = 0;
  FlopCount instrumented = 0;
  double relative_gap = 0.0;      // over the attention + FFN matmul subset
  FlopCount excluded_head = 0;    // LM head product, outside the analytical scope
  FlopsReport report;             // analytical per-layer counts
  std::vector<FlopCount> instrumented_layers;
  ForwardResult forward;
};

/// Runs `seq` through the engine with a FLOP counter and compares every layer
/// against the analytical count for the realized token counts.
inline CrossCheck crosscheck(const Weights& weights, const LayerPlan& plan,
                             const TokenSequence& seq, const PruneConfig& prune = {}) {
  const auto& cfg = weights.config;
  FlopCounter counter;
  ForwardOptions opts;
  opts.counter = &counter;
  opts.prune = &prune;
  CrossCheck cc;
  cc.forward = forward(seq, weights, plan, opts);

  std::vector<TokenCounts> counts;
  std::vector<std::size_t> queries;
  for (const auto& lt : cc.forward.layers) {
    counts.push_back({lt.text, lt.visual});
    queries.push_back(lt.queries);
    cc.instrumented_layers.push_back(lt.flops);
  }
  cc.report = schedule_flops(cfg, plan, prune, counts, queries);
  cc.analytical = cc.report.total;
  cc.instrumented = counter.flops;
  cc.excluded_head = matmul_flops(1, cfg.hidden_size, cfg.vocab_size);
  const double a = static_cast<double>(cc.analytical);
  cc.relative_gap = a == 0.0 ? 0.0
                             : (static_cast<double>(cc.instrumented) - a) / a;
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    require(cc.report.layers[l].flops == cc.instrumented_layers[l], ErrorKind::kAccounting,
            "layer " + std::to_string(l) + ": analytical " +
                std::to_string(cc.report.layers[l].flops) + " != instrumented " +
                std::to_string(cc.instrumented_layers[l]));
  }
  require(cc.analytical == cc.instrumented, ErrorKind::kAccounting,
          "total analytical FLOPs differ from instrumented count");
  return cc;
}

}  // namespace shortv
