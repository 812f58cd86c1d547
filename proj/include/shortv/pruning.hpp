// Copyright 2026 The ShortV Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "shortv/core_math.hpp"
#include "shortv/error.hpp"
#include "shortv/model_types.hpp"

namespace shortv {

// Layer indices are zero-based throughout. An event "after layer K" is applied
// once layer K has run, so layers K+1 .. L-1 see the reduced sequence.

struct NoPrune {
  friend bool operator==(const NoPrune&, const NoPrune&) = default;
};

/// Drop the floor(R * v) visual tokens with the lowest received attention at layer K.
struct FastV {
  std::size_t layer = 2;
  double ratio = 0.5;
  friend bool operator==(const FastV&, const FastV&) = default;
};

/// Drop every visual token after layer K.
struct Vtw {
  std::size_t layer = 16;
  friend bool operator==(const Vtw&, const Vtw&) = default;
};

/// Drop the given original positions after layer K. Used for oracles and ablations.
struct ExplicitDrop {
  std::size_t layer = 0;
  std::set<std::int64_t> positions;
  friend bool operator==(const ExplicitDrop&, const ExplicitDrop&) = default;
};

struct PruneConfig {
  std::variant<NoPrune, FastV, Vtw, ExplicitDrop> strategy;

  bool enabled() const noexcept { return !std::holds_alternative<NoPrune>(strategy); }

  std::size_t layer() const {
    return std::visit(
        [](const auto& s) -> std::size_t {
          if constexpr (std::is_same_v<std::decay_t<decltype(s)>, NoPrune>) return 0;
          else return s.layer;
        },
        strategy);
  }

  void validate(std::size_t num_layers) const {
    if (!enabled()) return;
    require(layer() < num_layers, ErrorKind::kInput,
            "prune layer " + std::to_string(layer()) + " must be < L=" + std::to_string(num_layers));
    if (const auto* f = std::get_if<FastV>(&strategy)) {
      require(f->ratio >= 0.0 && f->ratio <= 1.0, ErrorKind::kInput,
              "FastV drop ratio must lie in [0, 1]");
    }
  }

  friend bool operator==(const PruneConfig&, const PruneConfig&) = default;
};

struct PruneEvent {
  std::size_t after_layer = 0;
  std::vector<std::int64_t> dropped;    // original position ids
  std::vector<std::int64_t> surviving;  // original position ids, in sequence order

  friend bool operator==(const PruneEvent&, const PruneEvent&) = default;
};

/// Post-softmax attention weights of one layer. Frozen positions have no query row.
struct AttentionMap {
  std::vector<std::int64_t> query_positions;
  std::vector<std::int64_t> key_positions;
  std::vector<Matrix> heads;  // each query_positions.size() x key_positions.size()
};

/// Visual positions ordered by importance, most important first. Importance of a
/// key is its mean attention weight over heads and over the query rows that can
/// see it (causal-visible, unfrozen). Ties go to the smaller position.
inline std::vector<std::int64_t> fastv_rank(const AttentionMap* map,
                                            std::span<const std::int64_t> visual_positions) {
  require(map != nullptr, ErrorKind::kState, "fastv_rank: attention map was not captured");
  require(!visual_positions.empty(), ErrorKind::kInput, "fastv_rank: no visual tokens");

  std::vector<double> importance(visual_positions.size(), 0.0);
  for (std::size_t vi = 0; vi < visual_positions.size(); ++vi) {
    const auto p = visual_positions[vi];
    const auto it = std::find(map->key_positions.begin(), map->key_positions.end(), p);
    require(it != map->key_positions.end(), ErrorKind::kInput,
            "fastv_rank: position " + std::to_string(p) + " is not an attention key");
    const auto col = static_cast<std::size_t>(it - map->key_positions.begin());
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& head : map->heads) {
      for (std::size_t q = 0; q < map->query_positions.size(); ++q) {
        if (map->query_positions[q] < p) continue;
        sum += head(q, col);
        ++count;
      }
    }
    importance[vi] = count == 0 ? 0.0 : sum / static_cast<double>(count);
  }

  std::vector<std::size_t> order(visual_positions.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (importance[a] != importance[b]) return importance[a] > importance[b];
    return visual_positions[a] < visual_positions[b];
  });
  std::vector<std::int64_t> ranked(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) ranked[i] = visual_positions[order[i]];
  return ranked;
}

/// floor(R * v); the epsilon absorbs products such as 0.29 * 100 landing just below an integer.
inline std::size_t fastv_drop_count(double ratio, std::size_t visual) {
  const auto n = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(visual) + 1e-9));
  return std::min(n, visual);
}

inline PruneEvent make_event(std::size_t after_layer, std::span<const std::int64_t> current,
                             const std::set<std::int64_t>& drop) {
  PruneEvent ev;
  ev.after_layer = after_layer;
  for (auto p : current) (drop.count(p) ? ev.dropped : ev.surviving).push_back(p);
  return ev;
}

/// Drops the tail of `rank` (least important visual tokens).
inline PruneEvent fastv_prune(std::span<const std::int64_t> rank, double ratio,
                              std::size_t after_layer, std::span<const std::int64_t> current) {
  const auto n = fastv_drop_count(ratio, rank.size());
  const std::set<std::int64_t> drop(rank.end() - static_cast<std::ptrdiff_t>(n), rank.end());
  return make_event(after_layer, current, drop);
}

inline PruneEvent vtw_event(std::size_t after_layer, std::span<const std::int64_t> current,
                            std::span<const TokenRole> roles) {
  std::set<std::int64_t> drop;
  for (std::size_t i = 0; i < current.size(); ++i)
    if (roles[i] == TokenRole::kVisual) drop.insert(current[i]);
  return make_event(after_layer, current, drop);
}

/// Text and visual token counts entering one layer.
struct TokenCounts {
  std::size_t text = 0;
  std::size_t visual = 0;
  friend bool operator==(const TokenCounts&, const TokenCounts&) = default;
};

/// Per-layer (t_l, v_l) for a schedule; FastV/VTW counts do not depend on which
/// tokens are dropped. ExplicitDrop needs the sequence and is rejected here.
inline std::vector<TokenCounts> realized_counts(std::size_t num_layers, std::size_t text,
                                                std::size_t visual, const PruneConfig& prune) {
  prune.validate(num_layers);
  require(!std::holds_alternative<ExplicitDrop>(prune.strategy), ErrorKind::kInput,
          "realized_counts: explicit drops require the token sequence");
  std::vector<TokenCounts> counts(num_layers, TokenCounts{text, visual});
  if (!prune.enabled()) return counts;
  std::size_t after = visual;
  if (const auto* f = std::get_if<FastV>(&prune.strategy)) after = visual - fastv_drop_count(f->ratio, visual);
  if (std::holds_alternative<Vtw>(prune.strategy)) after = 0;
  for (std::size_t l = prune.layer() + 1; l < num_layers; ++l) counts[l].visual = after;
  return counts;
}

}  // namespace shortv
