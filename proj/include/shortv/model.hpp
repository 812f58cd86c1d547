// Copyright 2026 The ShortV Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

// Pre-norm decoder-only transformer (RMS norm, rotary positions, gated SiLU FFN)
// over mixed visual/text sequences, with per-layer frozen-token execution.
//
// A frozen layer leaves the selected rows untouched. The remaining rows are the
// only queries, and the only rows that pass through W_Q, W_O and the FFN; every
// surviving row still supplies keys and values through the layer's own
// attention norm. Attention scores are materialized as full rectangular
// (queries x keys) products so that instrumented FLOPs match the analytical
// counts in flops.hpp exactly.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "shortv/core_math.hpp"
#include "shortv/error.hpp"
#include "shortv/model_types.hpp"
#include "shortv/pruning.hpp"

namespace shortv {

/// Hidden states of the surviving rows plus their original position ids and roles.
struct SequenceState {
  Matrix hidden;
  std::vector<std::int64_t> positions;
  std::vector<TokenRole> roles;

  std::size_t text_count() const {
    return static_cast<std::size_t>(std::count(roles.begin(), roles.end(), TokenRole::kText));
  }
  std::size_t visual_count() const { return roles.size() - text_count(); }
};

inline Matrix embed(const TokenSequence& seq, const Weights& weights) {
  const auto& cfg = weights.config;
  seq.validate(cfg);
  Matrix out(seq.size(), cfg.hidden_size);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    std::span<const float> src;
    if (const auto* t = std::get_if<TextToken>(&seq[i])) src = weights.embedding.row(t->id);
    else src = std::get<VisualToken>(seq[i]).embedding;
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

inline SequenceState initial_state(const TokenSequence& seq, const Weights& weights) {
  SequenceState s;
  s.hidden = embed(seq, weights);
  s.roles = seq.roles();
  s.positions.resize(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) s.positions[i] = static_cast<std::int64_t>(i);
  return s;
}

namespace detail {

/// Rotate-half rotary embedding applied per head in place.
inline void apply_rope(Matrix& x, std::span<const std::int64_t> positions, const ModelConfig& cfg) {
  const std::size_t d = cfg.head_dim(), half = d / 2;
  std::vector<double> inv_freq(half);
  for (std::size_t j = 0; j < half; ++j)
    inv_freq[j] = std::pow(cfg.rope_theta, -2.0 * static_cast<double>(j) / static_cast<double>(d));
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    const double pos = static_cast<double>(positions[r]);
    for (std::size_t j = 0; j < half; ++j) {
      const float c = static_cast<float>(std::cos(pos * inv_freq[j]));
      const float s = static_cast<float>(std::sin(pos * inv_freq[j]));
      for (std::size_t h = 0; h < cfg.num_heads; ++h) {
        float& a = row[h * d + j];
        float& b = row[h * d + j + half];
        const float x1 = a, x2 = b;
        a = x1 * c - x2 * s;
        b = x2 * c + x1 * s;
      }
    }
  }
}

inline Matrix head_slice(const Matrix& x, std::size_t head, std::size_t d) {
  Matrix out(x.rows(), d);
  for (std::size_t r = 0; r < x.rows(); ++r)
    std::copy_n(x.row(r).begin() + static_cast<std::ptrdiff_t>(head * d), d, out.row(r).begin());
  return out;
}

/// Causal multi-head attention of `q` (query rows) over all key/value rows.
inline Matrix attention(const Matrix& q, std::span<const std::int64_t> q_pos, const Matrix& k,
                        const Matrix& v, std::span<const std::int64_t> k_pos,
                        const ModelConfig& cfg, FlopCounter* counter, AttentionMap* capture) {
  const std::size_t d = cfg.head_dim();
  const float scale = static_cast<float>(1.0 / std::sqrt(static_cast<double>(d)));
  Matrix context(q.rows(), cfg.hidden_size);
  if (capture != nullptr) {
    capture->query_positions.assign(q_pos.begin(), q_pos.end());
    capture->key_positions.assign(k_pos.begin(), k_pos.end());
    capture->heads.clear();
  }
  std::vector<double> ex(k.rows());
  for (std::size_t h = 0; h < cfg.num_heads; ++h) {
    const Matrix kt = transpose(head_slice(k, h, d));
    Matrix scores = matmul(head_slice(q, h, d), kt, counter);
    for (std::size_t i = 0; i < scores.rows(); ++i) {
      auto row = scores.row(i);
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < row.size(); ++j) {
        if (k_pos[j] > q_pos[i]) continue;
        mx = std::max(mx, static_cast<double>(row[j] * scale));
      }
      double sum = 0.0;
      for (std::size_t j = 0; j < row.size(); ++j) {
        ex[j] = k_pos[j] > q_pos[i] ? 0.0 : std::exp(static_cast<double>(row[j] * scale) - mx);
        sum += ex[j];
      }
      for (std::size_t j = 0; j < row.size(); ++j) row[j] = static_cast<float>(ex[j] / sum);
    }
    const Matrix ctx = matmul(scores, head_slice(v, h, d), counter);
    for (std::size_t r = 0; r < ctx.rows(); ++r)
      std::copy(ctx.row(r).begin(), ctx.row(r).end(),
                context.row(r).begin() + static_cast<std::ptrdiff_t>(h * d));
    if (capture != nullptr) capture->heads.push_back(std::move(scores));
  }
  return context;
}

inline float silu(float x) { return x / (1.0f + std::exp(-x)); }

inline Matrix ffn(const Matrix& x, const LayerWeights& lw, FlopCounter* counter) {
  Matrix gate = matmul(x, lw.ffn_gate, counter);
  const Matrix up = matmul(x, lw.ffn_up, counter);
  for (std::size_t i = 0; i < gate.size(); ++i)
    gate.data()[i] = silu(gate.data()[i]) * up.data()[i];
  return matmul(gate, lw.ffn_down, counter);
}

/// Shared body of dense and frozen layers. `active` lists the rows that act as
/// queries and receive updates; all other rows are copied through.
inline Matrix layer_forward(const Matrix& hs, const LayerWeights& lw,
                            std::span<const std::int64_t> positions,
                            const std::vector<std::size_t>* active, const ModelConfig& cfg,
                            FlopCounter* counter, AttentionMap* capture) {
  require(hs.cols() == cfg.hidden_size, ErrorKind::kShape, "hidden states width != hidden_size");
  require(positions.size() == hs.rows(), ErrorKind::kShape, "one position id per row required");
  const bool dense = active == nullptr;
  const std::size_t n_active = dense ? hs.rows() : active->size();
  if (n_active == 0) {
    if (capture != nullptr) {
      capture->query_positions.clear();
      capture->key_positions.assign(positions.begin(), positions.end());
      capture->heads.assign(cfg.num_heads, Matrix(0, hs.rows()));
    }
    return hs;
  }

  const Matrix x = rms_norm_rows(hs, lw.attn_norm, cfg.norm_eps);
  Matrix k = matmul(x, lw.wk, counter);
  const Matrix v = matmul(x, lw.wv, counter);
  apply_rope(k, positions, cfg);

  std::vector<std::int64_t> q_pos;
  Matrix q;
  if (dense) {
    q = matmul(x, lw.wq, counter);
    q_pos.assign(positions.begin(), positions.end());
  } else {
    q = matmul(gather_rows(x, *active), lw.wq, counter);
    for (auto r : *active) q_pos.push_back(positions[r]);
  }
  apply_rope(q, q_pos, cfg);

  const Matrix ctx = attention(q, q_pos, k, v, positions, cfg, counter, capture);
  const Matrix attn_out = matmul(ctx, lw.wo, counter);

  Matrix mid = dense ? hs : gather_rows(hs, *active);
  for (std::size_t i = 0; i < mid.size(); ++i) mid.data()[i] += attn_out.data()[i];
  const Matrix ffn_out = ffn(rms_norm_rows(mid, lw.ffn_norm, cfg.norm_eps), lw, counter);
  for (std::size_t i = 0; i < mid.size(); ++i) mid.data()[i] += ffn_out.data()[i];

  if (dense) return mid;
  Matrix out = hs;
  for (std::size_t i = 0; i < active->size(); ++i)
    std::copy(mid.row(i).begin(), mid.row(i).end(), out.row((*active)[i]).begin());
  return out;
}

}  // namespace detail

inline Matrix forward_dense_layer(const Matrix& hs, const LayerWeights& lw,
                                  std::span<const std::int64_t> positions, const ModelConfig& cfg,
                                  FlopCounter* counter = nullptr, AttentionMap* capture = nullptr) {
  return detail::layer_forward(hs, lw, positions, nullptr, cfg, counter, capture);
}

/// Rows listed in `frozen_rows` (indices into `hs`) come back bit-identical.
inline Matrix forward_frozen_layer(const Matrix& hs, const LayerWeights& lw,
                                   std::span<const std::size_t> frozen_rows,
                                   std::span<const std::int64_t> positions, const ModelConfig& cfg,
                                   FlopCounter* counter = nullptr,
                                   AttentionMap* capture = nullptr) {
  std::vector<bool> frozen(hs.rows(), false);
  for (auto r : frozen_rows) {
    require(r < hs.rows(), ErrorKind::kInput,
            "frozen row " + std::to_string(r) + " out of range for " + std::to_string(hs.rows()) +
                " rows");
    frozen[r] = true;
  }
  std::vector<std::size_t> active;
  for (std::size_t r = 0; r < hs.rows(); ++r)
    if (!frozen[r]) active.push_back(r);
  return detail::layer_forward(hs, lw, positions, &active, cfg, counter, capture);
}

/// Rows of `state` selected by `selector`.
inline std::vector<std::size_t> resolve_selector(const FrozenSelector& selector,
                                                 const SequenceState& state) {
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < state.positions.size(); ++r)
    if (selector.selects(state.positions[r], state.roles[r])) rows.push_back(r);
  return rows;
}

struct ForwardOptions {
  const PruneConfig* prune = nullptr;
  FlopCounter* counter = nullptr;
  bool capture_attention = false;
  /// Called with (layer index, input, output) after each layer; used by profilers.
  std::function<void(std::size_t, const SequenceState&, const Matrix&)> on_layer;
};

struct LayerTrace {
  std::size_t layer = 0;
  bool frozen = false;
  std::size_t text = 0;        // text rows entering the layer
  std::size_t visual = 0;      // visual rows entering the layer
  std::size_t queries = 0;     // rows updated by the layer
  std::uint64_t flops = 0;     // instrumented matmul FLOPs of this layer
};

struct ForwardResult {
  Matrix residual;            // hidden rows leaving the last layer, before the final norm
  SequenceState final_state;  // same rows after the final RMS norm
  std::vector<LayerTrace> layers;
  std::vector<PruneEvent> events;
  std::vector<std::optional<AttentionMap>> attention;  // per layer, when captured
};

namespace detail {

inline void apply_event(SequenceState& state, const PruneEvent& ev) {
  const auto last = state.positions.back();
  require(std::find(ev.surviving.begin(), ev.surviving.end(), last) != ev.surviving.end(),
          ErrorKind::kSchedule,
          "pruning after layer " + std::to_string(ev.after_layer) +
              " removes the last text position");
  std::vector<std::size_t> keep;
  std::size_t s = 0;
  for (std::size_t r = 0; r < state.positions.size() && s < ev.surviving.size(); ++r) {
    if (state.positions[r] == ev.surviving[s]) {
      keep.push_back(r);
      ++s;
    }
  }
  SequenceState next;
  next.hidden = gather_rows(state.hidden, keep);
  for (auto r : keep) {
    next.positions.push_back(state.positions[r]);
    next.roles.push_back(state.roles[r]);
  }
  state = std::move(next);
}

inline PruneEvent plan_event(const PruneConfig& prune, std::size_t layer,
                             const SequenceState& state, const AttentionMap* map) {
  if (const auto* f = std::get_if<FastV>(&prune.strategy)) {
    std::vector<std::int64_t> visual;
    for (std::size_t r = 0; r < state.roles.size(); ++r)
      if (state.roles[r] == TokenRole::kVisual) visual.push_back(state.positions[r]);
    if (visual.empty()) return make_event(layer, state.positions, {});
    return fastv_prune(fastv_rank(map, visual), f->ratio, layer, state.positions);
  }
  if (std::holds_alternative<Vtw>(prune.strategy))
    return vtw_event(layer, state.positions, state.roles);
  return make_event(layer, state.positions, std::get<ExplicitDrop>(prune.strategy).positions);
}

}  // namespace detail

/// Runs layers [begin, L) from `state` and applies the final RMS norm.
inline ForwardResult forward_from(SequenceState state, const Weights& weights,
                                  const LayerPlan& plan, std::size_t begin,
                                  const ForwardOptions& opts = {}) {
  const auto& cfg = weights.config;
  require(plan.size() == cfg.num_layers, ErrorKind::kInput,
          "plan has " + std::to_string(plan.size()) + " layers, model has " +
              std::to_string(cfg.num_layers));
  if (opts.prune != nullptr) opts.prune->validate(cfg.num_layers);

  ForwardResult result;
  if (opts.capture_attention) result.attention.resize(cfg.num_layers);
  for (std::size_t l = begin; l < cfg.num_layers; ++l) {
    const bool prune_here = opts.prune != nullptr && opts.prune->enabled() && opts.prune->layer() == l;
    const bool need_map = opts.capture_attention ||
                          (prune_here && std::holds_alternative<FastV>(opts.prune->strategy));
    AttentionMap map;
    FlopCounter layer_counter;

    LayerTrace trace;
    trace.layer = l;
    trace.text = state.text_count();
    trace.visual = state.visual_count();
    trace.frozen = !plan[l].is_dense();

    Matrix out;
    if (plan[l].is_dense()) {
      trace.queries = state.hidden.rows();
      out = forward_dense_layer(state.hidden, weights.layers[l], state.positions, cfg,
                                &layer_counter, need_map ? &map : nullptr);
    } else {
      const auto frozen = resolve_selector(*plan[l].frozen, state);
      trace.queries = state.hidden.rows() - frozen.size();
      out = forward_frozen_layer(state.hidden, weights.layers[l], frozen, state.positions, cfg,
                                 &layer_counter, need_map ? &map : nullptr);
    }
    require(out.all_finite(), ErrorKind::kNumeric,
            "non-finite hidden state after layer " + std::to_string(l));
    trace.flops = layer_counter.flops;
    if (opts.counter != nullptr) opts.counter->merge(layer_counter);
    if (opts.on_layer) opts.on_layer(l, state, out);
    state.hidden = std::move(out);
    result.layers.push_back(trace);

    if (prune_here) {
      auto ev = detail::plan_event(*opts.prune, l, state, need_map ? &map : nullptr);
      detail::apply_event(state, ev);
      result.events.push_back(std::move(ev));
    }
    if (opts.capture_attention) result.attention[l] = std::move(map);
  }
  result.residual = state.hidden;
  state.hidden = rms_norm_rows(state.hidden, weights.final_norm, cfg.norm_eps);
  result.final_state = std::move(state);
  return result;
}

inline ForwardResult forward(const TokenSequence& seq, const Weights& weights,
                             const LayerPlan& plan, const ForwardOptions& opts = {}) {
  return forward_from(initial_state(seq, weights), weights, plan, 0, opts);
}

/// LM head over the final-normed last row. Not charged to any FLOP counter.
inline std::vector<float> last_logits(const ForwardResult& result, const Weights& weights) {
  const auto& st = result.final_state;
  require(!st.roles.empty() && st.roles.back() == TokenRole::kText, ErrorKind::kSchedule,
          "last surviving position is not a text token");
  const Matrix last = gather_rows(st.hidden, std::vector<std::size_t>{st.hidden.rows() - 1});
  const Matrix logits = matmul(last, weights.lm_head);
  return {logits.data().begin(), logits.data().end()};
}

inline std::vector<float> logits_last(const TokenSequence& seq, const Weights& weights,
                                      const LayerPlan& plan, const PruneConfig* prune = nullptr) {
  ForwardOptions opts;
  opts.prune = prune;
  return last_logits(forward(seq, weights, plan, opts), weights);
}

/// FNV-1a over the config and every tensor, in file order.
inline std::uint64_t fingerprint(const Weights& w) {
  std::uint64_t h = 1469598103934665603ull;
  auto bytes = [&](const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 1099511628211ull;
    }
  };
  auto floats = [&](std::span<const float> s) { bytes(s.data(), s.size() * sizeof(float)); };
  const std::uint64_t dims[] = {w.config.num_layers, w.config.hidden_size,
                                w.config.intermediate_size, w.config.num_heads,
                                w.config.vocab_size, w.config.max_positions};
  bytes(dims, sizeof(dims));
  bytes(&w.config.rope_theta, sizeof(double));
  bytes(&w.config.norm_eps, sizeof(float));
  floats(w.embedding.data());
  for (const auto& l : w.layers) {
    for (const Matrix* m : {&l.wq, &l.wk, &l.wv, &l.wo, &l.ffn_gate, &l.ffn_up, &l.ffn_down})
      floats(m->data());
    floats(l.attn_norm);
    floats(l.ffn_norm);
  }
  floats(w.final_norm);
  floats(w.lm_head.data());
  return h;
}

}  // namespace shortv
