// Copyright 2026 The ShortV Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

// Deterministic toy models with controllable per-layer redundancy.
//
// Generator: std::mt19937_64 seeded with ToySpec::seed. Each value is drawn as
// u = (x >> 40) * 2^-24 from one raw 64-bit output x, mapped to (2u - 1) * a.
// Fill order, all row-major:
//   embedding (vocab x h), a = embed_scale * sqrt(3)
//   for each layer: wq, wk, wv, wo (h x h), ffn_gate, ffn_up (h x m), ffn_down (m x h),
//                   a = sqrt(3 / fan_in)
//   lm_head (h x vocab), a = logit_scale * sqrt(3 / h)
// Norm gammas are 1 and consume no draws. After drawing, wo and ffn_down of
// layer l are multiplied by profile[l]; a scale of 0 makes the layer an exact
// identity map. Every value is drawn whatever the profile, so two specs that
// differ only in profile share all other weights.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "shortv/error.hpp"
#include "shortv/metrics.hpp"
#include "shortv/model_types.hpp"

namespace shortv {

struct VisualDistribution {
  float mean = 0.0f;  // added to every component
  float std = 1.0f;   // uniform spread with this standard deviation
};

struct ToySpec {
  ModelConfig config;
  std::uint64_t seed = 0;
  std::vector<float> profile;  // per-layer scale in [0, 1]
  VisualDistribution visual;
  float embed_scale = 1.0f;
  float logit_scale = 1.0f;

  void validate() const {
    config.validate();
    require(profile.size() == config.num_layers, ErrorKind::kInput,
            "profile length " + std::to_string(profile.size()) + " != num_layers " +
                std::to_string(config.num_layers));
    for (float s : profile)
      require(s >= 0.0f && s <= 1.0f, ErrorKind::kInput, "profile scales must lie in [0, 1]");
    require(visual.std >= 0.0f, ErrorKind::kInput, "visual std must be >= 0");
  }
};

namespace detail {

inline void fill_uniform(Matrix& m, SeededRng& rng, float amplitude) {
  for (float& x : m.data()) x = (2.0f * rng.unit() - 1.0f) * amplitude;
}

}  // namespace detail

inline Weights build_toy(const ToySpec& spec) {
  spec.validate();
  const auto& c = spec.config;
  const float sqrt3 = std::sqrt(3.0f);
  SeededRng rng(spec.seed);
  Weights w = Weights::zeros(c);
  detail::fill_uniform(w.embedding, rng, spec.embed_scale * sqrt3);
  const float a_h = std::sqrt(3.0f / static_cast<float>(c.hidden_size));
  const float a_m = std::sqrt(3.0f / static_cast<float>(c.intermediate_size));
  for (std::size_t l = 0; l < c.num_layers; ++l) {
    auto& lw = w.layers[l];
    for (Matrix* m : {&lw.wq, &lw.wk, &lw.wv, &lw.wo, &lw.ffn_gate, &lw.ffn_up})
      detail::fill_uniform(*m, rng, a_h);
    detail::fill_uniform(lw.ffn_down, rng, a_m);
    for (float& x : lw.wo.data()) x *= spec.profile[l];
    for (float& x : lw.ffn_down.data()) x *= spec.profile[l];
  }
  detail::fill_uniform(w.lm_head, rng, spec.logit_scale * a_h);
  return w;
}

struct CountRange {
  std::size_t min = 1;
  std::size_t max = 1;
};

/// Samples laid out as [t/2 text][v visual][t - t/2 text], so the last position
/// is always text. Per sample the draws are: t, v, then one id per text
/// position or h components per visual position, in sequence order.
inline CalibrationSet gen_calibration(const ToySpec& spec, std::size_t n_samples, CountRange t,
                                      CountRange v, std::uint64_t seed) {
  spec.validate();
  require(t.min >= 1 && t.min <= t.max && v.min <= v.max, ErrorKind::kInput,
          "invalid token count ranges (need 1 <= t.min <= t.max, v.min <= v.max)");
  const auto& c = spec.config;
  require(t.max + v.max <= c.max_positions, ErrorKind::kInput,
          "t.max + v.max exceeds max_positions");
  const float sqrt3 = std::sqrt(3.0f);
  SeededRng rng(seed);
  CalibrationSet set;
  for (std::size_t s = 0; s < n_samples; ++s) {
    const std::size_t nt = t.min + rng.below(t.max - t.min + 1);
    const std::size_t nv = v.min + rng.below(v.max - v.min + 1);
    const std::size_t prefix = nt / 2;
    TokenSequence seq;
    for (std::size_t i = 0; i < prefix; ++i) seq.push_text(rng.below(c.vocab_size));
    for (std::size_t i = 0; i < nv; ++i) {
      std::vector<float> e(c.hidden_size);
      for (float& x : e) x = spec.visual.mean + (2.0f * rng.unit() - 1.0f) * sqrt3 * spec.visual.std;
      seq.push_visual(std::move(e));
    }
    for (std::size_t i = prefix; i < nt; ++i) seq.push_text(rng.below(c.vocab_size));
    set.samples.push_back(std::move(seq));
  }
  return set;
}

}  // namespace shortv
