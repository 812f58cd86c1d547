// Copyright 2026 The ShortV Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

// Builds a small toy model, profiles visual-token layer contribution, freezes
// the least useful layers and reports the output drift and FLOPs saved.

#include <cstdio>

#include "shortv/shortv.hpp"

int main() {
  shortv::ToySpec spec;
  spec.config.num_layers = 8;
  spec.config.hidden_size = 32;
  spec.config.intermediate_size = 64;
  spec.config.num_heads = 4;
  spec.config.vocab_size = 64;
  spec.config.max_positions = 64;
  spec.seed = 3;
  spec.logit_scale = 2.0f;
  for (std::size_t l = 0; l < spec.config.num_layers; ++l)
    spec.profile.push_back(l % 2 == 0 ? 1.0f : 0.1f);

  const auto weights = shortv::build_toy(spec);
  const auto calib = shortv::gen_calibration(spec, 8, {4, 8}, {8, 16}, 1);

  const shortv::TokenClass classes[] = {shortv::TokenClass::kVisual};
  const auto report = shortv::lc_profile(weights, calib, classes);
  for (std::size_t l = 0; l < report.num_layers; ++l)
    std::printf("layer %2zu  LC(visual) = %.6g\n", l, report.scores[l].at(shortv::TokenClass::kVisual));

  const auto ranking = shortv::rank_layers(report, shortv::TokenClass::kVisual);
  const auto plan = shortv::make_plan(ranking, 4, shortv::FrozenSelector::visual());
  std::printf("frozen layers:");
  for (auto l : plan.frozen_layers()) std::printf(" %zu", l);
  std::printf("\n");

  const double kl = shortv::mean_kl_to_vanilla(weights, calib, plan);
  const auto cc = shortv::crosscheck(weights, plan, calib.samples.front());
  std::printf("mean KL to dense = %.6g nats\n", kl);
  std::printf("FLOPs ratio = %.4f (analytical %llu, counted %llu)\n", cc.report.ratio,
              static_cast<unsigned long long>(cc.analytical),
              static_cast<unsigned long long>(cc.instrumented));
  return cc.analytical == cc.instrumented ? 0 : 1;
}
