// Copyright 2026 The ShortV Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <vector>

#include "shortv/metrics.hpp"
#include "shortv/model.hpp"

namespace shortv {

struct LatencyReport {
  std::vector<double> dense_ms;    // one entry per repeat, whole calibration set
  std::vector<double> planned_ms;
  double dense_median_ms = 0.0;
  double planned_median_ms = 0.0;
  double speedup = 0.0;            // dense / planned
};

inline double median(std::vector<double> xs) {
  require(!xs.empty(), ErrorKind::kInput, "median of empty set");
  std::sort(xs.begin(), xs.end());
  const auto n = xs.size();
  return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

/// First-token latency: one full prompt pass plus the LM head per sample.
/// Dense and planned passes alternate within each repeat.
inline LatencyReport bench_latency(const Weights& weights, const LayerPlan& plan,
                                   const CalibrationSet& calib, std::size_t repeat) {
  require(repeat >= 1, ErrorKind::kInput, "repeat must be >= 1");
  require(!calib.samples.empty(), ErrorKind::kInput, "bench needs at least one sample");
  const auto dense = LayerPlan::all_dense(weights.config.num_layers);
  auto time_pass = [&](const LayerPlan& p) {
    const auto t0 = std::chrono::steady_clock::now();
    float sink = 0.0f;
    for (const auto& seq : calib.samples) sink += logits_last(seq, weights, p).front();
    const auto t1 = std::chrono::steady_clock::now();
    volatile float keep = sink;
    (void)keep;
    return std::chrono::duration<double, std::milli>(t1 - t0).count();
  };
  LatencyReport r;
  for (std::size_t i = 0; i < repeat; ++i) {
    r.dense_ms.push_back(time_pass(dense));
    r.planned_ms.push_back(time_pass(plan));
  }
  r.dense_median_ms = median(r.dense_ms);
  r.planned_median_ms = median(r.planned_ms);
  r.speedup = r.dense_median_ms / r.planned_median_ms;
  return r;
}

}  // namespace shortv
