// Copyright 2026 The ShortV Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "oracle.hpp"
#include "shortv/shortv.hpp"
#include "test_util.hpp"

namespace shortv {
namespace {

using testutil::config;
using testutil::iota_positions;
using testutil::random_matrix;
using testutil::random_sequence;
using testutil::random_weights;

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

TEST(Embed, TextRowsAreTableRows) {
  const auto w = random_weights(config(1, 8, 8, 2), 1);
  TokenSequence s;
  s.push_text(3);
  s.push_text(0);
  const Matrix e = embed(s, w);
  for (std::size_t c = 0; c < 8; ++c) {
    EXPECT_EQ(e(0, c), w.embedding(3, c));
    EXPECT_EQ(e(1, c), w.embedding(0, c));
  }
}

TEST(Embed, InterleavedOrderPreserved) {
  const auto w = random_weights(config(1, 4, 4, 2), 2);
  const std::vector<float> e1{1, 2, 3, 4}, e2{-1, -2, -3, -4};
  TokenSequence s;
  s.push_visual(e1);
  s.push_text(5);
  s.push_visual(e2);
  s.push_text(1);
  const Matrix e = embed(s, w);
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_EQ(e(0, c), e1[c]);
    EXPECT_EQ(e(1, c), w.embedding(5, c));
    EXPECT_EQ(e(2, c), e2[c]);
  }
}

TEST(Embed, InvalidInputs) {
  const auto w = random_weights(config(1, 4, 4, 2), 2);
  TokenSequence bad_id;
  bad_id.push_text(16);
  try {
    embed(bad_id, w);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kInput);
  }
  TokenSequence bad_dim;
  bad_dim.push_visual({1, 2, 3});
  bad_dim.push_text(0);
  try {
    embed(bad_dim, w);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kShape);
  }
}

TEST(DenseLayer, ZeroWeightsAreIdentity) {
  const auto cfg = config(1, 8, 16, 2);
  const auto lw = LayerWeights::zeros(cfg);
  std::mt19937_64 rng(1);
  const Matrix hs = random_matrix(5, 8, rng);
  EXPECT_EQ(forward_dense_layer(hs, lw, iota_positions(5), cfg), hs);
}

// Values computed independently in double precision from the same weights.
TEST(DenseLayer, HandWorkedTwoTokenExample) {
  auto cfg = config(1, 2, 2, 1);
  LayerWeights lw = LayerWeights::zeros(cfg);
  lw.attn_norm = {1.0f, 0.5f};
  lw.ffn_norm = {2.0f, 1.0f};
  lw.wq = Matrix(2, 2, {1, 0.5f, 0, 1});
  lw.wk = Matrix(2, 2, {1, 0, -0.5f, 1});
  lw.wv = Matrix(2, 2, {1, 2, 0, 1});
  lw.wo = Matrix(2, 2, {0.5f, 0, 0.25f, 0.5f});
  lw.ffn_gate = Matrix(2, 2, {1, -1, 0.5f, 0.5f});
  lw.ffn_up = Matrix(2, 2, {1, 0, 0, 2});
  lw.ffn_down = Matrix(2, 2, {0.5f, 0.25f, -0.5f, 1});
  const Matrix hs(2, 2, {0.5f, -1, 1, 1});
  const Matrix out = forward_dense_layer(hs, lw, iota_positions(2), cfg);
  EXPECT_NEAR(out(0, 0), 2.762476086769872, 1e-5);
  EXPECT_NEAR(out(0, 1), 0.5514378740969522, 1e-5);
  EXPECT_NEAR(out(1, 0), 4.5376960304659555, 1e-5);
  EXPECT_NEAR(out(1, 1), 2.6605161452069734, 1e-5);

  const std::size_t frozen[] = {0};
  const Matrix f = forward_frozen_layer(hs, lw, frozen, iota_positions(2), cfg);
  EXPECT_EQ(f(0, 0), 0.5f);
  EXPECT_EQ(f(0, 1), -1.0f);
  EXPECT_NEAR(f(1, 0), 4.5376960304659555, 1e-5);
  EXPECT_NEAR(f(1, 1), 2.6605161452069734, 1e-5);
}

TEST(DenseLayer, MatchesScalarOracle) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t heads = 1 + trial % 3;
    const auto cfg = config(1, 4 * heads, 12, heads);
    const auto w = random_weights(cfg, 100 + trial);
    const std::size_t n = 1 + trial % 7;
    const Matrix hs = random_matrix(n, cfg.hidden_size, rng);
    const auto pos = iota_positions(n);
    const Matrix out = forward_dense_layer(hs, w.layers[0], pos, cfg);
    const auto ref = oracle::layer(oracle::from(hs), w.layers[0], pos, std::vector<bool>(n, true), cfg);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < cfg.hidden_size; ++c) ASSERT_NEAR(out(r, c), ref[r][c], 1e-5);
  }
}

TEST(FrozenLayer, EmptyMaskEqualsDense) {
  std::mt19937_64 rng(9);
  const auto cfg = config(1, 16, 32, 4);
  const auto w = random_weights(cfg, 4);
  const Matrix hs = random_matrix(9, 16, rng);
  const auto pos = iota_positions(9);
  const Matrix d = forward_dense_layer(hs, w.layers[0], pos, cfg);
  const Matrix f = forward_frozen_layer(hs, w.layers[0], {}, pos, cfg);
  for (std::size_t i = 0; i < d.size(); ++i) ASSERT_NEAR(f.data()[i], d.data()[i], 1e-6);
}

TEST(FrozenLayer, FullMaskIsExactIdentityAndFree) {
  std::mt19937_64 rng(10);
  const auto cfg = config(1, 16, 32, 4);
  const auto w = random_weights(cfg, 4);
  const Matrix hs = random_matrix(6, 16, rng);
  const std::vector<std::size_t> all{0, 1, 2, 3, 4, 5};
  FlopCounter c;
  EXPECT_EQ(forward_frozen_layer(hs, w.layers[0], all, iota_positions(6), cfg, &c), hs);
  EXPECT_EQ(c.flops, 0u);
}

TEST(FrozenLayer, InvalidRowIsInputError) {
  const auto cfg = config(1, 8, 8, 2);
  const auto w = random_weights(cfg, 4);
  const std::size_t bad[] = {3};
  try {
    forward_frozen_layer(Matrix(3, 8, 1.0f), w.layers[0], bad, iota_positions(3), cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kInput);
  }
}

TEST(FrozenLayer, MatchesScalarOracleWithRandomMasks) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    const auto cfg = config(1, 8, 16, 2);
    const auto w = random_weights(cfg, 200 + trial);
    const std::size_t n = 2 + trial % 9;
    const Matrix hs = random_matrix(n, 8, rng);
    std::vector<std::size_t> frozen;
    std::vector<bool> upd(n, true);
    for (std::size_t r = 0; r < n; ++r)
      if (rng() % 2) {
        frozen.push_back(r);
        upd[r] = false;
      }
    const auto pos = iota_positions(n);
    const Matrix out = forward_frozen_layer(hs, w.layers[0], frozen, pos, cfg);
    const auto ref = oracle::layer(oracle::from(hs), w.layers[0], pos, upd, cfg);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < 8; ++c) ASSERT_NEAR(out(r, c), ref[r][c], 1e-5);
  }
}

TEST(FrozenLayer, IdentityProperty) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t heads = 1 + trial % 4;
    const auto cfg = config(1, 2 * heads * (1 + trial % 3), 8, heads);
    const auto w = random_weights(cfg, trial);
    const std::size_t n = 1 + rng() % 12;
    const Matrix hs = random_matrix(n, cfg.hidden_size, rng, 3.0f);
    std::vector<std::size_t> frozen;
    for (std::size_t r = 0; r < n; ++r)
      if (rng() % 3 == 0) frozen.push_back(r);
    const Matrix out = forward_frozen_layer(hs, w.layers[0], frozen, iota_positions(n), cfg);
    for (auto r : frozen)
      for (std::size_t c = 0; c < cfg.hidden_size; ++c) ASSERT_EQ(out(r, c), hs(r, c));
  }
}

TEST(FrozenLayer, VisualFrozenTextRowsMatchDense) {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 100; ++trial) {
    const auto cfg = config(1, 16, 24, 4);
    const auto w = random_weights(cfg, 50 + trial);
    const std::size_t n = 2 + rng() % 20;
    const Matrix hs = random_matrix(n, 16, rng);
    std::vector<std::size_t> visual, text;
    for (std::size_t r = 0; r + 1 < n; ++r) (rng() % 2 ? visual : text).push_back(r);
    text.push_back(n - 1);
    const auto pos = iota_positions(n);
    const Matrix d = forward_dense_layer(hs, w.layers[0], pos, cfg);
    const Matrix f = forward_frozen_layer(hs, w.layers[0], visual, pos, cfg);
    for (auto r : text)
      for (std::size_t c = 0; c < 16; ++c) ASSERT_LE(rel_err(f(r, c), d(r, c)), 1e-5);
  }
}

TEST(Forward, DenseMatchesOracleLogits) {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 10; ++trial) {
    const auto cfg = config(3, 8, 16, 2);
    const auto w = random_weights(cfg, 300 + trial);
    const auto seq = random_sequence(cfg, 1 + trial % 4, trial % 6, rng);
    const auto plan = LayerPlan::all_dense(3);
    const auto got = logits_last(seq, w, plan);
    const auto ref = oracle::last_logits(seq, w, plan);
    for (std::size_t i = 0; i < got.size(); ++i) ASSERT_NEAR(got[i], ref[i], 1e-4);
  }
}

TEST(Forward, MixedPlanMatchesOracleLogits) {
  std::mt19937_64 rng(16);
  const auto cfg = config(4, 8, 16, 2);
  const auto w = random_weights(cfg, 17);
  const auto seq = random_sequence(cfg, 3, 5, rng);
  LayerPlan plan({LayerKind::freeze(FrozenSelector::visual()), LayerKind::dense(),
                  LayerKind::freeze(FrozenSelector::text()),
                  LayerKind::freeze(FrozenSelector::explicit_set({0, 2, 7}))});
  const auto got = logits_last(seq, w, plan);
  const auto ref = oracle::last_logits(seq, w, plan);
  for (std::size_t i = 0; i < got.size(); ++i) ASSERT_NEAR(got[i], ref[i], 1e-4);
}

TEST(Forward, AllFrozenVisualKeepsVisualEmbeddings) {
  std::mt19937_64 rng(18);
  const auto cfg = config(5, 8, 16, 2);
  const auto w = random_weights(cfg, 19);
  const auto seq = random_sequence(cfg, 3, 6, rng);
  std::vector<LayerKind> kinds(5, LayerKind::freeze(FrozenSelector::visual()));
  const auto res = forward(seq, w, LayerPlan(kinds));
  const Matrix e = embed(seq, w);
  for (std::size_t r = 0; r < seq.size(); ++r) {
    if (seq.role(r) != TokenRole::kVisual) continue;
    for (std::size_t c = 0; c < 8; ++c) ASSERT_EQ(res.residual(r, c), e(r, c));
  }
}

TEST(Forward, LastLayerVisualFreezeIsNeutral) {
  std::mt19937_64 rng(20);
  for (int trial = 0; trial < 20; ++trial) {
    const auto cfg = config(3, 8, 16, 2);
    const auto w = random_weights(cfg, 400 + trial);
    const auto seq = random_sequence(cfg, 1 + trial % 5, 1 + trial % 7, rng);
    const auto dense = logits_last(seq, w, LayerPlan::all_dense(3));
    const auto frozen = logits_last(seq, w, LayerPlan::single_frozen(3, 2, FrozenSelector::visual()));
    ASSERT_EQ(dense, frozen);
  }
}

TEST(Forward, ZeroModelGivesZeroLogits) {
  const auto cfg = config(2, 4, 4, 2);
  const auto w = Weights::zeros(cfg);
  TokenSequence s;
  s.push_visual({0, 0, 0, 0});
  s.push_text(1);
  for (float x : logits_last(s, w, LayerPlan::all_dense(2))) EXPECT_EQ(x, 0.0f);
}

TEST(Forward, Deterministic) {
  std::mt19937_64 rng(22);
  const auto cfg = config(4, 16, 32, 4);
  const auto w = random_weights(cfg, 23);
  const auto seq = random_sequence(cfg, 5, 9, rng);
  const auto plan = LayerPlan::single_frozen(4, 1, FrozenSelector::visual());
  EXPECT_EQ(logits_last(seq, w, plan), logits_last(seq, w, plan));
}

TEST(Forward, FreezingVisualStrictlyReducesWork) {
  std::mt19937_64 rng(24);
  const auto cfg = config(4, 8, 16, 2);
  const auto w = random_weights(cfg, 25);
  const auto seq = random_sequence(cfg, 3, 4, rng);
  std::vector<LayerKind> kinds(4, LayerKind::dense());
  auto count = [&](const std::vector<LayerKind>& k) {
    FlopCounter c;
    ForwardOptions o;
    o.counter = &c;
    forward(seq, w, LayerPlan(k), o);
    return c.flops;
  };
  auto prev = count(kinds);
  for (std::size_t l : {2u, 0u, 3u, 1u}) {
    kinds[l] = LayerKind::freeze(FrozenSelector::visual());
    const auto now = count(kinds);
    ASSERT_LT(now, prev);
    prev = now;
  }
}

TEST(Forward, PlanLengthMismatchIsInputError) {
  const auto cfg = config(2, 4, 4, 2);
  const auto w = random_weights(cfg, 1);
  TokenSequence s;
  s.push_text(1);
  EXPECT_THROW(forward(s, w, LayerPlan::all_dense(3)), Error);
}

TEST(Forward, NonFiniteHiddenStateIsNumericError) {
  const auto cfg = config(2, 4, 4, 2);
  auto w = random_weights(cfg, 1);
  w.layers[1].ffn_down.data()[0] = std::numeric_limits<float>::infinity();
  TokenSequence s;
  s.push_text(1);
  s.push_text(2);
  try {
    forward(s, w, LayerPlan::all_dense(2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNumeric);
    EXPECT_NE(std::string(e.what()).find("layer 1"), std::string::npos);
  }
}

TEST(Forward, SequenceMustEndInText) {
  const auto cfg = config(1, 4, 4, 2);
  const auto w = random_weights(cfg, 1);
  TokenSequence s;
  s.push_text(1);
  s.push_visual({1, 2, 3, 4});
  EXPECT_THROW(logits_last(s, w, LayerPlan::all_dense(1)), Error);
}

}  // namespace
}  // namespace shortv
