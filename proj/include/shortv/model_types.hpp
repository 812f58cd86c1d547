// Copyright 2026 The ShortV Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "shortv/core_math.hpp"
#include "shortv/error.hpp"

namespace shortv {

struct ModelConfig {
  std::size_t num_layers = 1;
  std::size_t hidden_size = 8;
  std::size_t intermediate_size = 16;
  std::size_t num_heads = 1;
  std::size_t vocab_size = 16;
  std::size_t max_positions = 1024;
  double rope_theta = 10000.0;
  float norm_eps = 1e-6f;

  std::size_t head_dim() const noexcept { return hidden_size / num_heads; }

  void validate() const {
    require(num_layers >= 1 && hidden_size >= 1 && intermediate_size >= 1 && num_heads >= 1 &&
                vocab_size >= 1 && max_positions >= 1,
            ErrorKind::kInput, "model config counts must all be >= 1");
    require(hidden_size % num_heads == 0, ErrorKind::kInput,
            "hidden_size must be divisible by num_heads");
    // Rotary embedding rotates dimension pairs.
    require(head_dim() % 2 == 0, ErrorKind::kInput, "head dimension must be even");
    require(rope_theta > 0.0 && norm_eps >= 0.0f, ErrorKind::kInput,
            "rope_theta must be > 0 and norm_eps >= 0");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerWeights {
  Matrix wq, wk, wv, wo;          // h x h
  Matrix ffn_gate, ffn_up;        // h x m
  Matrix ffn_down;                // m x h
  std::vector<float> attn_norm;   // h
  std::vector<float> ffn_norm;    // h

  static LayerWeights zeros(const ModelConfig& c) {
    const auto h = c.hidden_size, m = c.intermediate_size;
    return {Matrix(h, h), Matrix(h, h), Matrix(h, h), Matrix(h, h), Matrix(h, m),
            Matrix(h, m), Matrix(m, h), std::vector<float>(h, 1.0f), std::vector<float>(h, 1.0f)};
  }

  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

struct Weights {
  ModelConfig config;
  Matrix embedding;                // vocab x h
  std::vector<LayerWeights> layers;
  std::vector<float> final_norm;   // h
  Matrix lm_head;                  // h x vocab

  static Weights zeros(const ModelConfig& c) {
    Weights w;
    w.config = c;
    w.embedding = Matrix(c.vocab_size, c.hidden_size);
    w.layers.assign(c.num_layers, LayerWeights::zeros(c));
    w.final_norm.assign(c.hidden_size, 1.0f);
    w.lm_head = Matrix(c.hidden_size, c.vocab_size);
    return w;
  }

  void validate() const {
    config.validate();
    const auto h = config.hidden_size, m = config.intermediate_size, V = config.vocab_size;
    auto shape = [](const Matrix& x, std::size_t r, std::size_t c, const std::string& name) {
      require(x.rows() == r && x.cols() == c, ErrorKind::kShape,
              name + " has shape " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) +
                  ", expected " + std::to_string(r) + "x" + std::to_string(c));
    };
    shape(embedding, V, h, "embedding");
    shape(lm_head, h, V, "lm_head");
    require(final_norm.size() == h, ErrorKind::kShape, "final_norm length != hidden_size");
    require(layers.size() == config.num_layers, ErrorKind::kShape,
            "weights carry " + std::to_string(layers.size()) + " layers, config says " +
                std::to_string(config.num_layers));
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      const auto p = "layers." + std::to_string(i) + ".";
      shape(l.wq, h, h, p + "wq");
      shape(l.wk, h, h, p + "wk");
      shape(l.wv, h, h, p + "wv");
      shape(l.wo, h, h, p + "wo");
      shape(l.ffn_gate, h, m, p + "ffn_gate");
      shape(l.ffn_up, h, m, p + "ffn_up");
      shape(l.ffn_down, m, h, p + "ffn_down");
      require(l.attn_norm.size() == h && l.ffn_norm.size() == h, ErrorKind::kShape,
              p + "norm gamma length != hidden_size");
    }
  }

  friend bool operator==(const Weights&, const Weights&) = default;
};

enum class TokenRole : std::uint8_t { kText, kVisual };

/// One position of a mixed-modality prompt.
struct TextToken {
  std::size_t id = 0;
  friend bool operator==(const TextToken&, const TextToken&) = default;
};
struct VisualToken {
  std::vector<float> embedding;
  friend bool operator==(const VisualToken&, const VisualToken&) = default;
};
using Token = std::variant<TextToken, VisualToken>;

class TokenSequence {
 public:
  TokenSequence() = default;
  explicit TokenSequence(std::vector<Token> tokens) : tokens_(std::move(tokens)) {}

  void push_text(std::size_t id) { tokens_.emplace_back(TextToken{id}); }
  void push_visual(std::vector<float> e) { tokens_.emplace_back(VisualToken{std::move(e)}); }

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<Token>& tokens() const noexcept { return tokens_; }
  const Token& operator[](std::size_t i) const { return tokens_[i]; }

  TokenRole role(std::size_t i) const {
    return std::holds_alternative<TextToken>(tokens_[i]) ? TokenRole::kText : TokenRole::kVisual;
  }
  std::vector<TokenRole> roles() const {
    std::vector<TokenRole> r(tokens_.size());
    for (std::size_t i = 0; i < tokens_.size(); ++i) r[i] = role(i);
    return r;
  }
  std::size_t text_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < tokens_.size(); ++i) n += role(i) == TokenRole::kText;
    return n;
  }
  std::size_t visual_count() const { return size() - text_count(); }

  /// Throws unless the sequence is usable with `config`.
  void validate(const ModelConfig& config) const {
    require(!tokens_.empty(), ErrorKind::kInput, "token sequence is empty");
    require(tokens_.size() <= config.max_positions, ErrorKind::kInput,
            "sequence length " + std::to_string(tokens_.size()) + " exceeds max_positions " +
                std::to_string(config.max_positions));
    require(role(tokens_.size() - 1) == TokenRole::kText, ErrorKind::kInput,
            "last position must be a text token");
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (const auto* t = std::get_if<TextToken>(&tokens_[i])) {
        require(t->id < config.vocab_size, ErrorKind::kInput,
                "text id " + std::to_string(t->id) + " at position " + std::to_string(i) +
                    " out of vocabulary");
      } else {
        const auto& e = std::get<VisualToken>(tokens_[i]).embedding;
        require(e.size() == config.hidden_size, ErrorKind::kShape,
                "visual embedding at position " + std::to_string(i) + " has length " +
                    std::to_string(e.size()));
      }
    }
  }

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;

 private:
  std::vector<Token> tokens_;
};

/// Which positions a frozen layer leaves untouched.
enum class SelectorKind : std::uint8_t { kVisual, kText, kAll, kExplicit };

struct FrozenSelector {
  SelectorKind kind = SelectorKind::kVisual;
  std::set<std::int64_t> positions;  // original position ids, kExplicit only

  static FrozenSelector visual() { return {SelectorKind::kVisual, {}}; }
  static FrozenSelector text() { return {SelectorKind::kText, {}}; }
  static FrozenSelector all() { return {SelectorKind::kAll, {}}; }
  static FrozenSelector explicit_set(std::set<std::int64_t> p) {
    return {SelectorKind::kExplicit, std::move(p)};
  }

  bool selects(std::int64_t position, TokenRole role) const {
    switch (kind) {
      case SelectorKind::kVisual: return role == TokenRole::kVisual;
      case SelectorKind::kText: return role == TokenRole::kText;
      case SelectorKind::kAll: return true;
      case SelectorKind::kExplicit: return positions.count(position) != 0;
    }
    return false;
  }

  friend bool operator==(const FrozenSelector&, const FrozenSelector&) = default;
};

struct LayerKind {
  std::optional<FrozenSelector> frozen;  // nullopt = dense

  bool is_dense() const noexcept { return !frozen.has_value(); }
  static LayerKind dense() { return {}; }
  static LayerKind freeze(FrozenSelector s) { return {std::move(s)}; }

  friend bool operator==(const LayerKind&, const LayerKind&) = default;
};

class LayerPlan {
 public:
  LayerPlan() = default;
  explicit LayerPlan(std::vector<LayerKind> layers) : layers_(std::move(layers)) {}

  static LayerPlan all_dense(std::size_t num_layers) {
    return LayerPlan(std::vector<LayerKind>(num_layers, LayerKind::dense()));
  }
  static LayerPlan single_frozen(std::size_t num_layers, std::size_t layer, FrozenSelector s) {
    auto p = all_dense(num_layers);
    p.layers_.at(layer) = LayerKind::freeze(std::move(s));
    return p;
  }

  std::size_t size() const noexcept { return layers_.size(); }
  const LayerKind& operator[](std::size_t i) const { return layers_[i]; }
  LayerKind& operator[](std::size_t i) { return layers_[i]; }
  const std::vector<LayerKind>& layers() const noexcept { return layers_; }

  /// Number of frozen entries (N).
  std::size_t num_frozen() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += !l.is_dense();
    return n;
  }
  std::set<std::size_t> frozen_layers() const {
    std::set<std::size_t> s;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      if (!layers_[i].is_dense()) s.insert(i);
    return s;
  }

  friend bool operator==(const LayerPlan&, const LayerPlan&) = default;

 private:
  std::vector<LayerKind> layers_;
};

}  // namespace shortv
