// Copyright 2026 The ShortV Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

// File formats.
//
// Weight file:
//   bytes 0..7    magic "SHORTVW1"
//   bytes 8..15   manifest length in bytes, unsigned 64-bit little-endian
//   manifest      UTF-8 JSON: {"format", "version", "config", "tensors": [
//                   {"name", "shape", "offset", "nbytes"}, ...]}
//   payload       little-endian float32 tensors in manifest order; offsets are
//                 relative to the first payload byte
// Tensor names: embedding, layers.<i>.{wq,wk,wv,wo,ffn_gate,ffn_up,ffn_down,
// attn_norm,ffn_norm}, final_norm, lm_head.
//
// Calibration / input JSONL: one sequence per line,
//   {"positions": [{"text": 5}, {"visual": [0.1, ...]}, ...]}
// and the last entry must be a text token.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "shortv/error.hpp"
#include "shortv/flops.hpp"
#include "shortv/metrics.hpp"
#include "shortv/model.hpp"
#include "shortv/model_types.hpp"
#include "shortv/pruning.hpp"
#include "shortv/toymodel.hpp"

namespace shortv::io {

using json = nlohmann::ordered_json;

inline constexpr char kWeightMagic[8] = {'S', 'H', 'O', 'R', 'T', 'V', 'W', '1'};

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::kIo, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::kIo, "cannot write " + path);
  out << text;
  require(out.good(), ErrorKind::kIo, "write failed for " + path);
}

inline json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::kIo, what + ": " + e.what());
  }
}

template <typename T>
T get_field(const json& j, const char* key, const std::string& what) {
  require(j.is_object() && j.contains(key), ErrorKind::kIo,
          what + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorKind::kIo, what + ": bad field '" + key + "': " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Model config

inline json to_json(const ModelConfig& c) {
  return json{{"num_layers", c.num_layers},       {"hidden_size", c.hidden_size},
              {"intermediate_size", c.intermediate_size}, {"num_heads", c.num_heads},
              {"vocab_size", c.vocab_size},       {"max_positions", c.max_positions},
              {"rope_theta", c.rope_theta},       {"norm_eps", c.norm_eps}};
}

inline ModelConfig config_from_json(const json& j) {
  const std::string what = "model config";
  ModelConfig c;
  c.num_layers = get_field<std::size_t>(j, "num_layers", what);
  c.hidden_size = get_field<std::size_t>(j, "hidden_size", what);
  c.intermediate_size = get_field<std::size_t>(j, "intermediate_size", what);
  c.num_heads = get_field<std::size_t>(j, "num_heads", what);
  c.vocab_size = get_field<std::size_t>(j, "vocab_size", what);
  c.max_positions = get_field<std::size_t>(j, "max_positions", what);
  c.rope_theta = j.value("rope_theta", 10000.0);
  c.norm_eps = j.value("norm_eps", 1e-6f);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Weights

namespace detail {

struct NamedTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::span<const float> data;
};

inline std::vector<NamedTensor> tensors_of(const Weights& w) {
  std::vector<NamedTensor> t;
  auto mat = [&](std::string name, const Matrix& m) {
    t.push_back({std::move(name), {m.rows(), m.cols()}, m.data()});
  };
  auto vec = [&](std::string name, const std::vector<float>& v) {
    t.push_back({std::move(name), {v.size()}, v});
  };
  mat("embedding", w.embedding);
  for (std::size_t i = 0; i < w.layers.size(); ++i) {
    const auto& l = w.layers[i];
    const auto p = "layers." + std::to_string(i) + ".";
    mat(p + "wq", l.wq);
    mat(p + "wk", l.wk);
    mat(p + "wv", l.wv);
    mat(p + "wo", l.wo);
    mat(p + "ffn_gate", l.ffn_gate);
    mat(p + "ffn_up", l.ffn_up);
    mat(p + "ffn_down", l.ffn_down);
    vec(p + "attn_norm", l.attn_norm);
    vec(p + "ffn_norm", l.ffn_norm);
  }
  vec("final_norm", w.final_norm);
  mat("lm_head", w.lm_head);
  return t;
}

inline void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline void put_f32_le(std::string& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline float get_f32_le(const unsigned char* p) {
  const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                             (static_cast<std::uint32_t>(p[2]) << 16) |
                             (static_cast<std::uint32_t>(p[3]) << 24);
  return std::bit_cast<float>(bits);
}

}  // namespace detail

inline std::string serialize_weights(const Weights& w) {
  w.validate();
  json manifest{{"format", "shortv-weights"}, {"version", 1}, {"config", to_json(w.config)}};
  json tensors = json::array();
  std::uint64_t offset = 0;
  const auto list = detail::tensors_of(w);
  for (const auto& t : list) {
    const std::uint64_t nbytes = t.data.size() * 4;
    tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
  }
  manifest["tensors"] = std::move(tensors);
  const std::string text = manifest.dump();

  std::string out(kWeightMagic, 8);
  detail::put_u64_le(out, text.size());
  out += text;
  out.reserve(out.size() + offset);
  for (const auto& t : list)
    for (float f : t.data) detail::put_f32_le(out, f);
  return out;
}

inline Weights deserialize_weights(const std::string& bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  require(bytes.size() >= 16 && std::memcmp(bytes.data(), kWeightMagic, 8) == 0, ErrorKind::kIo,
          "not a shortv weight file (bad magic)");
  const std::uint64_t mlen = detail::get_u64_le(p + 8);
  require(mlen <= bytes.size() - 16, ErrorKind::kIo, "weight manifest length exceeds file size");
  const json manifest = parse_json(bytes.substr(16, mlen), "weight manifest");
  require(manifest.value("format", "") == "shortv-weights", ErrorKind::kIo,
          "weight manifest has wrong format tag");
  const std::uint64_t base = 16 + mlen;
  const std::uint64_t payload = bytes.size() - base;

  Weights w = Weights::zeros(config_from_json(manifest.at("config")));
  auto expected = detail::tensors_of(w);
  const auto& tensors = manifest.at("tensors");
  require(tensors.is_array() && tensors.size() == expected.size(), ErrorKind::kIo,
          "weight manifest lists " + std::to_string(tensors.size()) + " tensors, expected " +
              std::to_string(expected.size()));
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& e = expected[i];
    const auto& t = tensors[i];
    const auto name = get_field<std::string>(t, "name", "tensor entry");
    require(name == e.name, ErrorKind::kIo,
            "tensor " + std::to_string(i) + " is '" + name + "', expected '" + e.name + "'");
    require(get_field<std::vector<std::size_t>>(t, "shape", name) == e.shape, ErrorKind::kIo,
            "tensor '" + name + "' has unexpected shape");
    const auto offset = get_field<std::uint64_t>(t, "offset", name);
    const auto nbytes = get_field<std::uint64_t>(t, "nbytes", name);
    require(nbytes == e.data.size() * 4 && offset <= payload && nbytes <= payload - offset,
            ErrorKind::kIo, "tensor '" + name + "' byte range is invalid");
    // tensors_of() views w's storage; write through it.
    auto* dst = const_cast<float*>(e.data.data());
    for (std::size_t k = 0; k < e.data.size(); ++k)
      dst[k] = detail::get_f32_le(p + base + offset + 4 * k);
  }
  w.validate();
  return w;
}

inline void write_weights(const std::string& path, const Weights& w) {
  write_text(path, serialize_weights(w));
}
inline Weights read_weights(const std::string& path) { return deserialize_weights(read_text(path)); }

// ---------------------------------------------------------------------------
// Sequences (JSONL)

inline json to_json(const TokenSequence& seq) {
  json pos = json::array();
  for (const auto& tok : seq.tokens()) {
    if (const auto* t = std::get_if<TextToken>(&tok)) pos.push_back({{"text", t->id}});
    else pos.push_back({{"visual", std::get<VisualToken>(tok).embedding}});
  }
  return json{{"positions", std::move(pos)}};
}

inline TokenSequence sequence_from_json(const json& j) {
  const auto& pos = j.at("positions");
  require(pos.is_array() && !pos.empty(), ErrorKind::kIo, "'positions' must be a non-empty array");
  TokenSequence seq;
  for (const auto& p : pos) {
    if (p.contains("text")) seq.push_text(p.at("text").get<std::size_t>());
    else if (p.contains("visual")) seq.push_visual(p.at("visual").get<std::vector<float>>());
    else fail(ErrorKind::kIo, "position entry needs 'text' or 'visual'");
  }
  require(seq.role(seq.size() - 1) == TokenRole::kText, ErrorKind::kIo,
          "last position must be a text token");
  return seq;
}

inline std::string serialize_jsonl(const CalibrationSet& set) {
  std::string out;
  for (const auto& s : set.samples) out += to_json(s).dump() + "\n";
  return out;
}

inline CalibrationSet parse_jsonl(const std::string& text) {
  CalibrationSet set;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      set.samples.push_back(sequence_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      fail(ErrorKind::kIo, "line " + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      fail(ErrorKind::kIo, "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return set;
}

inline void write_jsonl(const std::string& path, const CalibrationSet& set) {
  write_text(path, serialize_jsonl(set));
}
inline CalibrationSet read_jsonl(const std::string& path) { return parse_jsonl(read_text(path)); }

// ---------------------------------------------------------------------------
// Toy spec

inline ToySpec toy_spec_from_json(const json& j) {
  ToySpec s;
  s.config = config_from_json(j.at("config"));
  s.seed = j.value("seed", std::uint64_t{0});
  if (j.contains("profile")) {
    s.profile = j.at("profile").get<std::vector<float>>();
  } else {
    s.profile.assign(s.config.num_layers, 1.0f);
  }
  if (j.contains("visual")) {
    s.visual.mean = j.at("visual").value("mean", 0.0f);
    s.visual.std = j.at("visual").value("std", 1.0f);
  }
  s.embed_scale = j.value("embed_scale", 1.0f);
  s.logit_scale = j.value("logit_scale", 1.0f);
  s.validate();
  return s;
}

inline json to_json(const ToySpec& s) {
  return json{{"config", to_json(s.config)},
              {"seed", s.seed},
              {"profile", s.profile},
              {"visual", {{"mean", s.visual.mean}, {"std", s.visual.std}}},
              {"embed_scale", s.embed_scale},
              {"logit_scale", s.logit_scale}};
}

// ---------------------------------------------------------------------------
// Plans

inline json to_json(const LayerPlan& plan) {
  json layers = json::array();
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const auto& k = plan[i];
    json e{{"layer", i}, {"kind", k.is_dense() ? "dense" : "frozen"}};
    if (!k.is_dense()) {
      e["selector"] = selector_name(k);
      if (k.frozen->kind == SelectorKind::kExplicit) e["positions"] = k.frozen->positions;
    }
    layers.push_back(std::move(e));
  }
  const auto frozen = plan.frozen_layers();
  return json{{"num_layers", plan.size()},
              {"num_frozen", plan.num_frozen()},
              {"frozen_layers", std::vector<std::size_t>(frozen.begin(), frozen.end())},
              {"layers", std::move(layers)}};
}

inline FrozenSelector selector_from_string(const std::string& s) {
  if (s == "visual") return FrozenSelector::visual();
  if (s == "text") return FrozenSelector::text();
  if (s == "all") return FrozenSelector::all();
  fail(ErrorKind::kInput, "unknown selector '" + s + "'");
}

inline LayerPlan plan_from_json(const json& j) {
  const auto& layers = j.at("layers");
  require(layers.is_array(), ErrorKind::kIo, "plan 'layers' must be an array");
  std::vector<LayerKind> kinds;
  for (const auto& e : layers) {
    const auto kind = get_field<std::string>(e, "kind", "plan layer");
    if (kind == "dense") {
      kinds.push_back(LayerKind::dense());
    } else if (kind == "frozen") {
      const auto sel = get_field<std::string>(e, "selector", "plan layer");
      if (sel == "explicit")
        kinds.push_back(LayerKind::freeze(
            FrozenSelector::explicit_set(e.at("positions").get<std::set<std::int64_t>>())));
      else
        kinds.push_back(LayerKind::freeze(selector_from_string(sel)));
    } else {
      fail(ErrorKind::kIo, "unknown plan layer kind '" + kind + "'");
    }
  }
  return LayerPlan(std::move(kinds));
}

// ---------------------------------------------------------------------------
// Layer score reports

inline TokenClass class_from_string(const std::string& s) {
  if (s == "visual") return TokenClass::kVisual;
  if (s == "text") return TokenClass::kText;
  if (s == "all") return TokenClass::kAll;
  fail(ErrorKind::kInput, "unknown token class '" + s + "'");
}

inline json to_json(const LayerScoreReport& r) {
  json layers = json::array();
  for (std::size_t i = 0; i < r.scores.size(); ++i) {
    json scores = json::object();
    for (const auto& [c, v] : r.scores[i]) scores[to_string(c)] = v;
    layers.push_back({{"layer", i}, {"scores", std::move(scores)}});
  }
  return json{{"metric", to_string(r.metric)},
              {"num_layers", r.num_layers},
              {"n_samples", r.n_samples},
              {"fingerprint", hex64(r.fingerprint)},
              {"excluded_rows", r.excluded_rows},
              {"layers", std::move(layers)}};
}

inline LayerScoreReport report_from_json(const json& j) {
  LayerScoreReport r;
  const auto metric = get_field<std::string>(j, "metric", "report");
  require(metric == "lc" || metric == "cosine", ErrorKind::kIo, "unknown metric '" + metric + "'");
  r.metric = metric == "lc" ? ScoreMetric::kLayerContribution : ScoreMetric::kCosine;
  r.num_layers = get_field<std::size_t>(j, "num_layers", "report");
  r.n_samples = j.value("n_samples", std::size_t{0});
  r.fingerprint = std::stoull(j.value("fingerprint", std::string("0")), nullptr, 16);
  r.excluded_rows = j.value("excluded_rows", std::size_t{0});
  const auto& layers = j.at("layers");
  require(layers.size() == r.num_layers, ErrorKind::kIo, "report layer count mismatch");
  r.scores.resize(r.num_layers);
  for (std::size_t i = 0; i < r.num_layers; ++i)
    for (const auto& [k, v] : layers[i].at("scores").items())
      r.scores[i][class_from_string(k)] = v.get<double>();
  return r;
}

/// Columns: layer,class,metric,score,n_samples
inline std::string to_csv(const LayerScoreReport& r) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "layer,class,metric,score,n_samples\n";
  for (std::size_t i = 0; i < r.scores.size(); ++i)
    for (const auto& [c, v] : r.scores[i])
      os << i << ',' << to_string(c) << ',' << to_string(r.metric) << ',' << v << ','
         << r.n_samples << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// FLOPs and run reports

inline json to_json(const FlopsReport& r) {
  json layers = json::array();
  for (const auto& l : r.layers)
    layers.push_back({{"layer", l.layer},
                      {"kind", l.frozen ? "frozen" : "dense"},
                      {"selector", l.selector},
                      {"t", l.t},
                      {"v", l.v},
                      {"queries", l.queries},
                      {"flops", l.flops}});
  return json{{"hidden_size", r.hidden},
              {"intermediate_size", r.intermediate},
              {"layers", std::move(layers)},
              {"total", r.total},
              {"dense_total", r.dense_total},
              {"ratio", r.ratio}};
}

/// Columns: layer,kind,t,v,flops; footer rows carry total and ratio.
inline std::string to_csv(const FlopsReport& r) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "layer,kind,t,v,flops\n";
  for (const auto& l : r.layers)
    os << l.layer << ',' << (l.frozen ? "frozen" : "dense") << ',' << l.t << ',' << l.v << ','
       << l.flops << '\n';
  os << "total,,,," << r.total << '\n';
  os << "ratio,,,," << r.ratio << '\n';
  return os.str();
}

inline json to_json(const PruneEvent& e) {
  return json{{"after_layer", e.after_layer},
              {"dropped", e.dropped},
              {"survivor_count", e.surviving.size()}};
}

inline json to_json(const PruneConfig& p) {
  if (const auto* f = std::get_if<FastV>(&p.strategy))
    return json{{"strategy", "fastv"}, {"layer", f->layer}, {"ratio", f->ratio}};
  if (const auto* v = std::get_if<Vtw>(&p.strategy))
    return json{{"strategy", "vtw"}, {"layer", v->layer}};
  if (const auto* x = std::get_if<ExplicitDrop>(&p.strategy))
    return json{{"strategy", "explicit"}, {"layer", x->layer}, {"positions", x->positions}};
  return json{{"strategy", "none"}};
}

/// First eight logits plus an FNV-1a hash of all logit bytes (little-endian).
inline json logits_digest(std::span<const float> logits) {
  std::uint64_t h = 1469598103934665603ull;
  for (float f : logits) {
    const auto bits = std::bit_cast<std::uint32_t>(f);
    for (int i = 0; i < 4; ++i) {
      h ^= (bits >> (8 * i)) & 0xffu;
      h *= 1099511628211ull;
    }
  }
  std::vector<float> head(logits.begin(), logits.begin() + std::min<std::ptrdiff_t>(8, logits.size()));
  return json{{"head", head}, {"hash", hex64(h)}};
}

/// "K,R" for FastV.
inline PruneConfig parse_fastv(const std::string& arg) {
  const auto comma = arg.find(',');
  require(comma != std::string::npos, ErrorKind::kInput, "--fastv expects K,R");
  try {
    return PruneConfig{FastV{std::stoul(arg.substr(0, comma)), std::stod(arg.substr(comma + 1))}};
  } catch (const std::exception&) {
    fail(ErrorKind::kInput, "--fastv expects K,R, got '" + arg + "'");
  }
}

}  // namespace shortv::io
