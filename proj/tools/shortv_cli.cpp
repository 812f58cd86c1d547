// Copyright 2026 The ShortV Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: toy generation, layer profiling, plan selection,
// planned runs with FLOPs accounting, latency benchmarks and selection ablations.
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 internal invariant violation.
// Failures print one JSON object {"error", "message"} on stderr.

#include <chrono>
#include <cstdint>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "shortv/shortv.hpp"

namespace {

using shortv::io::json;

constexpr int kUsageError = 2;
constexpr int kDataError = 3;
constexpr int kInternalError = 4;

int report_error(const std::string& kind, const std::string& message, int code) {
  std::cerr << json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << std::endl;
  return code;
}

int exit_code_for(shortv::ErrorKind kind) {
  switch (kind) {
    case shortv::ErrorKind::kState:
    case shortv::ErrorKind::kAccounting: return kInternalError;
    default: return kDataError;
  }
}

void emit(const json& j, const std::string& out) {
  if (out.empty() || out == "-") std::cout << j.dump(2) << std::endl;
  else shortv::io::write_text(out, j.dump(2) + "\n");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep))
    if (!item.empty()) parts.push_back(item);
  return parts;
}

shortv::PruneConfig prune_from_flags(const std::string& fastv, std::optional<std::size_t> vtw) {
  shortv::require(fastv.empty() || !vtw, shortv::ErrorKind::kInput,
                  "--fastv and --vtw are mutually exclusive");
  if (!fastv.empty()) return shortv::io::parse_fastv(fastv);
  if (vtw) return shortv::PruneConfig{shortv::Vtw{*vtw}};
  return {};
}

struct Options {
  std::string spec, out, weights, calib, eval, report, plan, input, csv, fastv, classes = "visual,text",
      metric = "lc", token_class = "visual", selector, schedule;
  std::size_t n = 40, repeat = 5, trials = 20, threads = 1;
  std::uint64_t seed = 0;
  std::optional<std::size_t> vtw, seed_opt;
  std::size_t t_min = 4, t_max = 8, v_min = 8, v_max = 16;
  std::optional<std::uint64_t> L, N, t, v, h, m;
};

int cmd_gen_toy(const Options& o) {
  const auto spec = shortv::io::toy_spec_from_json(shortv::io::parse_json(shortv::io::read_text(o.spec), o.spec));
  const auto w = shortv::build_toy(spec);
  shortv::io::write_weights(o.out, w);
  std::cout << json{{"weights", o.out}, {"fingerprint", shortv::io::hex64(shortv::fingerprint(w))}}.dump()
            << std::endl;
  return 0;
}

int cmd_gen_calib(const Options& o) {
  const auto spec = shortv::io::toy_spec_from_json(shortv::io::parse_json(shortv::io::read_text(o.spec), o.spec));
  const auto set = shortv::gen_calibration(spec, o.n, {o.t_min, o.t_max}, {o.v_min, o.v_max}, o.seed);
  shortv::io::write_jsonl(o.out, set);
  std::cout << json{{"calibration", o.out}, {"n_samples", set.samples.size()}, {"seed", o.seed}}.dump()
            << std::endl;
  return 0;
}

int cmd_profile(const Options& o) {
  const auto w = shortv::io::read_weights(o.weights);
  const auto calib = shortv::io::read_jsonl(o.calib);
  std::vector<shortv::TokenClass> classes;
  for (const auto& c : split(o.classes, ',')) classes.push_back(shortv::io::class_from_string(c));
  shortv::require(!classes.empty(), shortv::ErrorKind::kInput, "--classes is empty");

  shortv::LayerScoreReport rep;
  if (o.metric == "lc") {
    rep = shortv::lc_profile(w, calib, classes, o.threads);
  } else if (o.metric == "cosine") {
    rep = shortv::cosine_profile(w, calib, classes.front(), o.threads);
    for (std::size_t i = 1; i < classes.size(); ++i) {
      const auto extra = shortv::cosine_profile(w, calib, classes[i], o.threads);
      for (std::size_t l = 0; l < rep.scores.size(); ++l) rep.scores[l][classes[i]] = extra.scores[l].at(classes[i]);
      rep.excluded_rows += extra.excluded_rows;
    }
  } else {
    shortv::fail(shortv::ErrorKind::kInput, "--metric must be lc or cosine");
  }
  emit(shortv::io::to_json(rep), o.out);
  if (!o.csv.empty()) shortv::io::write_text(o.csv, shortv::io::to_csv(rep));
  return 0;
}

int cmd_select(const Options& o) {
  const auto rep = shortv::io::report_from_json(shortv::io::parse_json(shortv::io::read_text(o.report), o.report));
  const auto cls = shortv::io::class_from_string(o.token_class);
  const auto ranking = shortv::rank_layers(rep, cls);
  const auto selector = shortv::io::selector_from_string(o.selector.empty() ? o.token_class : o.selector);
  auto j = shortv::io::to_json(shortv::make_plan(ranking, o.n, selector));
  j["ranking"] = ranking.order;
  j["metric"] = shortv::to_string(rep.metric);
  j["class"] = shortv::to_string(cls);
  emit(j, o.out);
  return 0;
}

int cmd_run(const Options& o) {
  const auto w = shortv::io::read_weights(o.weights);
  const auto plan = shortv::io::plan_from_json(shortv::io::parse_json(shortv::io::read_text(o.plan), o.plan));
  const auto inputs = shortv::io::read_jsonl(o.input);
  shortv::require(!inputs.samples.empty(), shortv::ErrorKind::kInput, "input file has no sequences");
  const auto prune = prune_from_flags(o.fastv, o.vtw);

  json runs = json::array();
  for (std::size_t s = 0; s < inputs.samples.size(); ++s) {
    const auto& seq = inputs.samples[s];
    const auto t0 = std::chrono::steady_clock::now();
    const auto cc = shortv::crosscheck(w, plan, seq, prune);
    const auto logits = shortv::last_logits(cc.forward, w);
    const auto t1 = std::chrono::steady_clock::now();
    json events = json::array();
    for (const auto& e : cc.forward.events) events.push_back(shortv::io::to_json(e));
    runs.push_back({{"sample", s},
                    {"t", seq.text_count()},
                    {"v", seq.visual_count()},
                    {"prune_events", std::move(events)},
                    {"logits_digest", shortv::io::logits_digest(logits)},
                    {"flops", shortv::io::to_json(cc.report)},
                    {"ratio", cc.report.ratio},
                    {"crosscheck",
                     {{"analytical", cc.analytical},
                      {"instrumented", cc.instrumented},
                      {"relative_gap", cc.relative_gap},
                      {"excluded_lm_head", cc.excluded_head}}},
                    {"latency_ms", std::chrono::duration<double, std::milli>(t1 - t0).count()}});
  }
  emit(json{{"config", shortv::io::to_json(w.config)},
            {"plan", shortv::io::to_json(plan)},
            {"prune", shortv::io::to_json(prune)},
            {"runs", std::move(runs)}},
       o.out);
  return 0;
}

int cmd_flops(const Options& o) {
  shortv::require(o.t && o.v && o.h && o.m, shortv::ErrorKind::kInput, "flops needs --t --v --h --m");
  if (o.schedule.empty()) {
    shortv::require(o.L && o.N, shortv::ErrorKind::kInput, "flops needs --L and --N (or --schedule)");
    const double r = shortv::model_ratio(*o.L, *o.N, *o.t, *o.v, *o.h, *o.m);
    emit(json{{"L", *o.L},
              {"N", *o.N},
              {"t", *o.t},
              {"v", *o.v},
              {"h", *o.h},
              {"m", *o.m},
              {"dense_layer_flops", shortv::dense_layer_flops(*o.t, *o.v, *o.h, *o.m)},
              {"shortv_layer_flops", shortv::shortv_layer_flops(*o.t, *o.v, *o.h, *o.m)},
              {"ratio", r}},
         o.out);
    return 0;
  }
  const auto plan = shortv::io::plan_from_json(shortv::io::parse_json(shortv::io::read_text(o.schedule), o.schedule));
  shortv::ModelConfig cfg;
  cfg.num_layers = plan.size();
  cfg.hidden_size = *o.h;
  cfg.intermediate_size = *o.m;
  const auto prune = prune_from_flags(o.fastv, o.vtw);
  const auto counts = shortv::realized_counts(plan.size(), *o.t, *o.v, prune);
  const auto rep = shortv::schedule_flops(cfg, plan, prune, counts);
  auto j = shortv::io::to_json(rep);
  j["prune"] = shortv::io::to_json(prune);
  emit(j, o.out);
  if (!o.csv.empty()) shortv::io::write_text(o.csv, shortv::io::to_csv(rep));
  return 0;
}

int cmd_bench(const Options& o) {
  const auto w = shortv::io::read_weights(o.weights);
  const auto plan = shortv::io::plan_from_json(shortv::io::parse_json(shortv::io::read_text(o.plan), o.plan));
  const auto calib = shortv::io::read_jsonl(o.calib);
  const auto r = shortv::bench_latency(w, plan, calib, o.repeat);
  emit(json{{"repeat", o.repeat},
            {"n_samples", calib.samples.size()},
            {"num_frozen", plan.num_frozen()},
            {"dense_ms", r.dense_ms},
            {"planned_ms", r.planned_ms},
            {"dense_median_ms", r.dense_median_ms},
            {"planned_median_ms", r.planned_median_ms},
            {"speedup", r.speedup}},
       o.out);
  return 0;
}

int cmd_ablate(const Options& o) {
  const auto w = shortv::io::read_weights(o.weights);
  const auto calib = shortv::io::read_jsonl(o.calib);
  const auto eval = o.eval.empty() ? calib : shortv::io::read_jsonl(o.eval);
  const auto r = shortv::ablate(w, calib, eval, o.n, o.trials, o.seed, o.threads);
  emit(json{{"n", r.n},
            {"trials", o.trials},
            {"seed", o.seed},
            {"selection",
             {{"lc", {{"layers", r.lc_visual_layers}, {"mean_kl", r.lc_visual}}},
              {"cosine", {{"layers", r.cosine_visual_layers}, {"mean_kl", r.cosine_visual}}},
              {"random", {{"mean_kl", r.random_visual_mean}, {"per_trial", r.random_visual}}}}},
            {"frozen_tokens",
             {{"text", {{"layers", r.lc_text_layers}, {"mean_kl", r.lc_text}}},
              {"text_and_visual", {{"mean_kl", r.lc_all_frozen_all}}},
              {"random_tokens", {{"mean_kl", r.lc_all_random_tokens}}},
              {"visual", {{"mean_kl", r.lc_visual}}}}}},
       o.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ShortV toolkit: layer contribution profiling and frozen visual-token execution"};
  app.require_subcommand(1);
  Options o;

  auto* gen_toy = app.add_subcommand("gen-toy", "Build deterministic toy weights from a spec file");
  gen_toy->add_option("--spec", o.spec, "Toy spec JSON")->required();
  gen_toy->add_option("--out", o.out, "Output weight file")->required();

  auto* gen_calib = app.add_subcommand("gen-calib", "Generate a calibration set (JSONL)");
  gen_calib->add_option("--spec", o.spec, "Toy spec JSON")->required();
  gen_calib->add_option("--n", o.n, "Number of samples")->capture_default_str();
  gen_calib->add_option("--out", o.out, "Output JSONL")->required();
  gen_calib->add_option("--seed", o.seed, "Generator seed")->capture_default_str();
  gen_calib->add_option("--t-min", o.t_min)->capture_default_str();
  gen_calib->add_option("--t-max", o.t_max)->capture_default_str();
  gen_calib->add_option("--v-min", o.v_min)->capture_default_str();
  gen_calib->add_option("--v-max", o.v_max)->capture_default_str();

  auto* profile = app.add_subcommand("profile", "Per-layer LC or cosine-similarity profile");
  profile->add_option("--weights", o.weights)->required();
  profile->add_option("--calib", o.calib)->required();
  profile->add_option("--classes", o.classes, "Comma list of visual,text,all")->capture_default_str();
  profile->add_option("--metric", o.metric, "lc or cosine")->capture_default_str();
  profile->add_option("--out", o.out, "Report JSON (stdout if omitted)");
  profile->add_option("--csv", o.csv, "Also write a flat CSV");
  profile->add_option("--threads", o.threads)->capture_default_str();

  auto* select = app.add_subcommand("select", "Rank layers and emit a plan freezing N of them");
  select->add_option("--report", o.report)->required();
  select->add_option("--class", o.token_class, "Token class to rank by")->capture_default_str();
  select->add_option("--n", o.n, "Number of layers to freeze")->required();
  select->add_option("--selector", o.selector, "Tokens to freeze (defaults to --class)");
  select->add_option("--out", o.out, "Plan JSON (stdout if omitted)");

  auto* run = app.add_subcommand("run", "Forward pass with FLOPs accounting");
  run->add_option("--weights", o.weights)->required();
  run->add_option("--plan", o.plan)->required();
  run->add_option("--input", o.input, "Sequence JSONL")->required();
  run->add_option("--fastv", o.fastv, "FastV pruning K,R");
  run->add_option("--vtw", o.vtw, "VTW drop after layer K");
  run->add_option("--out", o.out, "Run report JSON (stdout if omitted)");

  auto* flops = app.add_subcommand("flops", "Analytical FLOPs ratio or per-layer schedule");
  flops->set_help_flag("--help", "Print this help message and exit");  // -h would clash with --h
  flops->add_option("--L", o.L);
  flops->add_option("--N", o.N);
  flops->add_option("--t", o.t);
  flops->add_option("--v", o.v);
  flops->add_option("--h", o.h);
  flops->add_option("--m", o.m);
  flops->add_option("--schedule", o.schedule, "Plan JSON for a per-layer schedule");
  flops->add_option("--fastv", o.fastv, "FastV pruning K,R");
  flops->add_option("--vtw", o.vtw, "VTW drop after layer K");
  flops->add_option("--out", o.out);
  flops->add_option("--csv", o.csv);

  auto* bench = app.add_subcommand("bench", "Median first-pass latency, dense vs planned");
  bench->add_option("--weights", o.weights)->required();
  bench->add_option("--plan", o.plan)->required();
  bench->add_option("--calib", o.calib)->required();
  bench->add_option("--repeat", o.repeat)->capture_default_str();
  bench->add_option("--out", o.out);

  auto* ablate = app.add_subcommand("ablate", "LC vs cosine vs random selection, frozen-token variants");
  ablate->add_option("--weights", o.weights)->required();
  ablate->add_option("--calib", o.calib, "Selection set")->required();
  ablate->add_option("--eval", o.eval, "Evaluation set (defaults to --calib)");
  ablate->add_option("--n", o.n, "Layers to freeze")->required();
  ablate->add_option("--trials", o.trials)->capture_default_str();
  ablate->add_option("--seed", o.seed)->capture_default_str();
  ablate->add_option("--threads", o.threads)->capture_default_str();
  ablate->add_option("--out", o.out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage_error", e.what(), kUsageError);
  }

  try {
    if (*gen_toy) return cmd_gen_toy(o);
    if (*gen_calib) return cmd_gen_calib(o);
    if (*profile) return cmd_profile(o);
    if (*select) return cmd_select(o);
    if (*run) return cmd_run(o);
    if (*flops) return cmd_flops(o);
    if (*bench) return cmd_bench(o);
    if (*ablate) return cmd_ablate(o);
  } catch (const shortv::Error& e) {
    return report_error(shortv::to_string(e.kind()), e.what(), exit_code_for(e.kind()));
  } catch (const nlohmann::json::exception& e) {
    return report_error("io_error", e.what(), kDataError);
  } catch (const std::exception& e) {
    return report_error("internal_error", e.what(), kInternalError);
  }
  return kUsageError;
}
