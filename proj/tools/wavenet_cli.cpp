// Copyright 2026 The wavenet-compress Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <CLI11.hpp>
#include <json.hpp>

#include <malloc.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "wavenet/audio_io.hpp"
#include "wavenet/calibration.hpp"
#include "wavenet/checkpoint.hpp"
#include "wavenet/compression.hpp"
#include "wavenet/model.hpp"
#include "wavenet/serialize.hpp"
#include "wavenet/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace wavenet;

namespace {

constexpr const char* kVersion = "0.1.0";

enum ExitCode : int {
  kOk = 0,
  kFailed = 1,
  kConfigError = 2,
  kDataError = 3,
  kDiverged = 4,
};

// Data-side failures surface as exit code 3.
class DataError : public Error {
 public:
  using Error::Error;
};

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string grouped(std::uint64_t v) {
  std::string s = std::to_string(v);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

struct ConfigFlags {
  std::string preset = "paper";
  std::string file;
  std::optional<int> skip, residual, audio, layers, cycle;

  void attach(CLI::App* app) {
    app->add_option("--preset", preset, "Model preset")
        ->check(CLI::IsMember({"paper", "desk"}));
    app->add_option("--config", file, "Model config JSON (overrides preset)");
    app->add_option("--skip-channels", skip, "Override s");
    app->add_option("--residual-channels", residual, "Override r");
    app->add_option("--audio-channels", audio, "Override a");
    app->add_option("--layers", layers, "Override L");
    app->add_option("--dilation-cycle", cycle, "Override D");
  }

  ModelConfig resolve() const {
    ModelConfig c = preset == "desk" ? ModelConfig::desk() : ModelConfig::paper();
    if (!file.empty()) {
      std::ifstream in(file);
      if (!in) throw ConfigError("cannot read config '" + file + "'");
      try {
        c = json::parse(in).get<ModelConfig>();
      } catch (const json::exception& e) {
        throw ConfigError("bad config '" + file + "': " + e.what());
      }
    }
    if (skip) c.skip_channels = *skip;
    if (residual) c.residual_channels = *residual;
    if (audio) c.audio_channels = *audio;
    if (layers) c.layers = *layers;
    if (cycle) c.dilation_cycle = *cycle;
    c.validate();
    return c;
  }
};

class RunManifest {
 public:
  RunManifest(std::string command, int argc, char** argv)
      : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {
    for (int i = 0; i < argc; ++i) argv_.emplace_back(argv[i]);
  }
  json& body() { return body_; }
  void input(const fs::path& p) { inputs_.push_back(p.string()); }
  void output(const fs::path& p) { outputs_.push_back(p.string()); }

  // Written as <primary output>.manifest.json.
  void write(const fs::path& primary) const {
    const double wall = std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - start_).count();
    json j = body_;
    j["command"] = command_;
    j["argv"] = argv_;
    j["inputs"] = inputs_;
    j["outputs"] = outputs_;
    j["tool_version"] = kVersion;
    j["wall_seconds"] = wall;
    std::ofstream out(fs::path(primary.string() + ".manifest.json"));
    out << j.dump(2) << '\n';
  }

 private:
  std::string command_;
  std::vector<std::string> argv_, inputs_, outputs_;
  json body_ = json::object();
  std::chrono::steady_clock::time_point start_;
};

fs::path data_manifest(std::string data) {
  if (data.empty()) {
    if (const char* env = std::getenv("WAVENET_DATA_DIR")) data = env;
  }
  if (data.empty()) throw ConfigError("no dataset: pass --data or set WAVENET_DATA_DIR");
  fs::path p(data);
  if (fs::is_directory(p)) p /= "manifest.txt";
  if (!fs::exists(p)) throw DataError("dataset manifest '" + p.string() + "' not found");
  return p;
}

Dataset load_dataset(const fs::path& manifest) {
  try {
    return read_dataset_manifest(manifest);
  } catch (const Error& e) {
    throw DataError(e.what());
  }
}

Checkpoint load_checkpoint(const fs::path& p) {
  if (!fs::exists(p)) throw DataError("checkpoint '" + p.string() + "' not found");
  return read_checkpoint(p);
}

// ---------------------------------------------------------------------------

void print_table(const ModelTable& t, const std::string& format) {
  if (format == "json") {
    std::cout << to_json(t).dump(2) << '\n';
    return;
  }
  if (format == "tsv") {
    std::cout << "layer\ttype\trepeats\tparams_per_layer\tparams_total\t"
                 "gops_per_layer\tgops_total\n";
    for (const LayerAccount& a : t.rows) {
      std::cout << a.layer << '\t' << a.type << '\t' << a.repeats << '\t'
                << a.params_per_layer << '\t' << a.params_total << '\t'
                << (a.has_ops ? fmt("%.17g", a.gops_per_layer) : "-") << '\t'
                << (a.has_ops ? fmt("%.17g", a.gops_total) : "-") << '\n';
    }
    std::cout << "Total\t\t\t\t" << t.total_params << "\t\t"
              << fmt("%.17g", t.total_gops) << '\n';
    return;
  }
  std::printf("%-18s %-16s %12s %12s %10s %10s\n", "Layer", "Type",
              "Params/layer", "Params", "GOP/s/layer", "GOP/s");
  for (const LayerAccount& a : t.rows) {
    std::printf("%-18s %-16s %12s %12s %10s %10s\n", a.layer.c_str(), a.type.c_str(),
                grouped(a.params_per_layer).c_str(), grouped(a.params_total).c_str(),
                a.has_ops ? fmt("%.2f", a.gops_per_layer).c_str() : "-",
                a.has_ops ? fmt("%.2f", a.gops_total).c_str() : "-");
  }
  std::printf("%-18s %-16s %12s %12s %10s %10s\n", "Total", "", "",
              grouped(t.total_params).c_str(), "", fmt("%.2f", t.total_gops).c_str());
}

void print_report(const CompressionReport& r, const std::string& format) {
  if (format == "json") {
    std::cout << to_json(r).dump(2) << '\n';
    return;
  }
  std::printf("format                      %s\n", r.format.c_str());
  std::printf("sparse-layer CR             %.3f\n", r.sparse_layer_cr);
  std::printf("model CR                    %.3f\n", r.model_cr);
  std::printf("speedup (upsample dense)    %.3f\n", r.speedup);
  std::printf("speedup (upsample pruned)   %.3f\n", r.speedup_upsample_pruned);
  std::printf("achieved sparsity by layer group\n");
  for (const auto& [g, s] : r.group_sparsity) std::printf("  %-12s %.4f\n", g.c_str(), s);
}

// ---------------------------------------------------------------------------

struct Options {
  ConfigFlags config;
  std::string table_format = "text";
  std::uint64_t seed = 0;
  std::string out, data, checkpoint, features, compare, format = "FP32";
  std::string prune_mode = "iterative";
  double prune_cr = 0.0, sparsity = -1.0;
  long steps = 1000, prune_every = 500;
  std::size_t batch = 16, segment = kSampleRate;
  double learning_rate = 1e-3;
  std::vector<std::string> calib;
  std::string calib_data;
  std::size_t clips = 4;
  double duration = 1.0;
};

int cmd_table(const Options& o) {
  print_table(model_table(o.config.resolve()), o.table_format);
  return kOk;
}

int cmd_init(const Options& o, RunManifest& run) {
  Checkpoint ck;
  ck.params = build(o.config.resolve(), o.seed);
  ck.seed = o.seed;
  write_checkpoint(o.out, ck);
  run.body()["config"] = ck.params.config;
  run.body()["seed"] = o.seed;
  run.output(o.out);
  run.write(o.out);
  std::printf("wrote %s (%s parameters)\n", o.out.c_str(),
              grouped(ck.params.total_parameters()).c_str());
  return kOk;
}

int cmd_synth_data(const Options& o, RunManifest& run) {
  write_dataset(o.out, synth_dataset(o.seed, o.clips, o.duration));
  run.body()["seed"] = o.seed;
  run.body()["clips"] = o.clips;
  run.body()["duration_seconds"] = o.duration;
  run.output(fs::path(o.out) / "manifest.txt");
  run.write(fs::path(o.out) / "manifest.txt");
  std::printf("wrote %zu clips to %s\n", o.clips, o.out.c_str());
  return kOk;
}

int cmd_train(const Options& o, RunManifest& run) {
  const fs::path manifest = data_manifest(o.data);
  run.input(manifest);
  const Dataset data = load_dataset(manifest);
  TrainConfig tc;
  tc.steps = o.steps;
  tc.batch_size = o.batch;
  tc.segment_samples = o.segment;
  tc.learning_rate = o.learning_rate;
  tc.seed = o.seed;
  tc.validate();

  Checkpoint ck;
  if (!o.checkpoint.empty()) {
    ck = load_checkpoint(o.checkpoint);
    run.input(o.checkpoint);
  } else {
    ck.params = build(o.config.resolve(), o.seed);
  }
  ck.seed = o.seed;

  double sparsity = 0.0;
  if (o.prune_cr > 0.0) sparsity = sparsity_for_cr(o.prune_cr);
  if (o.sparsity >= 0.0) sparsity = o.sparsity;
  const fs::path out(o.out);
  const fs::path log = out.string() + ".metrics.tsv";
  run.body()["config"] = ck.params.config;
  run.body()["train"] = tc;
  run.body()["seed"] = tc.seed;
  run.body()["prune_mode"] = o.prune_mode;
  run.body()["final_sparsity"] = sparsity;

  TrainResult result;
  if (o.prune_mode == "2:4") {
    const OneShotResult r = one_shot_2to4_procedure(ck.params, tc, data);
    Checkpoint dense = ck;
    dense.params = r.dense;
    dense.step = tc.steps;
    const fs::path dense_path = out.string() + ".dense";
    write_checkpoint(dense_path, dense);
    run.output(dense_path);
    result = r.retrain_run;
    ck.step = 2 * tc.steps;
  } else if (o.prune_mode == "iterative") {
    TrainOptions opts;
    opts.metrics_log = log;
    if (sparsity > 0.0) {
      opts.schedules = uniform_schedules(schedule_for(sparsity, tc.steps, o.prune_every));
      ck.schedules = opts.schedules;
    }
    result = train(ck.params, tc, data, opts);
    run.output(log);
    ck.step = result.steps_run;
  } else {
    throw ConfigError("unknown prune mode '" + o.prune_mode + "'");
  }
  ck.params = result.params;
  ck.masks = result.masks;
  ck.metadata["final_loss"] = result.losses.empty() ? "nan" : fmt("%.17g", result.losses.back());
  write_checkpoint(out, ck);
  run.output(out);
  run.body()["steps_run"] = result.steps_run;
  if (result.divergence) run.body()["divergence"] = *result.divergence;
  run.write(out);

  const CompressionReport rep = compression_ratios(ck.params, ck.masks, FormatId::fp32);
  std::printf("steps %ld  loss %.4f  sparse-layer CR %.2f  model CR %.3f\n",
              result.steps_run, result.losses.empty() ? 0.0 : result.losses.back(),
              rep.sparse_layer_cr, rep.model_cr);
  if (result.divergence) {
    std::fprintf(stderr, "training diverged: %s (last good checkpoint kept)\n",
                 result.divergence->c_str());
    return kDiverged;
  }
  return kOk;
}

int cmd_quantize(const Options& o, RunManifest& run) {
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  run.input(o.checkpoint);
  const FormatId target = parse_format(o.format);
  std::optional<Calibration> cal;
  if (format_spec(target).is_integer()) {
    if (!o.calib_data.empty()) {
      const fs::path manifest = data_manifest(o.calib_data);
      run.input(manifest);
      cal = calibrate_int8(ck.params, load_dataset(manifest));
    } else if (!o.calib.empty()) {
      std::vector<FeatureMatrix> feats;
      for (const std::string& f : o.calib) {
        run.input(f);
        feats.push_back(read_features(f, static_cast<std::size_t>(ck.params.config.mel_bins)));
      }
      cal = calibrate_int8(ck.params, feats, o.seed);
    } else {
      throw CalibrationRequired("INT8 needs --calib feature files or --calib-data");
    }
    for (const std::string& d : cal->degenerate) {
      std::fprintf(stderr, "warning: degenerate scale for %s\n", d.c_str());
    }
  }
  const Checkpoint q = quantize_checkpoint(ck, target, cal ? &*cal : nullptr);
  write_checkpoint(o.out, q);
  run.output(o.out);
  run.body()["format"] = format_name(target);
  const CompressionReport rep = compression_ratios(q.params, q.masks, target);
  run.body()["model_cr"] = rep.model_cr;
  run.write(o.out);
  std::printf("format %s  model CR %.2f\n", rep.format.c_str(), rep.model_cr);
  return kOk;
}

int cmd_synthesize(const Options& o, RunManifest& run) {
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  run.input(o.checkpoint);
  FeatureMatrix features;
  try {
    features = read_features(o.features, static_cast<std::size_t>(ck.params.config.mel_bins));
  } catch (const FormatError& e) {
    throw DataError(e.what());
  }
  run.input(o.features);
  const PrecisionContext ctx{ck.format};
  const InferenceModel model(ck.params, ctx, ck.calibration ? &*ck.calibration : nullptr);
  GenerationState st = model.start(features, o.seed);

  std::optional<Checkpoint> other;
  std::optional<InferenceModel> other_model;
  std::optional<GenerationState> other_st;
  if (!o.compare.empty()) {
    other = load_checkpoint(o.compare);
    run.input(o.compare);
    other_model.emplace(other->params, PrecisionContext{other->format},
                        other->calibration ? &*other->calibration : nullptr);
    other_st.emplace(other_model->start(features, o.seed));
  }
  AudioClip audio;
  std::optional<std::size_t> divergence;
  double max_logit_gap = 0.0;
  std::vector<float> mine, theirs;
  while (!st.done()) {
    const int code = st.step(other_st ? &mine : nullptr);
    audio.samples.push_back(mulaw_decode(code, ck.params.config.audio_channels));
    if (other_st && !divergence) {
      // Same seed, so both streams draw the same uniforms step by step.
      const int code2 = other_st->step(&theirs);
      for (std::size_t i = 0; i < mine.size() && i < theirs.size(); ++i) {
        max_logit_gap = std::max(max_logit_gap,
                                 static_cast<double>(std::fabs(mine[i] - theirs[i])));
      }
      if (code != code2) divergence = audio.samples.size() - 1;
    }
  }
  if (other_st) {
    if (divergence) {
      std::printf("first divergence at sample %zu (max logit gap up to it %.3g)\n",
                  *divergence, max_logit_gap);
      run.body()["first_divergence"] = *divergence;
    } else {
      std::printf("no divergence over %zu samples (max logit gap %.3g)\n",
                  audio.samples.size(), max_logit_gap);
      run.body()["first_divergence"] = nullptr;
    }
    run.body()["max_logit_gap"] = max_logit_gap;
  }
  write_wav(o.out, audio);
  run.output(o.out);
  run.body()["seed"] = o.seed;
  run.body()["samples"] = audio.samples.size();
  run.write(o.out);
  std::printf("wrote %zu samples to %s\n", audio.samples.size(), o.out.c_str());
  return kOk;
}

int cmd_report(const Options& o) {
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  print_report(compression_ratios(ck.params, ck.masks, ck.format), o.table_format);
  return kOk;
}

int cmd_verify(const Options& o) {
  Checkpoint ck;
  try {
    ck = load_checkpoint(o.checkpoint);
  } catch (const ChecksumError& e) {
    std::printf("FAIL checksum: %s\n", e.what());
    return kFailed;
  }
  std::vector<std::string> problems = verify_masks(ck.params, ck.masks);
  // Zero must survive the checkpoint's storage format exactly.
  const FormatSpec& f = format_spec(ck.format);
  ck.params.for_each([&](const std::string& name, const Tensor& t) {
    std::size_t zeros = 0;
    for (float v : t.data) zeros += v == 0.0f;
    if (zeros == 0) return;
    Tensor q = t;
    if (f.is_integer()) {
      const auto it = ck.calibration ? ck.calibration->weights.find(name)
                                     : decltype(ck.calibration->weights.end()){};
      if (!is_bias(name) && ck.calibration && it != ck.calibration->weights.end()) {
        for (float& v : q.data) v = fake_quantize_int8(v, it->second);
      }
    } else {
      q = quantize_tensor(t, f);
    }
    for (std::size_t i = 0; i < t.numel(); ++i) {
      if (t.data[i] == 0.0f && q.data[i] != 0.0f) {
        problems.push_back(name + ": zero at " + std::to_string(i) + " not preserved");
        break;
      }
    }
  });
  for (const std::string& p : problems) std::printf("FAIL %s\n", p.c_str());
  if (problems.empty()) {
    std::printf("PASS %s: %zu masks, checksums and zero-exactness hold\n",
                o.checkpoint.c_str(), ck.masks.size());
    return kOk;
  }
  return kFailed;
}

int cmd_evaluate(const Options& o) {
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const Dataset data = load_dataset(data_manifest(o.data));
  const double ce = evaluate(ck.params, data, PrecisionContext{ck.format},
                             ck.calibration ? &*ck.calibration : nullptr);
  std::printf("format %s  cross-entropy %.6f\n",
              std::string(format_name(ck.format)).c_str(), ce);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  // Keep large training buffers in the heap between steps.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  CLI::App app{"WaveNet vocoder compression toolkit"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  Options o;

  auto* params = app.add_subcommand("params", "Parameter and operation table");
  auto* ops = app.add_subcommand("ops", "Operation and parameter table");
  for (auto* sub : {params, ops}) {
    o.config.attach(sub);
    sub->add_option("--format", o.table_format, "text, json or tsv")
        ->check(CLI::IsMember({"text", "json", "tsv"}));
  }

  auto* init = app.add_subcommand("init", "Build a freshly initialized checkpoint");
  o.config.attach(init);
  init->add_option("--seed", o.seed);
  init->add_option("--out", o.out)->required();

  auto* synth = app.add_subcommand("synth-data", "Write a synthetic dataset");
  synth->add_option("--seed", o.seed);
  synth->add_option("--clips", o.clips);
  synth->add_option("--duration", o.duration, "Seconds per clip");
  synth->add_option("--out", o.out)->required();

  auto* tr = app.add_subcommand("train", "Train, optionally pruning");
  o.config.attach(tr);
  tr->add_option("--data", o.data, "Dataset directory or manifest");
  tr->add_option("--init", o.checkpoint, "Start from this checkpoint");
  tr->add_option("--steps", o.steps);
  tr->add_option("--batch", o.batch);
  tr->add_option("--segment", o.segment, "Segment length in samples");
  tr->add_option("--lr", o.learning_rate);
  auto* cr = tr->add_option("--prune-cr", o.prune_cr, "Target sparse-layer compression ratio");
  tr->add_option("--sparsity", o.sparsity, "Target sparsity")->excludes(cr);
  tr->add_option("--prune-mode", o.prune_mode)
      ->check(CLI::IsMember({"iterative", "2:4"}));
  tr->add_option("--prune-every", o.prune_every, "Steps between pruning events");
  tr->add_option("--seed", o.seed);
  tr->add_option("--out", o.out)->required();

  auto* qz = app.add_subcommand("quantize", "Post-training quantization");
  qz->add_option("--checkpoint", o.checkpoint)->required();
  qz->add_option("--format", o.format)->required();
  qz->add_option("--calib", o.calib, "Calibration feature files");
  qz->add_option("--calib-data", o.calib_data, "Calibration dataset");
  qz->add_option("--seed", o.seed);
  qz->add_option("--out", o.out)->required();

  auto* sy = app.add_subcommand("synthesize", "Autoregressive synthesis to WAV");
  sy->add_option("--checkpoint", o.checkpoint)->required();
  sy->add_option("--features", o.features)->required();
  sy->add_option("--seed", o.seed);
  sy->add_option("--compare", o.compare, "Second checkpoint; logs the first divergence");
  sy->add_option("--out", o.out)->required();

  auto* rp = app.add_subcommand("report", "Compression report");
  rp->add_option("--checkpoint", o.checkpoint)->required();
  rp->add_option("--format", o.table_format)->check(CLI::IsMember({"text", "json"}));

  auto* vf = app.add_subcommand("verify", "Checkpoint invariant suite");
  vf->add_option("--checkpoint", o.checkpoint)->required();

  auto* ev = app.add_subcommand("evaluate", "Teacher-forced cross-entropy");
  ev->add_option("--checkpoint", o.checkpoint)->required();
  ev->add_option("--data", o.data);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    auto* sub = app.get_subcommands().front();
    RunManifest run(sub->get_name(), argc, argv);
    if (sub == params || sub == ops) return cmd_table(o);
    if (sub == init) return cmd_init(o, run);
    if (sub == synth) return cmd_synth_data(o, run);
    if (sub == tr) return cmd_train(o, run);
    if (sub == qz) return cmd_quantize(o, run);
    if (sub == sy) return cmd_synthesize(o, run);
    if (sub == rp) return cmd_report(o);
    if (sub == vf) return cmd_verify(o);
    if (sub == ev) return cmd_evaluate(o);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const CalibrationRequired& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "diverged: %s\n", e.what());
    return kDiverged;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kDataError;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kDataError;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kDataError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailed;
  }
  return kFailed;
}
