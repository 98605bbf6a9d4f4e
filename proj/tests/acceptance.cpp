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

// End-to-end acceptance suite. Prints one PASS/FAIL line per criterion;
// `acceptance AC7` runs a single one.

#include <malloc.h>

#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "test_util.hpp"
#include "wavenet/audio_io.hpp"
#include "wavenet/checkpoint.hpp"
#include "wavenet/compression.hpp"
#include "wavenet/model.hpp"
#include "wavenet/training.hpp"

using namespace wavenet;
using json = nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok) {
      pass_ = false;
      if (failures_.size() < 6) failures_.push_back(what);
      else ++hidden_;
    }
  }
  void note(const std::string& s) { notes_.push_back(s); }

  Outcome done() const {
    std::string d;
    for (const auto& n : notes_) d += (d.empty() ? "" : "; ") + n;
    for (const auto& f : failures_) d += (d.empty() ? "" : "; ") + ("FAILED " + f);
    if (hidden_ > 0) d += fmt("; %d more failures", hidden_);
    return {pass_, d};
  }

 private:
  bool pass_ = true;
  int hidden_ = 0;
  std::vector<std::string> failures_, notes_;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Table reproduction, via the library and the CLI.
Outcome ac1() {
  Checks c;
  const auto t0 = std::chrono::steady_clock::now();
  const std::array<std::uint64_t, 8> params = {30720, 5120080, 57840, 19440,
                                               14520, 29040, 61440, 65536};
  const std::array<double, 7> gops = {0.82, 1.84, 0.61, 0.46, 0.92, 1.96, 2.09};
  const ModelTable table = model_table(ModelConfig::paper());
  c.expect(table.rows.size() == 8, "row count");
  for (std::size_t i = 0; i < std::min<std::size_t>(8, table.rows.size()); ++i) {
    c.expect(table.rows[i].params_per_layer == params[i],
             fmt("%s params %llu", table.rows[i].layer.c_str(),
                 static_cast<unsigned long long>(table.rows[i].params_per_layer)));
    if (i > 0) {
      c.expect(std::fabs(table.rows[i].gops_per_layer - gops[i - 1]) <= 0.005,
               fmt("%s GOP/s %.4f", table.rows[i].layer.c_str(),
                   table.rows[i].gops_per_layer));
    }
  }
  c.expect(table.total_params == 7196696, "total params");
  c.expect(std::fabs(table.total_gops - 65.85) <= 0.005, fmt("total GOP/s %.4f", table.total_gops));

  for (const char* cmd : {"params", "ops"}) {
    const auto r = testing::run_cli(std::string(cmd) + " --preset paper --format json");
    c.expect(r.exit_code == 0, std::string(cmd) + " exit");
    if (r.exit_code != 0) continue;
    const json j = json::parse(r.output);
    for (std::size_t i = 0; i < 8 && i < j["rows"].size(); ++i) {
      c.expect(j["rows"][i]["params_per_layer"].get<std::uint64_t>() == params[i],
               std::string(cmd) + " params row " + std::to_string(i));
      if (i > 0) {
        c.expect(std::fabs(j["rows"][i]["gops_per_layer"].get<double>() - gops[i - 1]) <= 0.005,
                 std::string(cmd) + " gops row " + std::to_string(i));
      }
    }
    c.expect(j["total_params"].get<std::uint64_t>() == 7196696, std::string(cmd) + " total");
    c.expect(std::fabs(j["total_gops"].get<double>() - 65.85) <= 0.005,
             std::string(cmd) + " total GOP/s");
  }
  const double secs = seconds_since(t0);
  c.expect(secs < 1.0, fmt("runtime %.2fs", secs));
  c.note(fmt("total %llu params, %.2f GOP/s, %.2fs",
             static_cast<unsigned long long>(table.total_params), table.total_gops, secs));
  return c.done();
}

// Dense quantization ratios.
Outcome ac2() {
  Checks c;
  const auto t0 = std::chrono::steady_clock::now();
  const ModelConfig cfg = ModelConfig::paper();
  const std::vector<std::pair<FormatId, double>> expected = {
      {FormatId::fp32, 1.00},  {FormatId::tf32, 1.68},    {FormatId::bfloat16, 2.00},
      {FormatId::bfp16, 3.61}, {FormatId::fp16_16, 2.00}, {FormatId::fp16_32, 2.00},
      {FormatId::int8, 4.00}};
  std::string got;
  for (const auto& [id, want] : expected) {
    const double cr = compression_report(cfg, {}, id).model_cr;
    got += fmt("%s%s %.4f", got.empty() ? "" : ", ", std::string(format_name(id)).c_str(), cr);
    if (id == FormatId::bfp16) {
      c.expect(cr >= 3.55 && cr <= 3.64, fmt("BFP16 %.4f outside [3.55, 3.64]", cr));
    } else {
      c.expect(std::fabs(cr - want) <= 0.03,
               fmt("%s %.4f vs %.2f", std::string(format_name(id)).c_str(), cr, want));
    }
  }
  const double secs = seconds_since(t0);
  c.expect(secs < 1.0, fmt("runtime %.2fs", secs));
  c.note(got);
  return c.done();
}

// Sparse model ratios at nominal sparsity.
Outcome ac3() {
  Checks c;
  const ModelConfig cfg = ModelConfig::paper();
  const std::array<double, 5> crs = {2, 4, 8, 16, 32};
  const std::array<double, 5> target = {1.97, 3.83, 7.23, 13.02, 21.73};
  std::string got;
  for (std::size_t i = 0; i < crs.size(); ++i) {
    const CompressionReport r = compression_report(
        cfg, nominal_unstructured(cfg, sparsity_for_cr(crs[i])), FormatId::fp32);
    const double gap = (r.model_cr - target[i]) / target[i];
    got += fmt("%sCR%g %.4f (%+.2f%%)", got.empty() ? "" : ", ", crs[i], r.model_cr, 100 * gap);
    c.expect(std::fabs(gap) <= 0.03, fmt("CR%g model %.4f", crs[i], r.model_cr));
    c.expect(std::fabs(r.sparse_layer_cr - crs[i]) <= 1e-3 * crs[i],
             fmt("CR%g sparse-layer %.4f", crs[i], r.sparse_layer_cr));
  }
  const double two_four = compression_report(cfg, nominal_2to4(cfg), FormatId::fp32).model_cr;
  c.expect(std::fabs(two_four - 1.97) <= 0.01, fmt("2:4 %.4f", two_four));
  c.note(got + fmt(", 2:4 %.4f", two_four));
  return c.done();
}

// Theoretical speedups, upsample counted dense.
Outcome ac4() {
  Checks c;
  const ModelConfig cfg = ModelConfig::paper();
  const std::array<double, 5> crs = {2, 4, 8, 16, 32};
  const std::array<double, 5> target = {1.91, 3.51, 6.03, 9.41, 12.95};
  std::string got;
  for (std::size_t i = 0; i < crs.size(); ++i) {
    const KeptCounts kept = nominal_unstructured(cfg, sparsity_for_cr(crs[i]));
    const double s = theoretical_speedup(cfg, kept, SpeedupConvention::upsample_dense);
    const double alt = theoretical_speedup(cfg, kept, SpeedupConvention::upsample_pruned);
    const double gap = (s - target[i]) / target[i];
    got += fmt("%sCR%g %.3f (%+.2f%%, upsample pruned %.3f)", got.empty() ? "" : ", ",
               crs[i], s, 100 * gap, alt);
    c.expect(std::fabs(gap) <= 0.05, fmt("CR%g speedup %.4f", crs[i], s));
  }
  c.note(got);
  return c.done();
}

// Sparsity and quantization combined.
Outcome ac5() {
  Checks c;
  const ModelConfig cfg = ModelConfig::paper();
  struct Cell {
    FormatId id;
    double cr4, two_four;
  };
  const std::vector<Cell> target = {{FormatId::tf32, 6.44, 3.32},    {FormatId::bfloat16, 7.65, 3.94},
                                   {FormatId::bfp16, 13.84, 7.13},  {FormatId::fp16_16, 7.65, 3.94},
                                   {FormatId::fp16_32, 7.65, 3.94}, {FormatId::int8, 15.30, 7.88}};
  const KeptCounts cr4 = nominal_unstructured(cfg, sparsity_for_cr(4));
  const KeptCounts two_four = nominal_2to4(cfg);
  std::string got;
  for (const Cell& cell : target) {
    const std::string name(format_name(cell.id));
    const double dense = compression_report(cfg, {}, cell.id).model_cr;  // 32 / bits
    for (const auto& [label, kept, want] :
         {std::tuple{"CR4", &cr4, cell.cr4}, std::tuple{"2:4", &two_four, cell.two_four}}) {
      const double sparse = compression_report(cfg, *kept, FormatId::fp32).model_cr;
      const double combined = compression_report(cfg, *kept, cell.id).model_cr;
      const double product = sparse * dense;
      c.expect(std::fabs(combined - product) <= 0.01 * product,
               fmt("%s/%s %.4f not within 1%% of %.4f", name.c_str(), label, combined, product));
      c.expect(std::fabs(combined - want) <= 0.05,
               fmt("%s/%s %.4f vs %.2f", name.c_str(), label, combined, want));
      got += fmt("%s%s/%s %.3f", got.empty() ? "" : ", ", name.c_str(), label, combined);
    }
  }
  c.note(got);
  return c.done();
}

float bits_float(std::uint32_t b) { return std::bit_cast<float>(b); }

bool same_float(float a, float b) {
  return (std::isnan(a) && std::isnan(b)) || std::bit_cast<std::uint32_t>(a) == std::bit_cast<std::uint32_t>(b);
}

// Format oracle sweeps and quantizer properties.
Outcome ac6() {
  Checks c;
  const auto t0 = std::chrono::steady_clock::now();
  std::uint64_t compared = 0, mismatches = 0;
  auto probe = [&](float x, int e, int m) {
    ++compared;
    if (!same_float(round_float(x, e, m), testing::soft_round(x, e, m))) ++mismatches;
  };
  // Every upper half with the rounding-relevant lower halves, for both
  // 16-bit layouts and TF32.
  const std::array<std::uint32_t, 6> lows = {0x0000, 0x0001, 0x7FFF, 0x8000, 0x8001, 0xFFFF};
  for (std::uint32_t hi = 0; hi < 0x10000; ++hi) {
    for (std::uint32_t lo : lows) {
      const float x = bits_float(hi << 16 | lo);
      probe(x, 8, 7);
      probe(x, 5, 10);
      probe(x, 8, 10);
    }
  }
  // Every binary16 value, its float neighbours and both midpoints.
  for (std::uint32_t h = 0; h < 0x10000; ++h) {
    const float v = testing::half_to_float(static_cast<std::uint16_t>(h));
    if (!std::isfinite(v)) continue;
    const float next = testing::half_to_float(static_cast<std::uint16_t>(h + 1 < 0x10000 ? h + 1 : h));
    probe(v, 5, 10);
    probe(std::nextafter(v, INFINITY), 5, 10);
    probe(std::nextafter(v, -INFINITY), 5, 10);
    if (std::isfinite(next)) {
      const float mid = static_cast<float>((static_cast<double>(v) + next) / 2);
      probe(mid, 5, 10);
      probe(std::nextafter(mid, INFINITY), 5, 10);
      probe(std::nextafter(mid, -INFINITY), 5, 10);
    }
  }
  c.expect(mismatches == 0, fmt("%llu of %llu round_float mismatches",
                                static_cast<unsigned long long>(mismatches),
                                static_cast<unsigned long long>(compared)));

  std::mt19937_64 rng(2026);
  std::uniform_real_distribution<float> mant(-1.0f, 1.0f);
  std::uniform_int_distribution<int> expo(-30, 30);
  auto random_value = [&] { return std::ldexp(mant(rng), expo(rng)); };

  // BFP16: full blocks with a spread of magnitudes.
  const int bfp_cases = 120000;
  int bfp_bad_sym = 0, bfp_bad_zero = 0, bfp_bad_idem = 0, bfp_bad_mono = 0, bfp_bad_ref = 0;
  for (int i = 0; i < bfp_cases; ++i) {
    std::vector<float> block(kBfpBlockSize);
    for (float& v : block) v = (rng() % 5 == 0) ? 0.0f : random_value();
    std::vector<float> q = block, neg(block.size());
    quantize_block_fp_inplace(q.data(), q.size(), 1);
    for (std::size_t k = 0; k < block.size(); ++k) neg[k] = -block[k];
    std::vector<float> qn = neg, qq = q;
    quantize_block_fp_inplace(qn.data(), qn.size(), 1);
    quantize_block_fp_inplace(qq.data(), qq.size(), 1);
    const std::vector<float> ref = testing::reference_block_fp(block);
    for (std::size_t k = 0; k < block.size(); ++k) {
      if (!same_float(qn[k], -q[k])) ++bfp_bad_sym;
      if (block[k] == 0.0f && q[k] != 0.0f) ++bfp_bad_zero;
      if (!same_float(qq[k], q[k])) ++bfp_bad_idem;
      if (!same_float(ref[k], q[k])) ++bfp_bad_ref;
      for (std::size_t j = 0; j < block.size(); ++j) {
        if (block[k] <= block[j] && q[k] > q[j]) ++bfp_bad_mono;
      }
    }
  }
  std::vector<float> zeros(kBfpBlockSize, 0.0f);
  quantize_block_fp_inplace(zeros.data(), zeros.size(), 1);
  for (float z : zeros) c.expect(z == 0.0f, "all-zero BFP block");
  c.expect(bfp_bad_sym == 0, fmt("BFP16 sign symmetry %d", bfp_bad_sym));
  c.expect(bfp_bad_zero == 0, fmt("BFP16 zero exactness %d", bfp_bad_zero));
  c.expect(bfp_bad_idem == 0, fmt("BFP16 idempotence %d", bfp_bad_idem));
  c.expect(bfp_bad_mono == 0, fmt("BFP16 monotonicity %d", bfp_bad_mono));
  c.expect(bfp_bad_ref == 0, fmt("BFP16 reference %d", bfp_bad_ref));

  // INT8 with random scales.
  const int int_cases = 200000;
  int int_bad_sym = 0, int_bad_zero = 0, int_bad_idem = 0, int_bad_mono = 0;
  for (int i = 0; i < int_cases; ++i) {
    const IntQuantParams p = int8_params_from_max_abs(std::fabs(random_value()) + 1e-20f);
    const float x = random_value(), y = random_value();
    const std::int8_t qx = quantize_int8(x, p);
    if (quantize_int8(-x, p) != -qx) ++int_bad_sym;
    if (quantize_int8(0.0f, p) != 0 || fake_quantize_int8(0.0f, p) != 0.0f) ++int_bad_zero;
    const float fx = fake_quantize_int8(x, p);
    if (fake_quantize_int8(fx, p) != fx) ++int_bad_idem;
    if (x <= y && qx > quantize_int8(y, p)) ++int_bad_mono;
  }
  c.expect(int_bad_sym == 0, fmt("INT8 sign symmetry %d", int_bad_sym));
  c.expect(int_bad_zero == 0, fmt("INT8 zero exactness %d", int_bad_zero));
  c.expect(int_bad_idem == 0, fmt("INT8 idempotence %d", int_bad_idem));
  c.expect(int_bad_mono == 0, fmt("INT8 monotonicity %d", int_bad_mono));

  const double secs = seconds_since(t0);
  c.expect(secs < 60.0, fmt("runtime %.1fs", secs));
  c.note(fmt("%llu float probes, %llu mismatches, %d BFP16 blocks, %d INT8 cases, %.1fs",
             static_cast<unsigned long long>(compared), static_cast<unsigned long long>(mismatches),
             bfp_cases, int_cases, secs));
  return c.done();
}

// Fast generation, causality and receptive field.
Outcome ac7() {
  Checks c;
  const auto t0 = std::chrono::steady_clock::now();
  {
    const ModelConfig cfg = ModelConfig::desk();
    const Parameters p = build(cfg, 7);
    const ParametersD pd = p.cast<double>();
    FeatureMatrix f = synth_dataset(5, 1, 0.05)[0].features;
    const InferenceModel model(p, PrecisionContext{});
    GenerationState st = model.start(f, 11);
    std::vector<int> codes;
    double gap_fp32 = 0.0, gap_exact = 0.0;
    for (int t = 0; t < 50; ++t) {
      std::vector<float> fast;
      codes.push_back(st.step(&fast));
      // Re-evaluate the whole history from scratch.
      const Tensor naive = model.forward(f, codes);
      const TensorD exact = forward_exact(pd, Segment{f, codes});
      for (std::size_t a = 0; a < fast.size(); ++a) {
        gap_fp32 = std::max(gap_fp32, std::fabs(static_cast<double>(fast[a]) - naive.at(a, t)));
        gap_exact = std::max(gap_exact, std::fabs(fast[a] - exact.at(a, t)));
      }
    }
    c.expect(gap_fp32 < 1e-5, fmt("fast vs naive %.3g", gap_fp32));
    c.expect(gap_exact < 1e-5, fmt("fast vs double naive %.3g", gap_exact));
    c.note(fmt("50 steps, max gap %.2g (fp32 naive), %.2g (double naive)", gap_fp32, gap_exact));
  }
  {
    const ModelConfig cfg = ModelConfig::paper();
    const Parameters p = build(cfg, 3);
    const InferenceModel model(p, PrecisionContext{});
    const FeatureMatrix f = synth_dataset(6, 1, 0.05)[0].features;  // 800 samples
    std::mt19937 rng(4);
    std::vector<int> codes(f.frames * kHopLength);
    for (int& v : codes) v = static_cast<int>(rng() % 256);
    const Tensor upsampled = model.upsample(f);
    const Tensor base = model.forward_upsampled(upsampled, codes);
    const std::size_t j = 100;
    std::vector<int> moved = codes;
    moved[j] = (moved[j] + 97) % 256;
    const Tensor other = model.forward_upsampled(upsampled, moved);
    std::size_t first = codes.size(), last = 0, count = 0;
    bool causal = true;
    for (std::size_t t = 0; t < codes.size(); ++t) {
      bool changed = false;
      for (std::size_t a = 0; a < 256; ++a) changed = changed || base.at(a, t) != other.at(a, t);
      if (!changed) continue;
      causal = causal && t > j;
      first = std::min(first, t);
      last = std::max(last, t);
      ++count;
    }
    c.expect(causal, "an output at or before the perturbed input changed");
    c.expect(first == j + 1, fmt("first affected output %zu", first));
    c.expect(count == 511 && last - first + 1 == 511, fmt("receptive field %zu", count));
    c.expect(cfg.receptive_field() == 511, "closed-form receptive field");
    c.note(fmt("full-size receptive field %zu samples", count));
  }
  const double secs = seconds_since(t0);
  c.expect(secs < 120.0, fmt("runtime %.1fs", secs));
  c.note(fmt("%.1fs", secs));
  return c.done();
}

ModelConfig tiny() {
  ModelConfig c;
  c.skip_channels = 6;
  c.residual_channels = 4;
  c.audio_channels = 16;
  c.layers = 3;
  c.dilation_cycle = 2;
  c.mel_bins = 5;
  c.upsample_kernel = 8;
  c.upsample_stride = 4;
  return c;
}

Example tiny_clip(const ModelConfig& cfg, std::size_t frames, std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(-0.8f, 0.8f);
  Example ex;
  ex.features = FeatureMatrix(frames, static_cast<std::size_t>(cfg.mel_bins));
  for (float& v : ex.features.data) v = u(rng);
  ex.audio.samples.resize(frames * static_cast<std::size_t>(cfg.upsample_stride));
  for (std::size_t i = 0; i < ex.audio.samples.size(); ++i) {
    ex.audio.samples[i] = 0.6f * std::sin(0.7f * static_cast<float>(i)) + 0.1f * u(rng);
  }
  return ex;
}

// End-to-end gradient against central differences.
Outcome ac8() {
  Checks c;
  const auto t0 = std::chrono::steady_clock::now();
  const ModelConfig cfg = tiny();
  const ParametersD p = build(cfg, 5).cast<double>();
  const std::vector<Segment> batch = {sample_segment(tiny_clip(cfg, 6, 1), 1, 24, cfg),
                                      sample_segment(tiny_clip(cfg, 6, 2), 2, 24, cfg)};
  ParametersD g;
  loss_and_gradients(p, batch, &g);
  std::vector<std::string> names;
  p.for_each([&](const std::string& n, const TensorD&) { names.push_back(n); });
  std::mt19937 rng(21);
  const double h = 1e-5;
  int probes = 0, compared = 0;
  double worst = 0.0;
  for (; probes < 200; ++probes) {
    const std::string& name = names[rng() % names.size()];
    const std::size_t i = rng() % p.find(name)->numel();
    ParametersD plus = p, minus = p;
    plus.find(name)->data[i] += h;
    minus.find(name)->data[i] -= h;
    const double fd = (loss_and_gradients(plus, batch, nullptr) -
                       loss_and_gradients(minus, batch, nullptr)) / (2 * h);
    const double an = g.find(name)->data[i];
    const double scale = std::max(std::fabs(an), std::fabs(fd));
    if (scale < 1e-8) continue;  // both vanish
    const double rel = std::fabs(an - fd) / scale;
    worst = std::max(worst, rel);
    c.expect(rel < 1e-3, fmt("%s[%zu] rel %.3g", name.c_str(), i, rel));
    ++compared;
  }
  c.expect(compared >= 100, fmt("only %d nonzero probes", compared));
  const double secs = seconds_since(t0);
  c.expect(secs < 120.0, fmt("runtime %.1fs", secs));
  c.note(fmt("%d probes, %d compared, worst rel %.2g, %.1fs", probes, compared, worst, secs));
  return c.done();
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ls(line);
  for (std::string cell; std::getline(ls, cell, '\t');) out.push_back(cell);
  return out;
}

// Iterative pruning to 75% over a 1000-step desk run.
Outcome ac9() {
  Checks c;
  const auto t0 = std::chrono::steady_clock::now();
  const ModelConfig cfg = ModelConfig::desk();
  const Dataset data = synth_dataset(9, 4, 0.5);
  TrainConfig tc;
  tc.steps = 1000;
  tc.batch_size = 1;
  tc.segment_samples = 400;
  tc.seed = 9;
  const PruneSchedule sch = schedule_for(0.75, tc.steps, 10);
  TrainOptions opts;
  opts.schedules = uniform_schedules(sch);
  testing::TempDir dir("ac9");
  opts.metrics_log = dir / "metrics.tsv";
  const TrainResult r = train(build(cfg, 1), tc, data, opts);
  c.expect(r.steps_run == 1000, fmt("ran %ld steps", r.steps_run));

  std::map<std::string, std::uint64_t> numel;
  r.params.for_each([&](const std::string& n, const Tensor& t) { numel[n] = t.numel(); });

  // Every 10th step fires, with the scheduled target and exact popcounts.
  c.expect(r.events.size() == 100, fmt("%zu events", r.events.size()));
  std::map<long, std::map<std::string, double>> group_trace;
  for (std::size_t e = 0; e < r.events.size(); ++e) {
    const PruneEvent& ev = r.events[e];
    c.expect(ev.step == 10 * static_cast<long>(e + 1), fmt("event at step %ld", ev.step));
    const double s = schedule_sparsity(ev.step, sch);
    std::map<std::string, std::pair<std::uint64_t, std::uint64_t>> groups;  // zeros, numel
    for (const auto& [name, target] : ev.target) {
      c.expect(target == s, fmt("%s target %.6f at %ld", name.c_str(), target, ev.step));
      const std::uint64_t n = numel.at(name);
      const std::uint64_t want = n - static_cast<std::uint64_t>(std::llround(s * static_cast<double>(n)));
      c.expect(ev.kept.at(name) == want,
               fmt("%s kept %llu at %ld", name.c_str(),
                   static_cast<unsigned long long>(ev.kept.at(name)), ev.step));
      auto& gz = groups[layer_group(name)];
      gz.first += n - ev.kept.at(name);
      gz.second += n;
    }
    c.expect(ev.target.size() == r.masks.size(), fmt("event %ld covers %zu tensors", ev.step, ev.target.size()));
    for (const auto& [g, zn] : groups) {
      group_trace[ev.step][g] = static_cast<double>(zn.first) / static_cast<double>(zn.second);
    }
  }

  std::map<std::string, std::pair<std::size_t, std::uint64_t>> group_size;  // tensors, numel
  for (const auto& [name, m] : r.masks) {
    auto& gs = group_size[layer_group(name)];
    ++gs.first;
    gs.second += m.numel();
  }

  // The metrics trace agrees with the events and the schedule.
  std::ifstream log(dir / "metrics.tsv");
  std::string line;
  std::getline(log, line);
  const std::vector<std::string> header = split_tabs(line);
  int rows = 0, traced = 0;
  double worst = -1.0;
  while (std::getline(log, line)) {
    ++rows;
    const std::vector<std::string> cells = split_tabs(line);
    const long step = std::stol(cells.at(0));
    const auto it = group_trace.find(step);
    if (it == group_trace.end()) continue;
    ++traced;
    for (std::size_t k = 2; k < cells.size(); ++k) {
      const std::string group = header.at(k).substr(std::string("sparsity_").size());
      const double logged = std::stod(cells[k]);
      c.expect(std::fabs(logged - it->second.at(group)) < 1e-12,
               fmt("trace %s at %ld", group.c_str(), step));
      // Each tensor rounds its drop count by at most half a weight.
      const double slack = 0.5 * static_cast<double>(group_size.at(group).first) /
                           static_cast<double>(group_size.at(group).second);
      worst = std::max(worst, std::fabs(logged - schedule_sparsity(step, sch)) - slack);
    }
  }
  c.expect(rows == 1000, fmt("%d metric rows", rows));
  c.expect(traced == 100, fmt("%d traced events", traced));
  c.expect(worst <= 1e-12, fmt("trace exceeds schedule rounding by %.3g", worst));

  // Final checkpoint: masked weights are exactly zero after a round trip.
  Checkpoint ck;
  ck.params = r.params;
  ck.masks = r.masks;
  ck.schedules = opts.schedules;
  ck.step = r.steps_run;
  write_checkpoint(dir / "final.wnck", ck);
  const Checkpoint back = read_checkpoint(dir / "final.wnck");
  std::uint64_t nonzero = 0, wrong_count = 0;
  for (const auto& [name, m] : back.masks) {
    const Tensor& t = *back.params.find(name);
    for (std::size_t i = 0; i < t.numel(); ++i) {
      if (m.keep[i] == 0 && std::bit_cast<std::uint32_t>(t.data[i]) != 0) ++nonzero;
    }
    const std::uint64_t n = t.numel();
    if (m.kept() != n - static_cast<std::uint64_t>(std::llround(0.75 * static_cast<double>(n)))) ++wrong_count;
  }
  c.expect(back.masks.size() == r.masks.size() && !back.masks.empty(), "masks survive the round trip");
  c.expect(nonzero == 0, fmt("%llu masked weights nonzero", static_cast<unsigned long long>(nonzero)));
  c.expect(wrong_count == 0, fmt("%llu tensors off target", static_cast<unsigned long long>(wrong_count)));
  const auto problems = verify_masks(back.params, back.masks);
  c.expect(problems.empty(), problems.empty() ? "" : problems.front());

  // 2:4 on the trained model, through the CLI verify suite as well.
  Checkpoint st = back;
  st.masks = prune_all_2to4(st.params);
  const auto st_problems = verify_masks(st.params, st.masks);
  c.expect(st_problems.empty(), st_problems.empty() ? "" : st_problems.front());
  std::uint64_t groups = 0;
  for (const auto& [name, m] : st.masks) groups += m.numel() / 4;
  write_checkpoint(dir / "two_four.wnck", st);
  const auto cli = testing::run_cli("verify --checkpoint \"" + (dir / "two_four.wnck").string() + "\"");
  c.expect(cli.exit_code == 0, "CLI verify of the 2:4 checkpoint: " + cli.output);

  const double secs = seconds_since(t0);
  c.expect(secs < 600.0, fmt("runtime %.0fs", secs));
  c.note(fmt("100 events, final loss %.3f, %llu 2:4 groups, %.0fs", r.losses.back(),
             static_cast<unsigned long long>(groups), secs));
  return c.done();
}

// Evaluation under reduced precision on an overfit model.
Outcome ac10() {
  Checks c;
  const auto t0 = std::chrono::steady_clock::now();
  const ModelConfig cfg = ModelConfig::desk();
  const Dataset data = {sine_example(440.0, 1.0, 0.5)};
  TrainConfig tc;
  tc.steps = 300;
  tc.batch_size = 1;
  tc.segment_samples = 1600;
  tc.seed = 3;
  const Parameters init = build(cfg, 1);
  const double initial = evaluate(init, data, PrecisionContext{});
  const TrainResult r = train(init, tc, data);
  const double fp32 = evaluate(r.params, data, PrecisionContext{FormatId::fp32});
  const double tf32 = evaluate(r.params, data, PrecisionContext{FormatId::tf32});
  const double bf16 = evaluate(r.params, data, PrecisionContext{FormatId::bfloat16});
  const double fp16 = evaluate(r.params, data, PrecisionContext{FormatId::fp16_32});
  c.expect(fp32 < 0.1 * initial, fmt("not overfit: CE %.4f from %.4f", fp32, initial));
  c.expect(std::fabs(tf32 - fp32) < 1e-3, fmt("TF32 gap %.3g", tf32 - fp32));
  c.expect(std::fabs(bf16 - fp32) < 5e-2, fmt("bfloat16 gap %.3g", bf16 - fp32));
  c.expect(std::fabs(fp16 - fp32) < 5e-2, fmt("FP16.32 gap %.3g", fp16 - fp32));
  bool refused = false;
  try {
    evaluate(r.params, data, PrecisionContext{FormatId::int8});
  } catch (const CalibrationRequired&) {
    refused = true;
  }
  c.expect(refused, "INT8 evaluated without calibration");
  testing::TempDir dir("ac10");
  Checkpoint ck;
  ck.params = r.params;
  write_checkpoint(dir / "fit.wnck", ck);
  const auto cli = testing::run_cli("quantize --format INT8 --checkpoint \"" +
                                    (dir / "fit.wnck").string() + "\" --out \"" +
                                    (dir / "q.wnck").string() + "\"");
  c.expect(cli.exit_code == 2, fmt("CLI INT8 without calibration exited %d", cli.exit_code));
  const double secs = seconds_since(t0);
  c.expect(secs < 300.0, fmt("runtime %.0fs", secs));
  c.note(fmt("CE init %.3f, FP32 %.6f, TF32 %+.2g, bfloat16 %+.2g, FP16.32 %+.2g, %.0fs", initial,
             fp32, tf32 - fp32, bf16 - fp32, fp16 - fp32, secs));
  return c.done();
}

// Bit-exact I/O and mu-law round trips.
Outcome ac11() {
  Checks c;
  testing::TempDir dir("ac11");
  const Dataset data = synth_dataset(11, 2, 0.5);

  AudioClip clip;
  std::mt19937 rng(5);
  for (int i = 0; i < 16000; ++i) {
    clip.samples.push_back(static_cast<float>(static_cast<std::int16_t>(rng())) / 32768.0f);
  }
  write_wav(dir / "a.wav", clip);
  const auto wav = read_file(dir / "a.wav");
  const AudioClip wav_back = read_wav(dir / "a.wav");
  c.expect(wav_back.samples == clip.samples, "WAV samples");
  c.expect(encode_wav(wav_back) == wav, "WAV bytes");

  write_features(dir / "a.wnf", data[0].features);
  const FeatureMatrix fm = read_features(dir / "a.wnf");
  c.expect(std::memcmp(fm.data.data(), data[0].features.data.data(), 4 * fm.data.size()) == 0 &&
               fm.frames == data[0].features.frames,
           "WNF1 values");
  write_features(dir / "b.wnf", fm);
  c.expect(read_file(dir / "a.wnf") == read_file(dir / "b.wnf"), "WNF1 bytes");

  Checkpoint ck;
  ck.params = build(ModelConfig::paper(), 2);
  ck.masks = {};
  {
    Parameters pruned = ck.params;
    ck.masks = prune_all_2to4(pruned);
    ck.params = pruned;
  }
  ck.seed = 2;
  ck.metadata["note"] = "round trip";
  const auto bytes = encode_checkpoint(ck);
  const Checkpoint back = decode_checkpoint(bytes);
  bool same = back.masks == ck.masks && back.seed == ck.seed && back.metadata == ck.metadata;
  ck.params.for_each([&](const std::string& n, const Tensor& t) {
    const Tensor* o = back.params.find(n);
    same = same && o != nullptr && o->shape == t.shape &&
           std::memcmp(o->data.data(), t.data.data(), 4 * t.numel()) == 0;
  });
  c.expect(same, "checkpoint contents");
  c.expect(encode_checkpoint(back) == bytes, "checkpoint bytes");

  int code_errors = 0;
  for (int code = 0; code < 256; ++code) code_errors += mulaw_encode(mulaw_decode(code)) != code;
  c.expect(code_errors == 0, fmt("%d mu-law codes", code_errors));
  c.expect(mulaw_decode(mulaw_silence_code()) == 0.0f, "silence decodes to 0");
  double worst = 0.0;
  const int grid = 200001;
  for (int i = 0; i < grid; ++i) {
    const float x = -1.0f + 2.0f * static_cast<float>(i) / (grid - 1);
    worst = std::max(worst, static_cast<double>(std::fabs(mulaw_decode(mulaw_encode(x)) - x)));
  }
  c.expect(worst < 0.03, fmt("mu-law amplitude error %.4f", worst));
  c.note(fmt("256 codes exact, amplitude error %.4f over %d points, checkpoint %zu bytes", worst,
             grid, bytes.size()));
  return c.done();
}

}  // namespace

int main(int argc, char** argv) {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"AC1", ac1}, {"AC2", ac2}, {"AC3", ac3}, {"AC4", ac4},   {"AC5", ac5},  {"AC6", ac6},
      {"AC7", ac7}, {"AC8", ac8}, {"AC9", ac9}, {"AC10", ac10}, {"AC11", ac11}};
  std::string only = argc > 1 ? argv[1] : "";
  bool all_pass = true, matched = false;
  for (const auto& [name, run] : criteria) {
    if (!only.empty() && only != name) continue;
    matched = true;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all_pass = all_pass && o.pass;
    std::printf("%-5s %s  %s\n", name.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  if (!matched) {
    std::fprintf(stderr, "unknown criterion %s\n", only.c_str());
    return 2;
  }
  return all_pass ? 0 : 1;
}
