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

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <vector>

#include "test_util.hpp"
#include "wavenet/training.hpp"

using namespace wavenet;

namespace {

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
  ex.name = "clip" + std::to_string(seed);
  ex.features = FeatureMatrix(frames, static_cast<std::size_t>(cfg.mel_bins));
  for (float& v : ex.features.data) v = u(rng);
  ex.audio.samples.resize(frames * static_cast<std::size_t>(cfg.upsample_stride));
  for (std::size_t i = 0; i < ex.audio.samples.size(); ++i) {
    ex.audio.samples[i] = 0.6f * std::sin(0.7f * static_cast<float>(i)) + 0.1f * u(rng);
  }
  return ex;
}

double ce_oracle(const Tensor& logits, const std::vector<int>& targets) {
  long double total = 0.0L;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    long double sum = 0.0L;
    for (std::size_t a = 0; a < logits.dim(0); ++a) sum += std::exp(static_cast<long double>(logits.at(a, t)));
    total += std::log(sum) - logits.at(static_cast<std::size_t>(targets[t]), t);
  }
  return static_cast<double>(total / targets.size());
}

}  // namespace

TEST_CASE("train config") {
  const TrainConfig c;
  CHECK(c.learning_rate == 1e-3);
  CHECK(c.beta1 == 0.9);
  CHECK(c.beta2 == 0.999);
  CHECK(c.epsilon == 1e-8);
  CHECK(c.batch_size == 16);
  CHECK(c.segment_samples == 16000);
  TrainConfig bad;
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.beta2 = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("cross entropy") {
  const Tensor uniform({256, 3}, 0.25f);
  const std::vector<int> t3 = {0, 17, 255};
  CHECK(cross_entropy(uniform, t3) == doctest::Approx(std::log(256.0)).epsilon(1e-12));
  CHECK(std::log(256.0) == doctest::Approx(5.545).epsilon(1e-4));

  Tensor onehot({8, 2}, -50.0f);
  onehot.at(3, 0) = 50.0f;
  onehot.at(5, 1) = 50.0f;
  CHECK(cross_entropy(onehot, std::vector<int>{3, 5}) < 1e-30);

  std::mt19937 rng(1);
  std::normal_distribution<float> n(0.0f, 4.0f);
  Tensor logits({32, 50});
  for (float& v : logits.data) v = n(rng);
  std::vector<int> targets(50);
  for (std::size_t i = 0; i < 50; ++i) targets[i] = static_cast<int>((i * 7) % 32);
  CHECK(std::fabs(cross_entropy(logits, targets) - ce_oracle(logits, targets)) < 1e-6);
  CHECK(cross_entropy(logits.cast<double>(), targets) ==
        doctest::Approx(ce_oracle(logits, targets)).epsilon(1e-9));

  CHECK_THROWS_AS(cross_entropy(logits, std::vector<int>(49, 0)), ShapeError);
}

TEST_CASE("segment sampling") {
  const ModelConfig cfg = ModelConfig::desk();
  const Example ex = sine_example(217.3, 0.5, 0.5);  // 40 frames
  SUBCASE("short clips are padded with silence") {
    const Segment s = sample_segment(ex, 1, 16000, cfg);
    CHECK(s.codes.size() == 16000);
    CHECK(s.features.frames == 80);
    for (std::size_t t = 8000; t < 16000; ++t) REQUIRE(s.codes[t] == mulaw_silence_code());
    for (std::size_t f = 40; f < 80; ++f) {
      for (std::size_t b = 0; b < 80; ++b) REQUIRE(s.features.at(f, b) == 0.0f);
    }
  }
  SUBCASE("windows are frame aligned") {
    std::set<int> starts;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const Segment s = sample_segment(ex, seed, 1000, cfg);
      // Recover the start frame from features and codes.
      int start = -1;
      for (std::size_t f0 = 0; f0 + 5 <= 40 && start < 0; ++f0) {
        bool match = true;
        for (std::size_t b = 0; b < 80 && match; ++b) {
          match = s.features.at(0, b) == ex.features.at(f0, b) &&
                  s.features.at(4, b) == ex.features.at(f0 + 4, b);
        }
        for (std::size_t t = 0; t < 1000 && match; ++t) {
          match = s.codes[t] == mulaw_encode(ex.audio.samples[f0 * 200 + t]);
        }
        if (match) start = static_cast<int>(f0);
      }
      REQUIRE(start >= 0);
      starts.insert(start);
    }
    CHECK(starts.size() > 10);
  }
  CHECK_THROWS_AS(sample_segment(ex, 1, 150, cfg), ConfigError);
}

TEST_CASE("adam") {
  const ModelConfig cfg = tiny();
  const TrainConfig tc;
  SUBCASE("zero gradients leave parameters unchanged") {
    Parameters p = build(cfg, 1);
    MaskSet masks;
    masks["out.weight"] = prune_unstructured("out.weight", p.out_w, 0.5);
    apply_masks(p, masks);
    const Parameters before = p;
    AdamState st = make_adam_state(p);
    adam_step(p, zeros_like(p.cast<double>()), st, tc, &masks);
    bool same = true;
    p.for_each([&](const std::string& n, const Tensor& t) { same = same && t == *before.find(n); });
    CHECK(same);
    CHECK(st.step == 1);
  }
  SUBCASE("first step closed form") {
    Parameters p = build(cfg, 2);
    const Parameters before = p;
    ParametersD g = zeros_like(p.cast<double>());
    g.end_w.data[3] = 0.37;
    g.embedding.data[1] = -2.5;
    AdamState st = make_adam_state(p);
    adam_step(p, g, st, tc);
    const double expect_end = before.end_w.data[3] - 1e-3 * 0.37 / (0.37 + 1e-8);
    const double expect_emb = before.embedding.data[1] + 1e-3 * 2.5 / (2.5 + 1e-8);
    CHECK(p.end_w.data[3] == doctest::Approx(expect_end).epsilon(1e-6));
    CHECK(p.embedding.data[1] == doctest::Approx(expect_emb).epsilon(1e-6));
    CHECK(p.end_w.data[4] == before.end_w.data[4]);
  }
  SUBCASE("convex quadratic descends") {
    Parameters p = build(cfg, 3);
    AdamState st = make_adam_state(p);
    auto loss = [](const Parameters& q) {
      double s = 0.0;
      for (float v : q.end_w.data) s += (v - 0.5) * (v - 0.5);
      return s;
    };
    const double start = loss(p);
    TrainConfig fast = tc;
    fast.learning_rate = 1e-2;
    for (int i = 0; i < 100; ++i) {
      ParametersD g = zeros_like(p.cast<double>());
      for (std::size_t k = 0; k < p.end_w.numel(); ++k) {
        g.end_w.data[k] = 2.0 * (p.end_w.data[k] - 0.5);
      }
      adam_step(p, g, st, fast);
    }
    CHECK(loss(p) < 0.1 * start);
  }
  SUBCASE("non-finite gradients abort before any update") {
    Parameters p = build(cfg, 4);
    const Parameters before = p;
    ParametersD g = zeros_like(p.cast<double>());
    g.layers[1].skip_w.data[0] = std::nan("");
    AdamState st = make_adam_state(p);
    CHECK_THROWS_AS(adam_step(p, g, st, tc), DivergenceError);
    CHECK(st.step == 0);
    CHECK(p.layers[1].skip_w == before.layers[1].skip_w);
  }
}

TEST_CASE("end-to-end gradient against finite differences") {
  const ModelConfig cfg = tiny();
  const ParametersD p = build(cfg, 5).cast<double>();
  const std::vector<Segment> batch = {
      sample_segment(tiny_clip(cfg, 6, 1), 1, 24, cfg),
      sample_segment(tiny_clip(cfg, 6, 2), 2, 24, cfg)};
  ParametersD g;
  loss_and_gradients(p, batch, &g);

  std::vector<std::string> names;
  p.for_each([&](const std::string& n, const TensorD&) { names.push_back(n); });
  std::mt19937 rng(9);
  const double h = 1e-5;
  int checked = 0;
  for (int probe = 0; probe < 60; ++probe) {
    const std::string& name = names[rng() % names.size()];
    const TensorD& t = *p.find(name);
    const std::size_t i = rng() % t.numel();
    ParametersD plus = p, minus = p;
    plus.find(name)->data[i] += h;
    minus.find(name)->data[i] -= h;
    const double fd = (loss_and_gradients(plus, batch, nullptr) -
                       loss_and_gradients(minus, batch, nullptr)) / (2 * h);
    const double an = g.find(name)->data[i];
    CAPTURE(name);
    CAPTURE(i);
    if (std::fabs(fd) < 1e-9 && std::fabs(an) < 1e-9) continue;
    CHECK(std::fabs(an - fd) / std::max(std::fabs(an), std::fabs(fd)) < 1e-3);
    ++checked;
  }
  CHECK(checked > 30);
}

TEST_CASE("fresh model starts near a uniform prediction") {
  const ModelConfig cfg = ModelConfig::desk();
  const Dataset data = synth_dataset(3, 2, 0.25);
  const double ce = evaluate(build(cfg, 1), data, PrecisionContext{});
  CHECK(ce == doctest::Approx(std::log(256.0)).epsilon(0.05));
  CHECK_THROWS_AS(evaluate(build(cfg, 1), data, PrecisionContext{FormatId::int8}),
                  CalibrationRequired);
}

TEST_CASE("training is deterministic and honours the schedule") {
  const ModelConfig cfg = tiny();
  const Dataset data = {tiny_clip(cfg, 10, 1), tiny_clip(cfg, 12, 2)};
  TrainConfig tc;
  tc.steps = 40;
  tc.batch_size = 2;
  tc.segment_samples = 16;
  tc.seed = 77;
  TrainOptions opts;
  opts.schedules = uniform_schedules(schedule_for(0.75, tc.steps, 5));
  testing::TempDir dir("train");
  opts.metrics_log = dir / "a.tsv";
  const TrainResult a = train(build(cfg, 1), tc, data, opts);
  opts.metrics_log = dir / "b.tsv";
  const TrainResult b = train(build(cfg, 1), tc, data, opts);
  CHECK(a.steps_run == 40);
  CHECK(a.losses == b.losses);
  CHECK(testing::run_command("cmp " + (dir / "a.tsv").string() + " " +
                             (dir / "b.tsv").string()).exit_code == 0);

  std::ifstream log(dir / "a.tsv");
  std::string header;
  std::getline(log, header);
  CHECK(header ==
        "step\tloss\tsparsity_upsample\tsparsity_dilation\tsparsity_conditional\t"
        "sparsity_residual\tsparsity_skip\tsparsity_out");
  int lines = 0;
  for (std::string line; std::getline(log, line);) ++lines;
  CHECK(lines == 40);

  CHECK(a.events.size() == 8);
  for (const PruneEvent& ev : a.events) {
    CHECK(ev.step % 5 == 0);
    for (const auto& [name, s] : ev.target) {
      CHECK(s == schedule_sparsity(ev.step, opts.schedules->at(layer_group(name))));
    }
  }
  for (const auto& [name, m] : a.masks) {
    const Tensor& t = *a.params.find(name);
    CHECK(m.kept() == t.numel() - static_cast<std::size_t>(std::llround(0.75 * t.numel())));
    for (std::size_t i = 0; i < t.numel(); ++i) {
      if (m.keep[i] == 0) REQUIRE(t.data[i] == 0.0f);
    }
  }
  CHECK(verify_masks(a.params, a.masks).empty());

  TrainOptions both = opts;
  both.fixed_masks = a.masks;
  CHECK_THROWS_AS(train(build(cfg, 1), tc, data, both), ConfigError);
  CHECK_THROWS_AS(train(build(cfg, 1), tc, Dataset{}), ConfigError);
}

TEST_CASE("one-shot 2:4 procedure") {
  const ModelConfig cfg = tiny();
  const Dataset data = {tiny_clip(cfg, 10, 3)};
  TrainConfig tc;
  tc.steps = 60;
  tc.batch_size = 1;
  tc.segment_samples = 40;
  tc.learning_rate = 3e-3;
  const OneShotResult r = one_shot_2to4_procedure(build(cfg, 2), tc, data);
  CHECK(r.retrain_run.masks == r.masks);
  CHECK(verify_masks(r.retrained, r.masks).empty());
  const double pruned = evaluate(r.pruned, data, PrecisionContext{});
  const double retrained = evaluate(r.retrained, data, PrecisionContext{});
  CHECK(retrained <= pruned);
}

TEST_CASE("a desk model fits a sine clip") {
  const ModelConfig cfg = ModelConfig::desk();
  const Dataset data = {sine_example(440.0, 1.0, 0.5)};
  TrainConfig tc;
  tc.steps = 500;
  tc.batch_size = 1;
  tc.segment_samples = 400;
  tc.seed = 1;
  const Parameters init = build(cfg, 1);
  const double before = evaluate(init, data, PrecisionContext{});
  const TrainResult r = train(init, tc, data);
  const double after = evaluate(r.params, data, PrecisionContext{});
  CHECK(after < 0.5 * before);
  CHECK(after < std::log(256.0) / 4.0);
}
