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

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wavenet/audio_io.hpp"
#include "wavenet/compression.hpp"
#include "wavenet/model.hpp"

namespace wavenet {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 16;
  std::size_t segment_samples = kSampleRate;  // one second
  long steps = 1000;
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

struct AdamState {
  ParametersD m;
  ParametersD v;
  long step = 0;
};

AdamState make_adam_state(const Parameters& params);

struct Segment {
  FeatureMatrix features;
  std::vector<int> codes;  // targets; the input at t is codes[t-1]
};

// Frame-aligned random window; short clips are right-padded with zeros.
Segment sample_segment(const Example& clip, Rng& rng, std::size_t samples,
                       const ModelConfig& cfg);
Segment sample_segment(const Example& clip, std::uint64_t seed,
                       std::size_t samples, const ModelConfig& cfg);

// Whole clip, codes trimmed or padded to the conditioned length.
Segment full_clip(const Example& clip, const ModelConfig& cfg);

// Mean over time of -log softmax(logits)[target], natural log.
double cross_entropy(const Tensor& logits, std::span<const int> targets);
double cross_entropy(const TensorD& logits, std::span<const int> targets);

// Exact double-precision forward (no format emulation).
TensorD forward_exact(const ParametersD& params, const Segment& seg);

// Mean CE over the batch and, when `grads` is given, its gradient.
double loss_and_gradients(const ParametersD& params,
                          std::span<const Segment> batch, ParametersD* grads);
double loss_and_gradients(const Parameters& params,
                          std::span<const Segment> batch, ParametersD* grads);

ParametersD zeros_like(const ParametersD& params);

// Bias-corrected Adam; masked weights are re-zeroed afterwards. Throws
// DivergenceError on non-finite gradients.
void adam_step(Parameters& params, const ParametersD& grads, AdamState& state,
               const TrainConfig& cfg, const MaskSet* masks = nullptr);

struct TrainOptions {
  // Iterative pruning; absent means dense training.
  std::optional<ScheduleSet> schedules;
  // Masks held fixed throughout (retraining after one-shot pruning).
  std::optional<MaskSet> fixed_masks;
  // Tab-separated log: step, loss, then sparsity per pruned group.
  std::optional<std::filesystem::path> metrics_log;
};

struct TrainResult {
  Parameters params;
  MaskSet masks;
  std::vector<double> losses;
  std::vector<PruneEvent> events;
  long steps_run = 0;
  // Set when training stopped on a non-finite loss; params are the last
  // good values.
  std::optional<std::string> divergence;
};

TrainResult train(Parameters params, const TrainConfig& cfg,
                  const Dataset& data, const TrainOptions& options = {});

// Mean teacher-forced CE per sample over full clips under `ctx`.
double evaluate(const Parameters& params, const Dataset& data,
                const PrecisionContext& ctx,
                const Calibration* calibration = nullptr);

struct OneShotResult {
  Parameters dense;
  Parameters pruned;  // one-shot masks applied, not retrained
  Parameters retrained;
  MaskSet masks;
  TrainResult dense_run;
  TrainResult retrain_run;
};

// Train dense, prune 2:4 once, retrain the same number of steps with the
// masks fixed.
OneShotResult one_shot_2to4_procedure(const Parameters& init,
                                      const TrainConfig& cfg,
                                      const Dataset& data);

}  // namespace wavenet
