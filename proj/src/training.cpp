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

#include "wavenet/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

namespace wavenet {
namespace {

std::size_t as_size(int v) { return static_cast<std::size_t>(v); }

void add_to(TensorD& acc, const TensorD& x, double scale = 1.0) {
  for (std::size_t i = 0; i < acc.numel(); ++i) acc.data[i] += scale * x.data[i];
}

struct LayerCache {
  TensorD input;  // x_i
  TensorD tanh_a, sigm_b, gated;
};

struct ForwardCache {
  TensorD features, cond;
  std::vector<int> inputs;
  std::vector<LayerCache> layers;
  TensorD skip_sum, out, logits;
};

TensorD forward_cached(const ParametersD& p, const Segment& seg,
                       ForwardCache& fc) {
  const ModelConfig& cfg = p.config;
  const std::size_t r = as_size(cfg.residual_channels),
                    s = as_size(cfg.skip_channels),
                    a = as_size(cfg.audio_channels);
  const std::size_t steps = seg.codes.size();
  if (seg.features.bands != as_size(cfg.mel_bins)) {
    throw ShapeError("segment features have " + std::to_string(seg.features.bands) +
                     " bands, model expects " + std::to_string(cfg.mel_bins));
  }
  fc.features = seg.features.channel_major().cast<double>();
  const TensorD up = conv_transpose1d_exact(fc.features, p.upsample_w,
                                            p.upsample_b, cfg.upsample_stride);
  if (up.dim(1) < steps) throw ShapeError("segment features too short");
  fc.cond = TensorD({up.dim(0), steps});
  for (std::size_t c = 0; c < up.dim(0); ++c) {
    std::copy_n(up.row(c).begin(), steps, fc.cond.row(c).begin());
  }

  fc.inputs.resize(steps);
  TensorD x({r, steps});
  for (std::size_t t = 0; t < steps; ++t) {
    const int code = t == 0 ? mulaw_silence_code(cfg.audio_channels) : seg.codes[t - 1];
    if (code < 0 || static_cast<std::size_t>(code) >= a) {
      throw Error("target code " + std::to_string(code) + " out of range");
    }
    fc.inputs[t] = code;
    for (std::size_t c = 0; c < r; ++c) x.at(c, t) = p.embedding.at(as_size(code), c);
  }

  fc.layers.assign(p.layers.size(), {});
  fc.skip_sum = TensorD({s, steps});
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    const auto& lp = p.layers[i];
    LayerCache& lc = fc.layers[i];
    lc.input = x;
    TensorD pre = conv1d_exact(x, lp.dilation_w, &lp.dilation_b,
                               cfg.dilation(static_cast<int>(i)));
    add_to(pre, conv1d_exact(fc.cond, lp.conditional_w, &lp.conditional_b, 1));
    lc.tanh_a = TensorD({r, steps});
    lc.sigm_b = TensorD({r, steps});
    lc.gated = TensorD({r, steps});
    for (std::size_t j = 0; j < r * steps; ++j) {
      const double ta = std::tanh(pre.data[j]);
      const double sb = 1.0 / (1.0 + std::exp(-pre.data[r * steps + j]));
      lc.tanh_a.data[j] = ta;
      lc.sigm_b.data[j] = sb;
      lc.gated.data[j] = ta * sb;
    }
    add_to(fc.skip_sum, conv1d_exact(lc.gated, lp.skip_w, &lp.skip_b, 1));
    if (!lp.residual_w.empty()) {
      add_to(x, conv1d_exact(lc.gated, lp.residual_w, &lp.residual_b, 1));
    }
  }
  TensorD h = fc.skip_sum;
  for (double& v : h.data) v = std::max(v, 0.0);
  fc.out = conv1d_exact<double>(h, p.out_w, nullptr, 1);
  TensorD h2 = fc.out;
  for (double& v : h2.data) v = std::max(v, 0.0);
  fc.logits = conv1d_exact<double>(h2, p.end_w, nullptr, 1);
  return fc.logits;
}

// Adds d(scale * CE)/d(params) into `g`.
void backward(const ParametersD& p, const Segment& seg, const ForwardCache& fc,
              double scale, ParametersD& g) {
  const ModelConfig& cfg = p.config;
  const std::size_t r = as_size(cfg.residual_channels),
                    a = as_size(cfg.audio_channels);
  const std::size_t steps = seg.codes.size();

  TensorD dlogits({a, steps});
  for (std::size_t t = 0; t < steps; ++t) {
    double max = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < a; ++c) max = std::max(max, fc.logits.at(c, t));
    double sum = 0.0;
    for (std::size_t c = 0; c < a; ++c) sum += std::exp(fc.logits.at(c, t) - max);
    for (std::size_t c = 0; c < a; ++c) {
      const double prob = std::exp(fc.logits.at(c, t) - max) / sum;
      const double target = static_cast<int>(c) == seg.codes[t] ? 1.0 : 0.0;
      dlogits.at(c, t) = scale * (prob - target) / static_cast<double>(steps);
    }
  }

  TensorD h2 = fc.out;
  for (double& v : h2.data) v = std::max(v, 0.0);
  ConvGrads<double> ge = conv1d_backward(h2, p.end_w, dlogits, 1);
  add_to(g.end_w, ge.weight);
  TensorD dout = std::move(ge.input);
  for (std::size_t j = 0; j < dout.numel(); ++j) {
    if (fc.out.data[j] <= 0.0) dout.data[j] = 0.0;
  }
  TensorD h1 = fc.skip_sum;
  for (double& v : h1.data) v = std::max(v, 0.0);
  ConvGrads<double> go = conv1d_backward(h1, p.out_w, dout, 1);
  add_to(g.out_w, go.weight);
  TensorD dskip = std::move(go.input);
  for (std::size_t j = 0; j < dskip.numel(); ++j) {
    if (fc.skip_sum.data[j] <= 0.0) dskip.data[j] = 0.0;
  }

  TensorD dcond(fc.cond.shape);
  TensorD dx({r, steps});  // gradient w.r.t. the input of the next layer
  for (std::size_t ii = p.layers.size(); ii-- > 0;) {
    const auto& lp = p.layers[ii];
    auto& lg = g.layers[ii];
    const LayerCache& lc = fc.layers[ii];
    ConvGrads<double> gs = conv1d_backward(lc.gated, lp.skip_w, dskip, 1);
    add_to(lg.skip_w, gs.weight);
    add_to(lg.skip_b, gs.bias);
    TensorD dz = std::move(gs.input);
    if (!lp.residual_w.empty()) {
      ConvGrads<double> gr = conv1d_backward(lc.gated, lp.residual_w, dx, 1);
      add_to(lg.residual_w, gr.weight);
      add_to(lg.residual_b, gr.bias);
      add_to(dz, gr.input);
    } else {
      dx = TensorD({r, steps});
    }
    TensorD dpre({2 * r, steps});
    for (std::size_t j = 0; j < r * steps; ++j) {
      const double ta = lc.tanh_a.data[j], sb = lc.sigm_b.data[j];
      dpre.data[j] = dz.data[j] * sb * (1.0 - ta * ta);
      dpre.data[r * steps + j] = dz.data[j] * ta * sb * (1.0 - sb);
    }
    ConvGrads<double> gd = conv1d_backward(lc.input, lp.dilation_w, dpre,
                                           cfg.dilation(static_cast<int>(ii)));
    add_to(lg.dilation_w, gd.weight);
    add_to(lg.dilation_b, gd.bias);
    add_to(dx, gd.input);
    ConvGrads<double> gc = conv1d_backward(fc.cond, lp.conditional_w, dpre, 1);
    add_to(lg.conditional_w, gc.weight);
    add_to(lg.conditional_b, gc.bias);
    add_to(dcond, gc.input);
  }
  for (std::size_t t = 0; t < steps; ++t) {
    const std::size_t code = as_size(fc.inputs[t]);
    for (std::size_t c = 0; c < r; ++c) g.embedding.at(code, c) += dx.at(c, t);
  }

  const std::size_t length = fc.features.dim(1) * as_size(cfg.upsample_stride);
  TensorD dup({dcond.dim(0), length});
  for (std::size_t c = 0; c < dcond.dim(0); ++c) {
    std::copy(dcond.row(c).begin(), dcond.row(c).end(), dup.row(c).begin());
  }
  ConvGrads<double> gu =
      conv_transpose1d_backward(fc.features, p.upsample_w, dup, cfg.upsample_stride);
  add_to(g.upsample_w, gu.weight);
  add_to(g.upsample_b, gu.bias);
}

int code_at(const AudioClip& audio, std::size_t n, int channels) {
  return n < audio.samples.size() ? mulaw_encode(audio.samples[n], channels)
                                  : mulaw_silence_code(channels);
}

bool all_finite(const ParametersD& g, std::string* bad) {
  bool ok = true;
  g.for_each([&](const std::string& name, const TensorD& t) {
    if (!ok) return;
    for (double v : t.data) {
      if (!std::isfinite(v)) {
        ok = false;
        if (bad != nullptr) *bad = name;
        return;
      }
    }
  });
  return ok;
}

std::map<std::string, double> group_sparsity(const MaskSet& masks) {
  std::map<std::string, std::pair<double, double>> counts;
  for (const auto& [name, m] : masks) {
    auto& c = counts[layer_group(name)];
    c.first += static_cast<double>(m.numel());
    c.second += static_cast<double>(m.numel() - m.kept());
  }
  std::map<std::string, double> out;
  for (const std::string& g : pruned_groups()) {
    const auto it = counts.find(g);
    out[g] = it == counts.end() ? 0.0 : it->second.second / it->second.first;
  }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("Adam epsilon must be positive");
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (segment_samples == 0) throw ConfigError("segment length must be >= 1");
  if (steps < 0) throw ConfigError("step count must be >= 0");
}

ParametersD zeros_like(const ParametersD& params) {
  return allocate_parameters(params.config).cast<double>();
}

AdamState make_adam_state(const Parameters& params) {
  const ParametersD z = zeros_like(params.cast<double>());
  return {z, z, 0};
}

Segment sample_segment(const Example& clip, Rng& rng, std::size_t samples,
                       const ModelConfig& cfg) {
  const auto stride = as_size(cfg.upsample_stride);
  if (samples == 0 || samples % stride != 0) {
    throw ConfigError("segment length " + std::to_string(samples) +
                      " must be a positive multiple of " + std::to_string(stride));
  }
  if (clip.features.bands != as_size(cfg.mel_bins)) {
    throw ShapeError("clip '" + clip.name + "' has " +
                     std::to_string(clip.features.bands) + " bands");
  }
  const std::size_t need = samples / stride;
  const std::size_t avail = clip.features.frames;
  const std::size_t max_start = avail > need ? avail - need : 0;
  const auto start = std::min(
      max_start, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(max_start + 1)));

  Segment seg;
  seg.features = FeatureMatrix(need, clip.features.bands);
  for (std::size_t f = 0; f < need && start + f < avail; ++f) {
    for (std::size_t b = 0; b < clip.features.bands; ++b) {
      seg.features.at(f, b) = clip.features.at(start + f, b);
    }
  }
  seg.codes.resize(samples);
  for (std::size_t t = 0; t < samples; ++t) {
    seg.codes[t] = code_at(clip.audio, start * stride + t, cfg.audio_channels);
  }
  return seg;
}

Segment sample_segment(const Example& clip, std::uint64_t seed,
                       std::size_t samples, const ModelConfig& cfg) {
  Rng rng(seed);
  return sample_segment(clip, rng, samples, cfg);
}

Segment full_clip(const Example& clip, const ModelConfig& cfg) {
  if (clip.features.frames == 0) throw ShapeError("clip '" + clip.name + "' has no frames");
  Segment seg;
  seg.features = clip.features;
  seg.codes.resize(clip.features.frames * as_size(cfg.upsample_stride));
  for (std::size_t t = 0; t < seg.codes.size(); ++t) {
    seg.codes[t] = code_at(clip.audio, t, cfg.audio_channels);
  }
  return seg;
}

double cross_entropy(const TensorD& logits, std::span<const int> targets) {
  if (logits.rank() != 2 || logits.dim(1) != targets.size()) {
    throw ShapeError("cross entropy: logits " + shape_string(logits.shape) +
                     " vs " + std::to_string(targets.size()) + " targets");
  }
  if (targets.empty()) return 0.0;
  const std::size_t a = logits.dim(0);
  double total = 0.0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= a) {
      throw Error("target " + std::to_string(targets[t]) + " out of range");
    }
    double max = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < a; ++c) max = std::max(max, logits.at(c, t));
    double sum = 0.0;
    for (std::size_t c = 0; c < a; ++c) sum += std::exp(logits.at(c, t) - max);
    total += max + std::log(sum) - logits.at(as_size(targets[t]), t);
  }
  return total / static_cast<double>(targets.size());
}

double cross_entropy(const Tensor& logits, std::span<const int> targets) {
  return cross_entropy(logits.cast<double>(), targets);
}

TensorD forward_exact(const ParametersD& params, const Segment& seg) {
  ForwardCache fc;
  return forward_cached(params, seg, fc);
}

double loss_and_gradients(const ParametersD& params,
                          std::span<const Segment> batch, ParametersD* grads) {
  if (batch.empty()) throw ConfigError("empty batch");
  const double scale = 1.0 / static_cast<double>(batch.size());
  if (grads != nullptr) *grads = zeros_like(params);
  double loss = 0.0;
  for (const Segment& seg : batch) {
    ForwardCache fc;
    forward_cached(params, seg, fc);
    loss += scale * cross_entropy(fc.logits, seg.codes);
    if (grads != nullptr) backward(params, seg, fc, scale, *grads);
  }
  return loss;
}

double loss_and_gradients(const Parameters& params,
                          std::span<const Segment> batch, ParametersD* grads) {
  return loss_and_gradients(params.cast<double>(), batch, grads);
}

void adam_step(Parameters& params, const ParametersD& grads, AdamState& state,
               const TrainConfig& cfg, const MaskSet* masks) {
  std::string bad;
  if (!all_finite(grads, &bad)) {
    throw DivergenceError("non-finite gradient in '" + bad + "' at step " +
                          std::to_string(state.step + 1));
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  std::vector<const TensorD*> g;
  std::vector<TensorD*> m, v;
  grads.for_each([&](const std::string&, const TensorD& t) { g.push_back(&t); });
  state.m.for_each([&](const std::string&, TensorD& t) { m.push_back(&t); });
  state.v.for_each([&](const std::string&, TensorD& t) { v.push_back(&t); });
  std::size_t k = 0;
  params.for_each([&](const std::string& name, Tensor& p) {
    const TensorD& gk = *g.at(k);
    TensorD& mk = *m.at(k);
    TensorD& vk = *v.at(k);
    ++k;
    if (gk.shape != p.shape) throw ShapeError("gradient shape mismatch for " + name);
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double gi = gk.data[i];
      mk.data[i] = cfg.beta1 * mk.data[i] + (1.0 - cfg.beta1) * gi;
      vk.data[i] = cfg.beta2 * vk.data[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = mk.data[i] / c1, vhat = vk.data[i] / c2;
      p.data[i] = static_cast<float>(static_cast<double>(p.data[i]) -
                                     cfg.learning_rate * mhat /
                                         (std::sqrt(vhat) + cfg.epsilon));
    }
  });
  if (masks != nullptr) apply_masks(params, *masks);
}

TrainResult train(Parameters params, const TrainConfig& cfg,
                  const Dataset& data, const TrainOptions& options) {
  cfg.validate();
  params.config.validate();
  if (data.empty()) throw ConfigError("training dataset is empty");
  if (options.schedules && options.fixed_masks) {
    throw ConfigError("iterative schedules and fixed masks are exclusive");
  }
  TrainResult result;
  if (options.fixed_masks) {
    result.masks = *options.fixed_masks;
    apply_masks(params, result.masks);
  }
  std::ofstream log;
  if (options.metrics_log) {
    log.open(*options.metrics_log);
    if (!log) throw Error("cannot write metrics log " + options.metrics_log->string());
    log << "step\tloss";
    for (const std::string& g : pruned_groups()) log << "\tsparsity_" << g;
    log << '\n';
  }

  AdamState adam = make_adam_state(params);
  Rng rng(cfg.seed);
  std::vector<Segment> batch(cfg.batch_size);
  for (long step = 1; step <= cfg.steps; ++step) {
    for (Segment& seg : batch) {
      const auto pick = std::min(
          data.size() - 1,
          static_cast<std::size_t>(uniform01(rng) * static_cast<double>(data.size())));
      seg = sample_segment(data[pick], rng, cfg.segment_samples, params.config);
    }
    ParametersD grads;
    const double loss = loss_and_gradients(params, batch, &grads);
    if (!std::isfinite(loss)) {
      result.divergence = "loss became non-finite at step " + std::to_string(step);
      break;
    }
    try {
      // Rejects bad gradients before touching params or moments.
      adam_step(params, grads, adam, cfg, result.masks.empty() ? nullptr : &result.masks);
    } catch (const DivergenceError& e) {
      result.divergence = e.what();
      break;
    }
    if (options.schedules) {
      if (auto ev = iterative_prune_hook(step, params, *options.schedules, result.masks)) {
        result.events.push_back(std::move(*ev));
      }
    }
    result.losses.push_back(loss);
    result.steps_run = step;
    if (log) {
      log << step << '\t' << std::setprecision(17) << loss;
      const auto sparsity = group_sparsity(result.masks);
      for (const std::string& g : pruned_groups()) {
        log << '\t' << std::setprecision(17) << sparsity.at(g);
      }
      log << '\n';
    }
  }
  result.params = std::move(params);
  return result;
}

double evaluate(const Parameters& params, const Dataset& data,
                const PrecisionContext& ctx, const Calibration* calibration) {
  if (data.empty()) throw ConfigError("evaluation dataset is empty");
  const InferenceModel model(params, ctx, calibration);
  double total = 0.0;
  std::size_t count = 0;
  for (const Example& ex : data) {
    const Segment seg = full_clip(ex, params.config);
    const Tensor logits = model.forward(seg.features, seg.codes);
    total += cross_entropy(logits, seg.codes) * static_cast<double>(seg.codes.size());
    count += seg.codes.size();
  }
  return total / static_cast<double>(count);
}

OneShotResult one_shot_2to4_procedure(const Parameters& init,
                                      const TrainConfig& cfg,
                                      const Dataset& data) {
  OneShotResult r;
  r.dense_run = train(init, cfg, data);
  if (r.dense_run.divergence) throw DivergenceError(*r.dense_run.divergence);
  r.dense = r.dense_run.params;
  r.pruned = r.dense;
  r.masks = prune_all_2to4(r.pruned);
  TrainOptions opts;
  opts.fixed_masks = r.masks;
  TrainConfig retrain = cfg;
  retrain.seed = cfg.seed + 1;
  r.retrain_run = train(r.pruned, retrain, data, opts);
  if (r.retrain_run.divergence) throw DivergenceError(*r.retrain_run.divergence);
  r.retrained = r.retrain_run.params;
  return r;
}

}  // namespace wavenet
