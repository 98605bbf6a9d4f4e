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

#include "wavenet/model.hpp"

#include <algorithm>
#include <cmath>

namespace wavenet {
namespace {

std::size_t as_size(int v) { return static_cast<std::size_t>(v); }

void relu(std::span<float> values) {
  for (float& v : values) v = std::max(v, 0.0f);
}

// Columns [0, steps) of a [channels x length] tensor.
Tensor leading_columns(const Tensor& t, std::size_t steps) {
  Tensor out({t.dim(0), steps});
  for (std::size_t c = 0; c < t.dim(0); ++c) {
    std::copy_n(t.row(c).begin(), steps, out.row(c).begin());
  }
  return out;
}

void add_into(Tensor& acc, const Tensor& x, const PrecisionContext& ctx) {
  for (std::size_t i = 0; i < acc.numel(); ++i) {
    acc.data[i] = act_add(acc.data[i], x.data[i], ctx);
  }
}

void add_into(std::span<float> acc, std::span<const float> x,
              const PrecisionContext& ctx) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] = act_add(acc[i], x[i], ctx);
}

struct Uniform {
  Rng rng;
  explicit Uniform(std::uint64_t seed) : rng(seed) {}
  void fill(Tensor& t, double bound) {
    for (float& v : t.data) {
      v = static_cast<float>((2.0 * uniform01(rng) - 1.0) * bound);
    }
  }
};

}  // namespace

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.skip_channels = 32;
  c.residual_channels = 16;
  c.audio_channels = 256;
  c.layers = 4;
  c.dilation_cycle = 2;
  return c;
}

void ModelConfig::validate() const {
  auto positive = [](int v, const char* what) {
    if (v < 1) {
      throw ConfigError(std::string(what) + " must be >= 1, got " +
                        std::to_string(v));
    }
  };
  positive(skip_channels, "skip channels");
  positive(residual_channels, "residual channels");
  positive(audio_channels, "audio channels");
  positive(layers, "layers");
  positive(dilation_cycle, "dilation cycle");
  positive(mel_bins, "mel bins");
  positive(upsample_kernel, "upsample kernel");
  positive(upsample_stride, "upsample stride");
  positive(dilation_kernel, "dilation kernel");
  positive(sample_rate, "sample rate");
  if (audio_channels < 2 || (audio_channels & (audio_channels - 1)) != 0) {
    throw ConfigError("audio channels must be a power of two, got " +
                      std::to_string(audio_channels));
  }
  if (dilation_cycle > 30) throw ConfigError("dilation cycle too large");
  if (upsample_kernel < upsample_stride ||
      (upsample_kernel - upsample_stride) % 2 != 0) {
    throw ConfigError("upsample kernel must be >= stride with an even "
                      "difference");
  }
}

int ModelConfig::dilation(int layer) const {
  return 1 << (layer % dilation_cycle);
}

std::size_t ModelConfig::receptive_field() const {
  std::size_t span = 1;
  for (int i = 0; i < layers; ++i) {
    span += as_size(dilation_kernel - 1) * as_size(dilation(i));
  }
  return span;
}

std::vector<TensorShape> parameter_shapes(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t s = as_size(cfg.skip_channels),
                    r = as_size(cfg.residual_channels),
                    a = as_size(cfg.audio_channels), m = as_size(cfg.mel_bins);
  std::vector<TensorShape> out;
  out.push_back({"embedding", {a, r}});
  out.push_back({"upsample.weight", {m, m, as_size(cfg.upsample_kernel)}});
  out.push_back({"upsample.bias", {m}});
  for (int i = 0; i < cfg.layers; ++i) {
    const std::string p = "layer" + std::to_string(i) + ".";
    out.push_back({p + "dilation.weight", {2 * r, r, as_size(cfg.dilation_kernel)}});
    out.push_back({p + "dilation.bias", {2 * r}});
    out.push_back({p + "conditional.weight", {2 * r, m, 1}});
    out.push_back({p + "conditional.bias", {2 * r}});
    if (cfg.has_residual(i)) {
      out.push_back({p + "residual.weight", {r, r, 1}});
      out.push_back({p + "residual.bias", {r}});
    }
    out.push_back({p + "skip.weight", {s, r, 1}});
    out.push_back({p + "skip.bias", {s}});
  }
  out.push_back({"out.weight", {a, s, 1}});
  out.push_back({"end.weight", {a, a, 1}});
  return out;
}

Parameters allocate_parameters(const ModelConfig& cfg) {
  const std::vector<TensorShape> shapes = parameter_shapes(cfg);
  Parameters p;
  p.config = cfg;
  p.layers.resize(as_size(cfg.layers));
  std::size_t i = 0;
  p.for_each([&](const std::string& name, Tensor& t) {
    if (shapes[i].name != name) throw Error("parameter layout mismatch at " + name);
    t = Tensor(shapes[i].shape);
    ++i;
  });
  return p;
}

Parameters build(const ModelConfig& cfg, std::uint64_t seed) {
  Parameters p = allocate_parameters(cfg);
  Uniform init(seed);
  p.for_each([&](const std::string& name, Tensor& t) {
    if (is_bias(name)) return;
    double fan_in = 1.0;
    if (t.rank() == 3) {
      fan_in = static_cast<double>(t.dim(1) * t.dim(2));
      if (name == "upsample.weight") fan_in /= cfg.upsample_stride;
    }
    init.fill(t, std::sqrt(1.0 / fan_in));
  });
  return p;
}

std::string layer_group(const std::string& name) {
  const auto dot = name.find('.');
  const std::string head = name.substr(0, dot);
  if (head.rfind("layer", 0) == 0 && dot != std::string::npos) {
    const auto dot2 = name.find('.', dot + 1);
    return name.substr(dot + 1, dot2 - dot - 1);
  }
  return head;
}

bool is_bias(const std::string& name) {
  return name.size() > 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
}

bool is_prunable(const std::string& name) {
  if (is_bias(name)) return false;
  const std::string g = layer_group(name);
  return g == "upsample" || g == "dilation" || g == "conditional" ||
         g == "residual" || g == "skip" || g == "out";
}

ModelTable model_table(const ModelConfig& cfg) {
  cfg.validate();
  const std::uint64_t s = as_size(cfg.skip_channels),
                      r = as_size(cfg.residual_channels),
                      a = as_size(cfg.audio_channels),
                      m = as_size(cfg.mel_bins),
                      k = as_size(cfg.dilation_kernel),
                      uk = as_size(cfg.upsample_kernel),
                      us = as_size(cfg.upsample_stride);
  const auto L = static_cast<int>(cfg.layers);
  const double rate = cfg.sample_rate;

  // ops/second for `out` outputs per sample of dot length `fan_in`.
  auto gops = [&](double out, double fan_in, bool bias) {
    return out * (2.0 * fan_in - 1.0 + (bias ? 1.0 : 0.0)) * rate / 1e9;
  };
  auto row = [](std::string layer, std::string type, std::string group,
                int repeats, std::uint64_t params, std::uint64_t macs,
                double g) {
    LayerAccount acc;
    acc.layer = std::move(layer);
    acc.type = std::move(type);
    acc.group = std::move(group);
    acc.repeats = repeats;
    acc.params_per_layer = params;
    acc.params_total = params * static_cast<std::uint64_t>(repeats);
    acc.macs_per_sample = macs;
    acc.gops_per_layer = g;
    acc.gops_total = g * repeats;
    return acc;
  };

  ModelTable t;
  LayerAccount emb = row("Embedding", "Embedding", "embedding", 1, a * r, 0, 0.0);
  emb.has_ops = false;
  t.rows.push_back(emb);
  // Each upsampled sample gathers kernel/stride frames per input channel.
  const double up_fan_in = static_cast<double>(m * uk) / static_cast<double>(us);
  t.rows.push_back(row("Feature Upsample", "ConvTranspose1d", "upsample", 1,
                       m * m * uk + m, m * m * uk / us,
                       gops(static_cast<double>(m), up_fan_in, true)));
  t.rows.push_back(row("Dilation", "Dilated Conv1d", "dilation", L,
                       2 * r * r * k + 2 * r, 2 * r * r * k,
                       gops(2.0 * r, static_cast<double>(r * k), true)));
  t.rows.push_back(row("Conditional", "Conv1d", "conditional", L,
                       2 * r * m + 2 * r, 2 * r * m,
                       gops(2.0 * r, static_cast<double>(m), true)));
  t.rows.push_back(row("Residual", "Conv1d", "residual", L - 1, r * r + r,
                       r * r, gops(static_cast<double>(r), static_cast<double>(r), true)));
  t.rows.push_back(row("Skip", "Conv1d", "skip", L, s * r + s, s * r,
                       gops(static_cast<double>(s), static_cast<double>(r), true)));
  t.rows.push_back(row("Out", "Conv1d", "out", 1, a * s, a * s,
                       gops(static_cast<double>(a), static_cast<double>(s), false)));
  t.rows.push_back(row("End", "Conv1d", "end", 1, a * a, a * a,
                       gops(static_cast<double>(a), static_cast<double>(a), false)));
  for (const LayerAccount& acc : t.rows) {
    t.total_params += acc.params_total;
    t.total_gops += acc.gops_total;
  }
  return t;
}

std::uint64_t count_parameters(const ModelConfig& cfg) {
  return model_table(cfg).total_params;
}

double count_ops(const ModelConfig& cfg) { return model_table(cfg).total_gops; }

void ActivationRecorder::observe(const std::string& site,
                                 std::span<const float> values) {
  float& m = max_abs[site];
  for (float v : values) m = std::max(m, std::fabs(v));
}

// ---------------------------------------------------------------------------

InferenceModel::InferenceModel(const Parameters& params, PrecisionContext ctx,
                               const Calibration* calibration)
    : cfg_(params.config), ctx_(ctx) {
  cfg_.validate();
  if (params.layers.size() != as_size(cfg_.layers)) {
    throw ShapeError("parameter set has " + std::to_string(params.layers.size()) +
                     " layers, config says " + std::to_string(cfg_.layers));
  }
  if (ctx_.integer()) {
    if (calibration == nullptr || calibration->activations.empty()) {
      throw CalibrationRequired("INT8 inference requires calibration scales");
    }
    calibration_ = *calibration;
  }

  embedding_ = params.embedding;
  if (ctx_.integer()) {
    const IntQuantParams* ws = weight_scale("embedding");
    const IntQuantParams p =
        ws != nullptr ? *ws : int8_params_from_max_abs([&] {
          float m = 0.0f;
          for (float v : embedding_.data) m = std::max(m, std::fabs(v));
          return m;
        }());
    for (float& v : embedding_.data) v = fake_quantize_int8(v, p);
  } else {
    embedding_ = quantize_tensor(embedding_, ctx_.inp());
    act_round(embedding_.data, ctx_);
  }
  upsample_w_ = params.upsample_w;
  upsample_b_ = params.upsample_b;

  for (int i = 0; i < cfg_.layers; ++i) {
    const auto& lp = params.layers[as_size(i)];
    const std::string p = "layer" + std::to_string(i) + ".";
    Layer layer{cfg_.dilation(i),
                Conv1dOperator(lp.dilation_w, &lp.dilation_b, ctx_,
                               weight_scale(p + "dilation.weight")),
                Conv1dOperator(lp.conditional_w, &lp.conditional_b, ctx_,
                               weight_scale(p + "conditional.weight")),
                Conv1dOperator(lp.skip_w, &lp.skip_b, ctx_,
                               weight_scale(p + "skip.weight")),
                std::nullopt};
    if (cfg_.has_residual(i)) {
      layer.residual_conv.emplace(lp.residual_w, &lp.residual_b, ctx_,
                                  weight_scale(p + "residual.weight"));
    }
    layers_.push_back(std::move(layer));
    site_input_.push_back(p + "input");
    site_dilation_.push_back(p + "dilation_out");
    site_conditional_.push_back(p + "conditional_out");
    site_pre_.push_back(p + "pre_gate");
    site_gated_.push_back(p + "gated");
    site_skip_.push_back(p + "skip_out");
    site_skip_sum_.push_back(p + "skip_sum");
    site_residual_.push_back(p + "residual_out");
  }
  out_conv_.emplace(params.out_w, nullptr, ctx_, weight_scale("out.weight"));
  end_conv_.emplace(params.end_w, nullptr, ctx_, weight_scale("end.weight"));
}

const IntQuantParams* InferenceModel::scale_of(const std::string& site) const {
  if (!ctx_.integer()) return nullptr;
  const auto it = calibration_->activations.find(site);
  if (it == calibration_->activations.end()) {
    throw CalibrationRequired("no calibrated scale for activation '" + site + "'");
  }
  return &it->second;
}

const IntQuantParams* InferenceModel::weight_scale(
    const std::string& tensor) const {
  if (!calibration_) return nullptr;
  const auto it = calibration_->weights.find(tensor);
  return it == calibration_->weights.end() ? nullptr : &it->second;
}

void InferenceModel::site(const std::string& name, std::span<float> values,
                          ActivationRecorder* recorder) const {
  if (recorder != nullptr) recorder->observe(name, values);
  if (ctx_.integer()) {
    const IntQuantParams p = *scale_of(name);
    for (float& v : values) v = fake_quantize_int8(v, p);
  } else {
    act_round(values, ctx_);
  }
}

void InferenceModel::check_code(long long code) const {
  if (code < 0 || code >= cfg_.audio_channels) {
    throw Error("audio code " + std::to_string(code) + " outside [0, " +
                std::to_string(cfg_.audio_channels) + ")");
  }
}

void InferenceModel::embed(int code, std::span<float> out) const {
  check_code(code);
  const auto row = embedding_.row(as_size(code));
  std::copy(row.begin(), row.end(), out.begin());
}

Tensor InferenceModel::upsample(const FeatureMatrix& features,
                                ActivationRecorder* recorder) const {
  if (features.bands != as_size(cfg_.mel_bins)) {
    throw ShapeError("features have " + std::to_string(features.bands) +
                     " bands, model expects " + std::to_string(cfg_.mel_bins));
  }
  if (features.frames == 0) throw ShapeError("feature matrix has no frames");
  Tensor x = features.channel_major();
  site("features", x.data, recorder);
  Tensor up = conv_transpose1d(x, upsample_w_, upsample_b_,
                               cfg_.upsample_stride, ctx_, scale_of("features"),
                               weight_scale("upsample.weight"));
  site("upsampled", up.data, recorder);
  return up;
}

Tensor InferenceModel::forward(const FeatureMatrix& features,
                               std::span<const int> codes,
                               ActivationRecorder* recorder) const {
  return forward_upsampled(upsample(features, recorder), codes, recorder);
}

Tensor InferenceModel::forward_upsampled(const Tensor& upsampled,
                                         std::span<const int> codes,
                                         ActivationRecorder* recorder) const {
  const std::size_t steps = codes.size();
  const std::size_t r = as_size(cfg_.residual_channels),
                    s = as_size(cfg_.skip_channels);
  if (upsampled.rank() != 2 || upsampled.dim(0) != as_size(cfg_.mel_bins) ||
      upsampled.dim(1) < steps) {
    throw ShapeError("conditioning " + shape_string(upsampled.shape) +
                     " cannot cover " + std::to_string(steps) + " samples");
  }
  for (int c : codes) check_code(c);
  const Tensor cond = leading_columns(upsampled, steps);

  Tensor x({r, steps});
  std::vector<float> col(r);
  for (std::size_t t = 0; t < steps; ++t) {
    embed(t == 0 ? mulaw_silence_code(cfg_.audio_channels) : codes[t - 1], col);
    for (std::size_t c = 0; c < r; ++c) x.at(c, t) = col[c];
  }
  site(site_input_[0], x.data, recorder);

  Tensor skip_sum({s, steps});
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& l = layers_[i];
    Tensor pre = l.dilation_conv.apply(x, l.dilation, scale_of(site_input_[i]));
    site(site_dilation_[i], pre.data, recorder);
    Tensor c = l.conditional_conv.apply(cond, 1, scale_of("upsampled"));
    site(site_conditional_[i], c.data, recorder);
    add_into(pre, c, ctx_);
    site(site_pre_[i], pre.data, recorder);
    Tensor z = gated_unit(pre, ctx_);
    site(site_gated_[i], z.data, recorder);
    Tensor sk = l.skip_conv.apply(z, 1, scale_of(site_gated_[i]));
    site(site_skip_[i], sk.data, recorder);
    add_into(skip_sum, sk, ctx_);
    site(site_skip_sum_[i], skip_sum.data, recorder);
    if (l.residual_conv) {
      Tensor res = l.residual_conv->apply(z, 1, scale_of(site_gated_[i]));
      site(site_residual_[i], res.data, recorder);
      add_into(x, res, ctx_);
      site(site_input_[i + 1], x.data, recorder);
    }
  }
  relu(skip_sum.data);
  Tensor h = out_conv_->apply(skip_sum, 1, scale_of(site_skip_sum_.back()));
  site("out.out", h.data, recorder);
  relu(h.data);
  Tensor logits = end_conv_->apply(h, 1, scale_of("out.out"));
  site("logits", logits.data, recorder);
  return logits;
}

GenerationState InferenceModel::start(const FeatureMatrix& features,
                                      std::uint64_t seed) const {
  GenerationState st;
  st.model_ = this;
  st.upsampled_ = upsample(features);
  st.length_ = st.upsampled_.dim(1);
  st.previous_code_ = mulaw_silence_code(cfg_.audio_channels);
  st.rng_.seed(seed);
  for (const Layer& l : layers_) {
    const std::size_t span = as_size(cfg_.dilation_kernel - 1) * as_size(l.dilation);
    st.history_.emplace_back(span * as_size(cfg_.residual_channels), 0.0f);
  }
  return st;
}

void GenerationState::advance(std::vector<float>& logits) {
  if (done()) throw Error("generation already produced every sample");
  const InferenceModel& m = *model_;
  const ModelConfig& cfg = m.cfg_;
  const PrecisionContext& ctx = m.ctx_;
  const std::size_t r = as_size(cfg.residual_channels),
                    s = as_size(cfg.skip_channels),
                    mel = as_size(cfg.mel_bins),
                    kernel = as_size(cfg.dilation_kernel);
  const std::size_t t = cursor_;

  std::vector<float> x(r), cond(mel), pre(2 * r), c(2 * r), z(r), sk(s),
      skip_sum(s, 0.0f), res(r);
  m.embed(static_cast<int>(previous_code_), x);
  m.site(m.site_input_[0], x, nullptr);
  for (std::size_t ch = 0; ch < mel; ++ch) cond[ch] = upsampled_.at(ch, t);
  const std::vector<float> zeros(r, 0.0f);
  const std::span<const float> cond_tap[1] = {cond};
  const std::span<const float> z_tap[1] = {z};

  std::vector<std::span<const float>> taps(kernel);
  for (std::size_t i = 0; i < m.layers_.size(); ++i) {
    const InferenceModel::Layer& l = m.layers_[i];
    std::vector<float>& hist = history_[i];
    const std::size_t span = hist.size() / r;
    for (std::size_t k = 0; k < kernel; ++k) {
      const std::size_t back = (kernel - 1 - k) * as_size(l.dilation);
      if (back == 0) {
        taps[k] = x;
      } else if (t < back) {
        taps[k] = zeros;
      } else {
        taps[k] = std::span<const float>(hist.data() + ((t - back) % span) * r, r);
      }
    }
    l.dilation_conv.apply_column(taps, pre, m.scale_of(m.site_input_[i]));
    m.site(m.site_dilation_[i], pre, nullptr);
    l.conditional_conv.apply_column(cond_tap, c, m.scale_of("upsampled"));
    m.site(m.site_conditional_[i], c, nullptr);
    add_into(pre, c, ctx);
    m.site(m.site_pre_[i], pre, nullptr);
    gated_unit(pre, z, ctx);
    m.site(m.site_gated_[i], z, nullptr);
    l.skip_conv.apply_column(z_tap, sk, m.scale_of(m.site_gated_[i]));
    m.site(m.site_skip_[i], sk, nullptr);
    add_into(skip_sum, sk, ctx);
    m.site(m.site_skip_sum_[i], skip_sum, nullptr);
    if (span > 0) std::copy(x.begin(), x.end(), hist.begin() + (t % span) * r);
    if (l.residual_conv) {
      l.residual_conv->apply_column(z_tap, res, m.scale_of(m.site_gated_[i]));
      m.site(m.site_residual_[i], res, nullptr);
      add_into(x, res, ctx);
      m.site(m.site_input_[i + 1], x, nullptr);
    }
  }
  relu(skip_sum);
  std::vector<float> h(as_size(cfg.audio_channels));
  const std::span<const float> skip_tap[1] = {skip_sum};
  m.out_conv_->apply_column(skip_tap, h, m.scale_of(m.site_skip_sum_.back()));
  m.site("out.out", h, nullptr);
  relu(h);
  logits.resize(as_size(cfg.audio_channels));
  const std::span<const float> h_tap[1] = {h};
  m.end_conv_->apply_column(h_tap, logits, m.scale_of("out.out"));
  m.site("logits", logits, nullptr);
  ++cursor_;
}

int GenerationState::step(std::vector<float>* logits) {
  std::vector<float> l;
  advance(l);
  const int code = softmax_sample(l, rng_, model_->ctx_);
  previous_code_ = code;
  if (logits != nullptr) *logits = std::move(l);
  return code;
}

void GenerationState::step_forced(int code, std::vector<float>* logits) {
  model_->check_code(code);
  std::vector<float> l;
  advance(l);
  previous_code_ = code;
  if (logits != nullptr) *logits = std::move(l);
}

Tensor forward_teacher_forced(const Parameters& params,
                              const FeatureMatrix& features,
                              std::span<const int> codes,
                              const PrecisionContext& ctx,
                              const Calibration* calibration) {
  return InferenceModel(params, ctx, calibration).forward(features, codes);
}

Generation generate(const Parameters& params, const FeatureMatrix& features,
                    std::uint64_t seed, const PrecisionContext& ctx,
                    const Calibration* calibration) {
  const InferenceModel model(params, ctx, calibration);
  GenerationState st = model.start(features, seed);
  Generation g;
  g.codes.reserve(st.length());
  g.audio.samples.reserve(st.length());
  while (!st.done()) {
    const int code = st.step();
    g.codes.push_back(code);
    g.audio.samples.push_back(mulaw_decode(code, params.config.audio_channels));
  }
  return g;
}

}  // namespace wavenet
