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
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wavenet/audio_io.hpp"
#include "wavenet/kernels.hpp"
#include "wavenet/numerics.hpp"
#include "wavenet/tensor.hpp"

namespace wavenet {

struct ModelConfig {
  int skip_channels = 240;
  int residual_channels = 120;
  int audio_channels = 256;
  int layers = 16;
  int dilation_cycle = 8;
  int mel_bins = kMelBins;
  int upsample_kernel = 800;
  int upsample_stride = kHopLength;
  int dilation_kernel = 2;
  int sample_rate = kSampleRate;

  static ModelConfig paper() { return {}; }
  // Desk-scale instance used for training runs and tests.
  static ModelConfig desk();

  void validate() const;  // throws ConfigError
  int dilation(int layer) const;
  bool has_residual(int layer) const { return layer + 1 < layers; }
  // Samples of input history that can reach one output.
  std::size_t receptive_field() const;

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct BasicLayerParams {
  BasicTensor<T> dilation_w, dilation_b;
  BasicTensor<T> conditional_w, conditional_b;
  BasicTensor<T> residual_w, residual_b;  // empty on the last layer
  BasicTensor<T> skip_w, skip_b;
};

template <typename T>
struct BasicParameters {
  ModelConfig config;
  BasicTensor<T> embedding;  // [a x r]
  BasicTensor<T> upsample_w, upsample_b;
  std::vector<BasicLayerParams<T>> layers;
  BasicTensor<T> out_w;  // [a x s x 1]
  BasicTensor<T> end_w;  // [a x a x 1]

  // Visits every tensor in canonical order as fn(name, tensor).
  template <typename Fn>
  void for_each(Fn&& fn) {
    visit(*this, fn);
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    visit(*this, fn);
  }

  BasicTensor<T>* find(const std::string& name) {
    BasicTensor<T>* hit = nullptr;
    for_each([&](const std::string& n, BasicTensor<T>& t) {
      if (n == name) hit = &t;
    });
    return hit;
  }
  const BasicTensor<T>* find(const std::string& name) const {
    return const_cast<BasicParameters*>(this)->find(name);
  }

  std::size_t total_parameters() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const BasicTensor<T>& t) { n += t.numel(); });
    return n;
  }

  template <typename U>
  BasicParameters<U> cast() const {
    BasicParameters<U> out;
    out.config = config;
    out.layers.resize(layers.size());
    std::vector<const BasicTensor<T>*> src;
    for_each([&](const std::string&, const BasicTensor<T>& t) { src.push_back(&t); });
    std::size_t i = 0;
    out.for_each([&](const std::string&, BasicTensor<U>& t) {
      t = src[i++]->template cast<U>();
    });
    return out;
  }

 private:
  template <typename Self, typename Fn>
  static void visit(Self& self, Fn& fn) {
    fn(std::string("embedding"), self.embedding);
    fn(std::string("upsample.weight"), self.upsample_w);
    fn(std::string("upsample.bias"), self.upsample_b);
    for (std::size_t i = 0; i < self.layers.size(); ++i) {
      const std::string p = "layer" + std::to_string(i) + ".";
      auto& l = self.layers[i];
      fn(p + "dilation.weight", l.dilation_w);
      fn(p + "dilation.bias", l.dilation_b);
      fn(p + "conditional.weight", l.conditional_w);
      fn(p + "conditional.bias", l.conditional_b);
      if (i + 1 < self.layers.size()) {
        fn(p + "residual.weight", l.residual_w);
        fn(p + "residual.bias", l.residual_b);
      }
      fn(p + "skip.weight", l.skip_w);
      fn(p + "skip.bias", l.skip_b);
    }
    fn(std::string("out.weight"), self.out_w);
    fn(std::string("end.weight"), self.end_w);
  }
};

using Parameters = BasicParameters<float>;
using ParametersD = BasicParameters<double>;

struct TensorShape {
  std::string name;
  std::vector<std::size_t> shape;
};

// Every parameter tensor of `cfg`, in canonical order, without allocating.
std::vector<TensorShape> parameter_shapes(const ModelConfig& cfg);

// Empty tensors of the right shapes.
Parameters allocate_parameters(const ModelConfig& cfg);

// Weights uniform in +-sqrt(1/fan_in), biases zero.
Parameters build(const ModelConfig& cfg, std::uint64_t seed);

// "upsample", "dilation", "conditional", "residual", "skip", "out",
// "embedding" or "end".
std::string layer_group(const std::string& tensor_name);
bool is_bias(const std::string& tensor_name);
// Weights subject to pruning; biases, embedding and end stay dense.
bool is_prunable(const std::string& tensor_name);

struct LayerAccount {
  std::string layer;
  std::string type;
  std::string group;
  int repeats = 1;
  std::uint64_t params_per_layer = 0;
  std::uint64_t params_total = 0;
  // Multiply-adds per generated sample (amortized for the upsampler).
  std::uint64_t macs_per_sample = 0;
  bool has_ops = true;
  double gops_per_layer = 0.0;
  double gops_total = 0.0;
};

struct ModelTable {
  std::vector<LayerAccount> rows;
  std::uint64_t total_params = 0;
  double total_gops = 0.0;
};

// Per output element, a dot product of length n costs n multiplies and
// n-1 additions, plus one addition for a bias.
ModelTable model_table(const ModelConfig& cfg);
std::uint64_t count_parameters(const ModelConfig& cfg);
double count_ops(const ModelConfig& cfg);  // GOP per second of audio

// INT8 scales: one per weight tensor and one per activation site.
struct Calibration {
  std::map<std::string, IntQuantParams> weights;
  std::map<std::string, IntQuantParams> activations;
  std::vector<std::string> degenerate;

  bool empty() const { return weights.empty() && activations.empty(); }
};

// Max-abs per activation site, filled by an FP32 forward pass.
struct ActivationRecorder {
  std::map<std::string, float> max_abs;
  void observe(const std::string& site, std::span<const float> values);
};

class InferenceModel;

// Autoregressive state for one clip.
class GenerationState {
 public:
  std::size_t length() const noexcept { return length_; }
  std::size_t position() const noexcept { return cursor_; }
  bool done() const noexcept { return cursor_ >= length_; }
  std::int64_t previous_code() const noexcept { return previous_code_; }

  // Emits the next code; logits of this step are copied out when asked.
  int step(std::vector<float>* logits = nullptr);
  // Advances with a given code instead of sampling.
  void step_forced(int code, std::vector<float>* logits = nullptr);

 private:
  friend class InferenceModel;
  void advance(std::vector<float>& logits);

  const InferenceModel* model_ = nullptr;
  Tensor upsampled_;
  std::vector<std::vector<float>> history_;  // per layer, (k-1)*d columns
  std::int64_t previous_code_ = kSilenceCode;
  std::size_t cursor_ = 0;
  std::size_t length_ = 0;
  Rng rng_;
};

class InferenceModel {
 public:
  InferenceModel(const Parameters& params, PrecisionContext ctx,
                 const Calibration* calibration = nullptr);

  const ModelConfig& config() const noexcept { return cfg_; }
  const PrecisionContext& context() const noexcept { return ctx_; }

  // [mel x stride*frames]
  Tensor upsample(const FeatureMatrix& features,
                  ActivationRecorder* recorder = nullptr) const;

  // Teacher-forced logits [a x T] where T = codes.size().
  Tensor forward(const FeatureMatrix& features, std::span<const int> codes,
                 ActivationRecorder* recorder = nullptr) const;
  Tensor forward_upsampled(const Tensor& upsampled, std::span<const int> codes,
                           ActivationRecorder* recorder = nullptr) const;

  GenerationState start(const FeatureMatrix& features,
                        std::uint64_t seed) const;

 private:
  friend class GenerationState;
  struct Layer {
    int dilation;
    Conv1dOperator dilation_conv, conditional_conv, skip_conv;
    std::optional<Conv1dOperator> residual_conv;
  };

  void site(const std::string& name, std::span<float> values,
            ActivationRecorder* recorder) const;
  const IntQuantParams* scale_of(const std::string& site) const;
  const IntQuantParams* weight_scale(const std::string& tensor) const;
  void embed(int code, std::span<float> out) const;
  void check_code(long long code) const;

  ModelConfig cfg_;
  PrecisionContext ctx_;
  std::optional<Calibration> calibration_;
  Tensor embedding_;  // converted to INP then ACT
  Tensor upsample_w_, upsample_b_;
  std::vector<Layer> layers_;
  std::optional<Conv1dOperator> out_conv_, end_conv_;
  // Site names, computed once.
  std::vector<std::string> site_input_, site_dilation_, site_conditional_,
      site_pre_, site_gated_, site_skip_, site_skip_sum_, site_residual_;
};

Tensor forward_teacher_forced(const Parameters& params,
                              const FeatureMatrix& features,
                              std::span<const int> codes,
                              const PrecisionContext& ctx,
                              const Calibration* calibration = nullptr);

struct Generation {
  std::vector<std::int64_t> codes;
  AudioClip audio;
};

Generation generate(const Parameters& params, const FeatureMatrix& features,
                    std::uint64_t seed, const PrecisionContext& ctx,
                    const Calibration* calibration = nullptr);

}  // namespace wavenet
