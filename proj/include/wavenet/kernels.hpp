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

// Convolution primitives under the mixed-precision contract: operands are
// converted to the INP format before every multiply, products are summed
// and nonlinearities evaluated in the ACT format. Also hosts the exact
// (unquantized) kernels and their gradients used for training.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "wavenet/numerics.hpp"
#include "wavenet/tensor.hpp"

namespace wavenet {

struct PrecisionContext {
  FormatId format = FormatId::fp32;

  // INT8 paths accumulate in 64-bit integers.
  static constexpr int kIntegerAccumulatorBits = 64;

  const FormatSpec& inp() const { return format_spec(format); }
  const FormatSpec& act() const { return format_spec(inp().accumulation); }
  bool integer() const { return inp().is_integer(); }
};

// Rounds to the ACT format. Identity under INT8, where activations are
// requantized by the caller with calibrated per-site scales.
float act_round(float x, const PrecisionContext& ctx);
void act_round(std::span<float> values, const PrecisionContext& ctx);
// a + b evaluated in the ACT format.
float act_add(float a, float b, const PrecisionContext& ctx);

// Converts an activation column (one time step, all channels) to INP.
// INT8 columns are fake-quantized with `scale`.
void to_inp_column(std::span<float> column, const PrecisionContext& ctx,
                   const IntQuantParams* scale);

// Causal dilated 1-D convolution with weights prepared once in the INP
// format. `apply` and `apply_column` share one accumulation order, so a
// step-by-step evaluation reproduces the full-sequence result bit for bit.
class Conv1dOperator {
 public:
  // weight is [out x in x kernel]; bias, when present, is [out]. Under
  // INT8 a missing weight scale is derived from the weight's max-abs.
  Conv1dOperator(const Tensor& weight, const Tensor* bias,
                 PrecisionContext ctx,
                 const IntQuantParams* weight_scale = nullptr);

  // [in x T] -> [out x T], left-padded with (kernel-1)*dilation zeros.
  Tensor apply(const Tensor& input, int dilation,
               const IntQuantParams* input_scale = nullptr) const;

  // One output column. taps[k] is the input column at t-(kernel-1-k)*d;
  // taps are converted to INP here exactly as `apply` converts its input.
  void apply_column(std::span<const std::span<const float>> taps,
                    std::span<float> out,
                    const IntQuantParams* input_scale = nullptr) const;

  std::size_t in_channels() const noexcept { return in_; }
  std::size_t out_channels() const noexcept { return out_; }
  std::size_t kernel() const noexcept { return kernel_; }

 private:
  PrecisionContext ctx_;
  std::size_t out_ = 0, in_ = 0, kernel_ = 0;
  std::vector<float> weight_;  // INP values, [out x in x kernel]
  std::vector<std::int8_t> weight_q_;
  IntQuantParams weight_scale_{};
  std::vector<float> bias_;
};

Tensor conv1d(const Tensor& input, const Tensor& weight, const Tensor* bias,
              int dilation, const PrecisionContext& ctx,
              const IntQuantParams* input_scale = nullptr,
              const IntQuantParams* weight_scale = nullptr);

// Length (T-1)*stride + kernel, center-trimmed by (kernel-stride)/2 on each
// side so frame f conditions samples [f*stride, (f+1)*stride).
std::size_t upsample_trim(std::size_t kernel, std::size_t stride);

// features [in x T] -> [out x stride*T]; weight is [out x in x kernel].
Tensor conv_transpose1d(const Tensor& features, const Tensor& weight,
                        const Tensor& bias, int stride,
                        const PrecisionContext& ctx,
                        const IntQuantParams* input_scale = nullptr,
                        const IntQuantParams* weight_scale = nullptr);

// tanh(first half) * sigmoid(second half). Under INT8 both factors are
// quantized with the fixed scale 1/127 (their ranges are bounded).
Tensor gated_unit(const Tensor& pre_activation, const PrecisionContext& ctx);
void gated_unit(std::span<const float> pre_activation, std::span<float> out,
                const PrecisionContext& ctx);

// Numerically stable softmax (max subtracted). Evaluated in ACT; INT8
// models use FP32 for the output distribution.
std::vector<double> softmax(std::span<const float> logits,
                            const PrecisionContext& ctx);

using Rng = std::mt19937_64;
// Uniform double in [0, 1) from the top 53 bits of one draw.
double uniform01(Rng& rng);

// Categorical draw from softmax(logits). Throws if every logit is -inf.
int softmax_sample(std::span<const float> logits, Rng& rng,
                   const PrecisionContext& ctx);

// ---- exact kernels and gradients (training runs in full precision) ----

template <typename T>
BasicTensor<T> conv1d_exact(const BasicTensor<T>& input,
                            const BasicTensor<T>& weight,
                            const BasicTensor<T>* bias, int dilation);

template <typename T>
struct ConvGrads {
  BasicTensor<T> input;
  BasicTensor<T> weight;
  BasicTensor<T> bias;
};

template <typename T>
ConvGrads<T> conv1d_backward(const BasicTensor<T>& input,
                             const BasicTensor<T>& weight,
                             const BasicTensor<T>& grad_output, int dilation);

template <typename T>
BasicTensor<T> conv_transpose1d_exact(const BasicTensor<T>& features,
                                      const BasicTensor<T>& weight,
                                      const BasicTensor<T>& bias, int stride);

template <typename T>
ConvGrads<T> conv_transpose1d_backward(const BasicTensor<T>& features,
                                       const BasicTensor<T>& weight,
                                       const BasicTensor<T>& grad_output,
                                       int stride);

}  // namespace wavenet
