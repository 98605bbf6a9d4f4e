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

#include "wavenet/kernels.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace wavenet {
namespace {

// Accumulation in the ACT format. Products of INP operands are formed in
// float (exact for every reduced INP format) and added with one rounding.
struct Accumulator {
  bool fp32 = true;
  int exponent_bits = 8;
  int mantissa_bits = 23;

  explicit Accumulator(const PrecisionContext& ctx) {
    const FormatSpec& a = ctx.act();
    fp32 = a.kind != FormatKind::floating ||
           (a.exponent_bits == 8 && a.mantissa_bits == 23);
    exponent_bits = a.exponent_bits;
    mantissa_bits = a.mantissa_bits;
  }

  float mac(float acc, float x, float w) const {
    const float prod = x * w;
    if (fp32) return acc + prod;
    return static_cast<float>(round_to_format(
        static_cast<double>(acc) + static_cast<double>(prod), exponent_bits,
        mantissa_bits));
  }
  float add(float a, float b) const { return mac(a, b, 1.0f); }
};

void check_dilation(int dilation) {
  if (dilation < 1) {
    throw ShapeError("dilation must be >= 1, got " + std::to_string(dilation));
  }
}

const IntQuantParams& require_scale(const IntQuantParams* s,
                                    const char* what) {
  if (s == nullptr) {
    throw CalibrationRequired(std::string("INT8 ") + what +
                              " requires a calibrated scale");
  }
  return *s;
}

IntQuantParams weight_scale_for(const Tensor& w, const IntQuantParams* given) {
  if (given != nullptr) return *given;
  float max_abs = 0.0f;
  for (float v : w.data) max_abs = std::max(max_abs, std::fabs(v));
  return int8_params_from_max_abs(max_abs);
}

// Converts activations [C x T] to the INP format.
Tensor to_inp(const Tensor& x, const PrecisionContext& ctx) {
  const FormatSpec& f = ctx.inp();
  if (f.kind == FormatKind::block_floating) {
    return quantize_block_fp(x, 0, f.block_size);
  }
  return quantize_tensor(x, f);
}

std::int64_t bias_to_accumulator(float b, double acc_scale) {
  return static_cast<std::int64_t>(
      std::nearbyint(static_cast<double>(b) / acc_scale));
}

float sigmoid(float x) {
  return static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(x))));
}

}  // namespace

float act_round(float x, const PrecisionContext& ctx) {
  const FormatSpec& a = ctx.act();
  if (a.kind != FormatKind::floating) return x;
  return round_float(x, a.exponent_bits, a.mantissa_bits);
}

void act_round(std::span<float> values, const PrecisionContext& ctx) {
  const FormatSpec& a = ctx.act();
  if (a.kind != FormatKind::floating ||
      (a.exponent_bits == 8 && a.mantissa_bits == 23)) {
    return;
  }
  for (float& v : values) v = round_float(v, a.exponent_bits, a.mantissa_bits);
}

float act_add(float a, float b, const PrecisionContext& ctx) {
  return Accumulator(ctx).add(a, b);
}

void to_inp_column(std::span<float> column, const PrecisionContext& ctx,
                   const IntQuantParams* scale) {
  const FormatSpec& f = ctx.inp();
  switch (f.kind) {
    case FormatKind::floating:
      if (f.exponent_bits == 8 && f.mantissa_bits == 23) return;
      for (float& v : column) {
        v = round_float(v, f.exponent_bits, f.mantissa_bits);
      }
      return;
    case FormatKind::block_floating:
      for (std::size_t b = 0; b < column.size();
           b += static_cast<std::size_t>(f.block_size)) {
        quantize_block_fp_inplace(
            column.data() + b,
            std::min<std::size_t>(f.block_size, column.size() - b), 1);
      }
      return;
    case FormatKind::integer: {
      const IntQuantParams& p = require_scale(scale, "activation");
      for (float& v : column) v = fake_quantize_int8(v, p);
      return;
    }
  }
}

// ---------------------------------------------------------------------------

Conv1dOperator::Conv1dOperator(const Tensor& weight, const Tensor* bias,
                               PrecisionContext ctx,
                               const IntQuantParams* weight_scale)
    : ctx_(ctx) {
  if (weight.rank() != 3) {
    throw ShapeError("conv weight must be [out x in x kernel], got " +
                     shape_string(weight.shape));
  }
  out_ = weight.dim(0);
  in_ = weight.dim(1);
  kernel_ = weight.dim(2);
  if (out_ == 0 || in_ == 0 || kernel_ == 0) {
    throw ShapeError("conv weight has an empty dimension");
  }
  if (bias != nullptr && !bias->empty()) {
    if (bias->numel() != out_) {
      throw ShapeError("bias length " + std::to_string(bias->numel()) +
                       " != out channels " + std::to_string(out_));
    }
  }
  if (ctx.integer()) {
    weight_scale_ = weight_scale_for(weight, weight_scale);
    weight_q_ = quantize_int8(weight.data, weight_scale_);
    if (bias != nullptr) bias_ = bias->data;
  } else {
    weight_ = quantize_tensor(weight, ctx.inp()).data;
    if (bias != nullptr && !bias->empty()) {
      bias_ = quantize_tensor(*bias, ctx.inp()).data;
      for (float& b : bias_) b = act_round(b, ctx);
    }
  }
}

Tensor Conv1dOperator::apply(const Tensor& input, int dilation,
                             const IntQuantParams* input_scale) const {
  check_dilation(dilation);
  if (input.rank() != 2 || input.dim(0) != in_) {
    throw ShapeError("conv input " + shape_string(input.shape) +
                     " does not match " + std::to_string(in_) +
                     " input channels");
  }
  const std::size_t steps = input.dim(1);
  Tensor out({out_, steps});
  const auto d = static_cast<std::size_t>(dilation);

  if (ctx_.integer()) {
    const IntQuantParams& sx = require_scale(input_scale, "conv input");
    const std::vector<std::int8_t> xq = quantize_int8(input.data, sx);
    const double acc_scale = static_cast<double>(sx.scale) *
                             static_cast<double>(weight_scale_.scale);
    std::vector<std::int64_t> acc(steps);
    for (std::size_t o = 0; o < out_; ++o) {
      std::fill(acc.begin(), acc.end(), 0);
      for (std::size_t c = 0; c < in_; ++c) {
        const std::int8_t* x = xq.data() + c * steps;
        for (std::size_t k = 0; k < kernel_; ++k) {
          const std::int64_t w = weight_q_[(o * in_ + c) * kernel_ + k];
          const std::size_t off = (kernel_ - 1 - k) * d;
          for (std::size_t t = off; t < steps; ++t) acc[t] += w * x[t - off];
        }
      }
      const std::int64_t b =
          bias_.empty() ? 0 : bias_to_accumulator(bias_[o], acc_scale);
      float* y = out.data.data() + o * steps;
      for (std::size_t t = 0; t < steps; ++t) {
        y[t] = static_cast<float>(static_cast<double>(acc[t] + b) * acc_scale);
      }
    }
    return out;
  }

  const Tensor xq = to_inp(input, ctx_);
  const Accumulator accum(ctx_);
  for (std::size_t o = 0; o < out_; ++o) {
    float* y = out.data.data() + o * steps;
    for (std::size_t c = 0; c < in_; ++c) {
      const float* x = xq.data.data() + c * steps;
      for (std::size_t k = 0; k < kernel_; ++k) {
        const float w = weight_[(o * in_ + c) * kernel_ + k];
        const std::size_t off = (kernel_ - 1 - k) * d;
        if (accum.fp32) {
          for (std::size_t t = off; t < steps; ++t) y[t] += x[t - off] * w;
        } else {
          for (std::size_t t = off; t < steps; ++t) {
            y[t] = accum.mac(y[t], x[t - off], w);
          }
        }
      }
    }
    if (!bias_.empty()) {
      for (std::size_t t = 0; t < steps; ++t) y[t] = accum.add(y[t], bias_[o]);
    }
  }
  return out;
}

void Conv1dOperator::apply_column(std::span<const std::span<const float>> taps,
                                  std::span<float> out,
                                  const IntQuantParams* input_scale) const {
  if (taps.size() != kernel_ || out.size() != out_) {
    throw ShapeError("apply_column: expected " + std::to_string(kernel_) +
                     " taps and " + std::to_string(out_) + " outputs");
  }
  for (const auto& tap : taps) {
    if (tap.size() != in_) throw ShapeError("apply_column: tap length");
  }

  if (ctx_.integer()) {
    const IntQuantParams& sx = require_scale(input_scale, "conv input");
    std::vector<std::int8_t> xq(kernel_ * in_);
    for (std::size_t k = 0; k < kernel_; ++k) {
      for (std::size_t c = 0; c < in_; ++c) {
        xq[k * in_ + c] = quantize_int8(taps[k][c], sx);
      }
    }
    const double acc_scale = static_cast<double>(sx.scale) *
                             static_cast<double>(weight_scale_.scale);
    for (std::size_t o = 0; o < out_; ++o) {
      std::int64_t acc = 0;
      for (std::size_t c = 0; c < in_; ++c) {
        for (std::size_t k = 0; k < kernel_; ++k) {
          acc += static_cast<std::int64_t>(
                     weight_q_[(o * in_ + c) * kernel_ + k]) *
                 xq[k * in_ + c];
        }
      }
      const std::int64_t b =
          bias_.empty() ? 0 : bias_to_accumulator(bias_[o], acc_scale);
      out[o] = static_cast<float>(static_cast<double>(acc + b) * acc_scale);
    }
    return;
  }

  std::vector<float> xq(kernel_ * in_);
  for (std::size_t k = 0; k < kernel_; ++k) {
    std::copy(taps[k].begin(), taps[k].end(), xq.begin() + k * in_);
    to_inp_column(std::span<float>(xq.data() + k * in_, in_), ctx_, nullptr);
  }
  const Accumulator accum(ctx_);
  for (std::size_t o = 0; o < out_; ++o) {
    float acc = 0.0f;
    for (std::size_t c = 0; c < in_; ++c) {
      for (std::size_t k = 0; k < kernel_; ++k) {
        acc = accum.mac(acc, xq[k * in_ + c],
                        weight_[(o * in_ + c) * kernel_ + k]);
      }
    }
    if (!bias_.empty()) acc = accum.add(acc, bias_[o]);
    out[o] = acc;
  }
}

Tensor conv1d(const Tensor& input, const Tensor& weight, const Tensor* bias,
              int dilation, const PrecisionContext& ctx,
              const IntQuantParams* input_scale,
              const IntQuantParams* weight_scale) {
  return Conv1dOperator(weight, bias, ctx, weight_scale)
      .apply(input, dilation, input_scale);
}

// ---------------------------------------------------------------------------

std::size_t upsample_trim(std::size_t kernel, std::size_t stride) {
  if (stride == 0 || kernel < stride || (kernel - stride) % 2 != 0) {
    throw ShapeError("upsampler needs kernel >= stride with an even "
                     "difference, got kernel " +
                     std::to_string(kernel) + " stride " +
                     std::to_string(stride));
  }
  return (kernel - stride) / 2;
}

Tensor conv_transpose1d(const Tensor& features, const Tensor& weight,
                        const Tensor& bias, int stride,
                        const PrecisionContext& ctx,
                        const IntQuantParams* input_scale,
                        const IntQuantParams* weight_scale) {
  if (features.rank() != 2 || features.dim(1) == 0) {
    throw ShapeError("upsampler needs [channels x frames] with >= 1 frame, "
                     "got " + shape_string(features.shape));
  }
  if (weight.rank() != 3 || weight.dim(1) != features.dim(0)) {
    throw ShapeError("transposed conv weight " + shape_string(weight.shape) +
                     " does not match features " +
                     shape_string(features.shape));
  }
  if (stride < 1) throw ShapeError("stride must be >= 1");
  const std::size_t out_ch = weight.dim(0), in_ch = weight.dim(1),
                    kernel = weight.dim(2), frames = features.dim(1);
  const auto s = static_cast<std::size_t>(stride);
  const std::size_t trim = upsample_trim(kernel, s);
  const std::size_t length = s * frames;
  if (bias.numel() != out_ch) throw ShapeError("upsampler bias length");
  Tensor out({out_ch, length});

  // Sample n of frame f's footprint lands at f*s + j - trim.
  auto for_each_tap = [&](std::size_t f, auto&& fn) {
    const std::size_t base = f * s;
    const std::size_t j0 = base >= trim ? 0 : trim - base;
    const std::size_t j1 = std::min(kernel, length + trim - base);
    for (std::size_t j = j0; j < j1; ++j) fn(j, base + j - trim);
  };

  if (ctx.integer()) {
    const IntQuantParams& sx = require_scale(input_scale, "upsampler input");
    const IntQuantParams sw = weight_scale_for(weight, weight_scale);
    const std::vector<std::int8_t> xq = quantize_int8(features.data, sx);
    const std::vector<std::int8_t> wq = quantize_int8(weight.data, sw);
    const double acc_scale =
        static_cast<double>(sx.scale) * static_cast<double>(sw.scale);
    std::vector<std::int64_t> acc(length);
    for (std::size_t o = 0; o < out_ch; ++o) {
      std::fill(acc.begin(), acc.end(), 0);
      for (std::size_t m = 0; m < in_ch; ++m) {
        const std::int8_t* w = wq.data() + (o * in_ch + m) * kernel;
        for (std::size_t f = 0; f < frames; ++f) {
          const std::int64_t x = xq[m * frames + f];
          if (x == 0) continue;
          for_each_tap(f, [&](std::size_t j, std::size_t n) {
            acc[n] += x * w[j];
          });
        }
      }
      const std::int64_t b = bias_to_accumulator(bias.data[o], acc_scale);
      float* y = out.data.data() + o * length;
      for (std::size_t n = 0; n < length; ++n) {
        y[n] = static_cast<float>(static_cast<double>(acc[n] + b) * acc_scale);
      }
    }
    return out;
  }

  const Tensor xq = to_inp(features, ctx);
  const Tensor wq = quantize_tensor(weight, ctx.inp());
  Tensor bq = quantize_tensor(bias, ctx.inp());
  for (float& b : bq.data) b = act_round(b, ctx);
  const Accumulator accum(ctx);
  for (std::size_t o = 0; o < out_ch; ++o) {
    float* y = out.data.data() + o * length;
    for (std::size_t m = 0; m < in_ch; ++m) {
      const float* w = wq.data.data() + (o * in_ch + m) * kernel;
      for (std::size_t f = 0; f < frames; ++f) {
        const float x = xq.data[m * frames + f];
        for_each_tap(f, [&](std::size_t j, std::size_t n) {
          y[n] = accum.mac(y[n], x, w[j]);
        });
      }
    }
    for (std::size_t n = 0; n < length; ++n) y[n] = accum.add(y[n], bq.data[o]);
  }
  return out;
}

// ---------------------------------------------------------------------------

void gated_unit(std::span<const float> pre, std::span<float> out,
                const PrecisionContext& ctx) {
  if (pre.size() % 2 != 0) {
    throw ShapeError("gated unit needs an even channel count, got " +
                     std::to_string(pre.size()));
  }
  const std::size_t half = pre.size() / 2;
  if (out.size() != half) throw ShapeError("gated unit output length");
  const IntQuantParams unit{1.0f / static_cast<float>(kInt8Max)};
  for (std::size_t i = 0; i < half; ++i) {
    float t = std::tanh(pre[i]);
    float s = sigmoid(pre[half + i]);
    if (ctx.integer()) {
      t = fake_quantize_int8(t, unit);
      s = fake_quantize_int8(s, unit);
      out[i] = t * s;
    } else {
      t = act_round(t, ctx);
      s = act_round(s, ctx);
      out[i] = act_round(t * s, ctx);
    }
  }
}

Tensor gated_unit(const Tensor& pre, const PrecisionContext& ctx) {
  if (pre.rank() != 2 || pre.dim(0) % 2 != 0) {
    throw ShapeError("gated unit needs [2r x T] input, got " +
                     shape_string(pre.shape));
  }
  const std::size_t half = pre.dim(0) / 2, steps = pre.dim(1);
  Tensor out({half, steps});
  // Channels are rows, so gate row-pairs elementwise.
  std::vector<float> col(2 * half), res(half);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t c = 0; c < 2 * half; ++c) col[c] = pre.at(c, t);
    gated_unit(col, res, ctx);
    for (std::size_t c = 0; c < half; ++c) out.at(c, t) = res[c];
  }
  return out;
}

std::vector<double> softmax(std::span<const float> logits,
                            const PrecisionContext& ctx) {
  if (logits.empty()) throw ShapeError("softmax of an empty vector");
  const float max = *std::max_element(logits.begin(), logits.end());
  if (max == -std::numeric_limits<float>::infinity()) {
    throw Error("softmax: every logit is -inf");
  }
  const PrecisionContext fctx =
      ctx.integer() ? PrecisionContext{FormatId::fp32} : ctx;
  const Accumulator accum(fctx);
  std::vector<float> e(logits.size());
  float sum = 0.0f;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    e[i] = act_round(static_cast<float>(std::exp(
                         static_cast<double>(act_add(logits[i], -max, fctx)))),
                     fctx);
    sum = accum.add(sum, e[i]);
  }
  std::vector<double> p(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = act_round(e[i] / sum, fctx);
  }
  return p;
}

double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

int softmax_sample(std::span<const float> logits, Rng& rng,
                   const PrecisionContext& ctx) {
  const std::vector<double> p = softmax(logits, ctx);
  double total = 0.0;
  for (double v : p) total += v;
  const double u = uniform01(rng) * total;
  double cum = 0.0;
  int last_nonzero = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    cum += p[i];
    last_nonzero = static_cast<int>(i);
    if (u < cum) return static_cast<int>(i);
  }
  return last_nonzero;
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using TapMap = Eigen::Map<const RowMat<T>, 0, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>;

// Tap k of a [out x in x kernel] weight as an [out x in] matrix.
template <typename T>
TapMap<T> weight_tap(const BasicTensor<T>& w, std::size_t k) {
  const auto in = static_cast<Eigen::Index>(w.dim(1));
  const auto kernel = static_cast<Eigen::Index>(w.dim(2));
  return TapMap<T>(w.data.data() + k, static_cast<Eigen::Index>(w.dim(0)), in,
                   Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(in * kernel, kernel));
}

// Columns [first, first+count) of a row-major [rows x steps] buffer.
template <typename T>
MatMap<T> columns(T* data, std::size_t rows, std::size_t steps,
                  std::size_t first, std::size_t count) {
  return MatMap<T>(data + first, static_cast<Eigen::Index>(rows),
                   static_cast<Eigen::Index>(count),
                   Eigen::OuterStride<>(static_cast<Eigen::Index>(steps)));
}
template <typename T>
ConstMatMap<T> columns(const T* data, std::size_t rows, std::size_t steps,
                       std::size_t first, std::size_t count) {
  return ConstMatMap<T>(data + first, static_cast<Eigen::Index>(rows),
                        static_cast<Eigen::Index>(count),
                        Eigen::OuterStride<>(static_cast<Eigen::Index>(steps)));
}

// Output channel o of an upsampler weight as a contiguous [in x kernel].
template <typename T>
ConstMatMap<T> channel_slice(const BasicTensor<T>& w, std::size_t o) {
  const std::size_t in_ch = w.dim(1), kernel = w.dim(2);
  return columns(w.data.data() + o * in_ch * kernel, in_ch, kernel, 0, kernel);
}

}  // namespace

template <typename T>
BasicTensor<T> conv1d_exact(const BasicTensor<T>& input,
                            const BasicTensor<T>& weight,
                            const BasicTensor<T>* bias, int dilation) {
  check_dilation(dilation);
  if (input.rank() != 2 || weight.rank() != 3 ||
      weight.dim(1) != input.dim(0)) {
    throw ShapeError("conv1d: input " + shape_string(input.shape) +
                     " vs weight " + shape_string(weight.shape));
  }
  const std::size_t out_ch = weight.dim(0), in_ch = weight.dim(1),
                    kernel = weight.dim(2), steps = input.dim(1);
  const auto d = static_cast<std::size_t>(dilation);
  BasicTensor<T> out({out_ch, steps});
  if (bias != nullptr && !bias->empty()) {
    for (std::size_t o = 0; o < out_ch; ++o) {
      std::fill_n(out.data.data() + o * steps, steps, bias->data[o]);
    }
  }
  for (std::size_t k = 0; k < kernel; ++k) {
    const std::size_t off = (kernel - 1 - k) * d;
    if (off >= steps) continue;
    columns(out.data.data(), out_ch, steps, off, steps - off).noalias() +=
        weight_tap(weight, k) * columns(input.data.data(), in_ch, steps, 0, steps - off);
  }
  return out;
}

template <typename T>
ConvGrads<T> conv1d_backward(const BasicTensor<T>& input,
                             const BasicTensor<T>& weight,
                             const BasicTensor<T>& grad_output, int dilation) {
  check_dilation(dilation);
  if (input.rank() != 2 || weight.rank() != 3 || grad_output.rank() != 2 ||
      weight.dim(1) != input.dim(0) || grad_output.dim(0) != weight.dim(0) ||
      grad_output.dim(1) != input.dim(1)) {
    throw ShapeError("conv1d_backward: inconsistent shapes " +
                     shape_string(input.shape) + ", " +
                     shape_string(weight.shape) + ", " +
                     shape_string(grad_output.shape));
  }
  const std::size_t out_ch = weight.dim(0), in_ch = weight.dim(1),
                    kernel = weight.dim(2), steps = input.dim(1);
  const auto d = static_cast<std::size_t>(dilation);
  ConvGrads<T> g{BasicTensor<T>(input.shape), BasicTensor<T>(weight.shape),
                 BasicTensor<T>({out_ch})};
  for (std::size_t o = 0; o < out_ch; ++o) {
    T bsum = 0;
    for (std::size_t t = 0; t < steps; ++t) bsum += grad_output.data[o * steps + t];
    g.bias.data[o] = bsum;
  }
  RowMat<T> gw;
  for (std::size_t k = 0; k < kernel; ++k) {
    const std::size_t off = (kernel - 1 - k) * d;
    if (off >= steps) continue;
    const auto gy = columns(grad_output.data.data(), out_ch, steps, off, steps - off);
    const auto x = columns(input.data.data(), in_ch, steps, 0, steps - off);
    gw.noalias() = gy * x.transpose();
    for (std::size_t o = 0; o < out_ch; ++o) {
      for (std::size_t c = 0; c < in_ch; ++c) {
        g.weight.data[(o * in_ch + c) * kernel + k] =
            gw(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(c));
      }
    }
    columns(g.input.data.data(), in_ch, steps, 0, steps - off).noalias() +=
        weight_tap(weight, k).transpose() * gy;
  }
  return g;
}

template <typename T>
BasicTensor<T> conv_transpose1d_exact(const BasicTensor<T>& features,
                                      const BasicTensor<T>& weight,
                                      const BasicTensor<T>& bias, int stride) {
  if (features.rank() != 2 || features.dim(1) == 0 || weight.rank() != 3 ||
      weight.dim(1) != features.dim(0) || bias.numel() != weight.dim(0) ||
      stride < 1) {
    throw ShapeError("conv_transpose1d: features " +
                     shape_string(features.shape) + " vs weight " +
                     shape_string(weight.shape));
  }
  const std::size_t out_ch = weight.dim(0), in_ch = weight.dim(1),
                    kernel = weight.dim(2), frames = features.dim(1);
  const auto s = static_cast<std::size_t>(stride);
  const std::size_t trim = upsample_trim(kernel, s);
  const std::size_t length = s * frames;
  const auto x = columns(features.data.data(), in_ch, frames, 0, frames);
  BasicTensor<T> out({out_ch, length});
  RowMat<T> z;  // z(j, f): frame f's contribution to sample f*s + j - trim
  for (std::size_t o = 0; o < out_ch; ++o) {
    z.noalias() = channel_slice(weight, o).transpose() * x;
    T* y = out.data.data() + o * length;
    std::fill(y, y + length, bias.data[o]);
    for (std::size_t f = 0; f < frames; ++f) {
      const std::size_t base = f * s;
      const std::size_t j0 = base >= trim ? 0 : trim - base;
      const std::size_t j1 = std::min(kernel, length + trim - base);
      for (std::size_t j = j0; j < j1; ++j) {
        y[base + j - trim] += z(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(f));
      }
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv_transpose1d_backward(const BasicTensor<T>& features,
                                       const BasicTensor<T>& weight,
                                       const BasicTensor<T>& grad_output,
                                       int stride) {
  if (features.rank() != 2 || weight.rank() != 3 || grad_output.rank() != 2 ||
      weight.dim(1) != features.dim(0) || grad_output.dim(0) != weight.dim(0) ||
      stride < 1 ||
      grad_output.dim(1) != static_cast<std::size_t>(stride) * features.dim(1)) {
    throw ShapeError("conv_transpose1d_backward: inconsistent shapes");
  }
  const std::size_t out_ch = weight.dim(0), in_ch = weight.dim(1),
                    kernel = weight.dim(2), frames = features.dim(1);
  const auto s = static_cast<std::size_t>(stride);
  const std::size_t trim = upsample_trim(kernel, s);
  const std::size_t length = s * frames;
  ConvGrads<T> g{BasicTensor<T>(features.shape), BasicTensor<T>(weight.shape),
                 BasicTensor<T>({out_ch})};
  const auto x = columns(features.data.data(), in_ch, frames, 0, frames);
  auto gx = columns(g.input.data.data(), in_ch, frames, 0, frames);
  RowMat<T> gz(static_cast<Eigen::Index>(kernel), static_cast<Eigen::Index>(frames));
  for (std::size_t o = 0; o < out_ch; ++o) {
    const T* gy = grad_output.data.data() + o * length;
    T bsum = 0;
    for (std::size_t n = 0; n < length; ++n) bsum += gy[n];
    g.bias.data[o] = bsum;
    gz.setZero();
    for (std::size_t f = 0; f < frames; ++f) {
      const std::size_t base = f * s;
      const std::size_t j0 = base >= trim ? 0 : trim - base;
      const std::size_t j1 = std::min(kernel, length + trim - base);
      for (std::size_t j = j0; j < j1; ++j) {
        gz(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(f)) = gy[base + j - trim];
      }
    }
    columns(g.weight.data.data() + o * in_ch * kernel, in_ch, kernel, 0, kernel).noalias() =
        x * gz.transpose();
    gx.noalias() += channel_slice(weight, o) * gz;
  }
  return g;
}

template BasicTensor<float> conv1d_exact(const BasicTensor<float>&,
                                         const BasicTensor<float>&,
                                         const BasicTensor<float>*, int);
template BasicTensor<double> conv1d_exact(const BasicTensor<double>&,
                                          const BasicTensor<double>&,
                                          const BasicTensor<double>*, int);
template ConvGrads<float> conv1d_backward(const BasicTensor<float>&,
                                          const BasicTensor<float>&,
                                          const BasicTensor<float>&, int);
template ConvGrads<double> conv1d_backward(const BasicTensor<double>&,
                                           const BasicTensor<double>&,
                                           const BasicTensor<double>&, int);
template BasicTensor<float> conv_transpose1d_exact(const BasicTensor<float>&,
                                                   const BasicTensor<float>&,
                                                   const BasicTensor<float>&,
                                                   int);
template BasicTensor<double> conv_transpose1d_exact(
    const BasicTensor<double>&, const BasicTensor<double>&,
    const BasicTensor<double>&, int);
template ConvGrads<float> conv_transpose1d_backward(const BasicTensor<float>&,
                                                    const BasicTensor<float>&,
                                                    const BasicTensor<float>&,
                                                    int);
template ConvGrads<double> conv_transpose1d_backward(
    const BasicTensor<double>&, const BasicTensor<double>&,
    const BasicTensor<double>&, int);

}  // namespace wavenet
