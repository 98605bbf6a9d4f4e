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

#include "wavenet/numerics.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cfloat>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace wavenet {
namespace {

constexpr std::array<FormatSpec, 7> kFormats = {{
    {FormatId::fp32, "FP32", FormatKind::floating, 8, 23, FormatId::fp32, 0},
    {FormatId::tf32, "TF32", FormatKind::floating, 8, 10, FormatId::fp32, 0},
    {FormatId::bfloat16, "bfloat16", FormatKind::floating, 8, 7,
     FormatId::fp32, 0},
    {FormatId::bfp16, "BFP16", FormatKind::block_floating, 8, 7,
     FormatId::fp32, kBfpBlockSize},
    {FormatId::fp16_16, "FP16.16", FormatKind::floating, 5, 10,
     FormatId::fp16_16, 0},
    {FormatId::fp16_32, "FP16.32", FormatKind::floating, 5, 10,
     FormatId::fp32, 0},
    {FormatId::int8, "INT8", FormatKind::integer, 0, 8, FormatId::int8, 0},
}};

// 2^k for k in the normal double range.
inline double pow2(int k) {
  return std::bit_cast<double>(static_cast<std::uint64_t>(k + 1023) << 52);
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return out;
}

}  // namespace

const FormatSpec& format_spec(FormatId id) {
  return kFormats[static_cast<std::size_t>(id)];
}

std::span<const FormatSpec> all_formats() { return kFormats; }

std::string_view format_name(FormatId id) { return format_spec(id).name; }

FormatId parse_format(std::string_view name) {
  const std::string key = lower(name);
  for (const auto& f : kFormats) {
    if (lower(f.name) == key) return f.id;
  }
  if (key == "bf16") return FormatId::bfloat16;
  throw ConfigError("unknown numeric format '" + std::string(name) + "'");
}

double round_to_format(double x, int exponent_bits, int mantissa_bits) {
  if (x == 0.0 || !std::isfinite(x)) return x;
  const int bias = (1 << (exponent_bits - 1)) - 1;
  const int emin = 1 - bias;
  const int emax = bias;
  const double a = std::fabs(x);
  int e = static_cast<int>(std::bit_cast<std::uint64_t>(a) >> 52) - 1023;
  if (e < emin) e = emin;  // subnormal range shares the minimum quantum
  const double quantum = pow2(e - mantissa_bits);
  double r = std::nearbyint(a / quantum) * quantum;
  const double max_finite =
      (2.0 - pow2(-mantissa_bits)) * pow2(emax);
  if (r > max_finite) r = std::numeric_limits<double>::infinity();
  return std::copysign(r, x);
}

float round_float(float x, int exponent_bits, int mantissa_bits) {
  if (exponent_bits == 8 && mantissa_bits == 23) return x;
  return static_cast<float>(
      round_to_format(static_cast<double>(x), exponent_bits, mantissa_bits));
}

IntQuantParams int8_params_from_max_abs(float max_abs, bool* degenerate) {
  const bool bad = !(max_abs > 0.0f) || !std::isfinite(max_abs);
  if (degenerate != nullptr) *degenerate = bad;
  if (bad) return {FLT_MIN};
  return {max_abs / static_cast<float>(kInt8Max)};
}

std::int8_t quantize_int8(float x, IntQuantParams p) {
  if (std::isnan(x)) return 0;
  double q = std::nearbyint(static_cast<double>(x) /
                            static_cast<double>(p.scale));
  q = std::clamp(q, -static_cast<double>(kInt8Max),
                 static_cast<double>(kInt8Max));
  return static_cast<std::int8_t>(q);
}

std::vector<std::int8_t> quantize_int8(std::span<const float> x,
                                       IntQuantParams p) {
  std::vector<std::int8_t> out(x.size());
  std::transform(x.begin(), x.end(), out.begin(),
                 [p](float v) { return quantize_int8(v, p); });
  return out;
}

void quantize_block_fp_inplace(float* first, std::size_t count,
                               std::size_t stride, int mantissa_bits) {
  float max_abs = 0.0f;
  for (std::size_t i = 0; i < count; ++i) {
    const float v = std::fabs(first[i * stride]);
    if (std::isfinite(v)) max_abs = std::max(max_abs, v);
  }
  if (max_abs == 0.0f) {
    for (std::size_t i = 0; i < count; ++i) {
      float& v = first[i * stride];
      if (std::isfinite(v)) v = std::copysign(0.0f, v);
    }
    return;
  }
  int e = std::ilogb(max_abs);
  e = std::clamp(e, -126, 127);  // 8-bit shared exponent
  const double step = pow2(e - (mantissa_bits - 1));
  const double max_mag = static_cast<double>((1 << mantissa_bits) - 1);
  for (std::size_t i = 0; i < count; ++i) {
    float& v = first[i * stride];
    if (!std::isfinite(v)) continue;
    const double m =
        std::min(std::nearbyint(std::fabs(static_cast<double>(v)) / step),
                 max_mag);
    v = std::copysign(static_cast<float>(m * step), v);
  }
}

Tensor quantize_block_fp(const Tensor& t, std::size_t channel_axis,
                         int block_size) {
  if (channel_axis >= t.rank()) {
    throw ShapeError("block axis " + std::to_string(channel_axis) +
                     " out of range for shape " + shape_string(t.shape));
  }
  if (block_size < 1) throw ConfigError("block size must be positive");
  Tensor out = t;
  const std::size_t len = t.shape[channel_axis];
  std::size_t inner = 1;
  for (std::size_t i = channel_axis + 1; i < t.rank(); ++i) {
    inner *= t.shape[i];
  }
  const std::size_t outer = len == 0 || inner == 0 ? 0 : t.numel() / (len * inner);
  const auto bs = static_cast<std::size_t>(block_size);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      float* line = out.data.data() + o * len * inner + i;
      for (std::size_t b = 0; b < len; b += bs) {
        quantize_block_fp_inplace(line + b * inner, std::min(bs, len - b),
                                  inner);
      }
    }
  }
  return out;
}

std::size_t parameter_channel_axis(const std::vector<std::size_t>& shape) {
  return shape.size() >= 2 ? 1 : 0;
}

Tensor quantize_tensor(const Tensor& t, const FormatSpec& f,
                       const IntQuantParams* int_params) {
  switch (f.kind) {
    case FormatKind::floating: {
      if (f.exponent_bits == 8 && f.mantissa_bits == 23) return t;
      Tensor out = t;
      for (float& v : out.data) {
        v = round_float(v, f.exponent_bits, f.mantissa_bits);
      }
      return out;
    }
    case FormatKind::block_floating:
      if (t.rank() == 0) return t;
      return quantize_block_fp(t, parameter_channel_axis(t.shape),
                               f.block_size);
    case FormatKind::integer: {
      if (int_params == nullptr) {
        throw CalibrationRequired(std::string(f.name) +
                                  " requires calibrated scales");
      }
      Tensor out = t;
      for (float& v : out.data) v = fake_quantize_int8(v, *int_params);
      return out;
    }
  }
  return t;
}

Rational bits_per_value(const FormatSpec& f,
                        const std::vector<std::size_t>& shape) {
  switch (f.kind) {
    case FormatKind::floating:
      return {static_cast<std::uint64_t>(1 + f.exponent_bits +
                                         f.mantissa_bits),
              1};
    case FormatKind::integer:
      return {static_cast<std::uint64_t>(f.mantissa_bits), 1};
    case FormatKind::block_floating: {
      const std::uint64_t element_bits =
          static_cast<std::uint64_t>(1 + f.mantissa_bits);
      const std::uint64_t numel = Tensor::count(shape);
      if (shape.empty() || numel == 0) {
        return {element_bits * static_cast<std::uint64_t>(f.block_size) +
                    static_cast<std::uint64_t>(f.exponent_bits),
                static_cast<std::uint64_t>(f.block_size)};
      }
      const std::uint64_t len = shape[parameter_channel_axis(shape)];
      const std::uint64_t lines = numel / len;
      const std::uint64_t bs = static_cast<std::uint64_t>(f.block_size);
      const std::uint64_t blocks = lines * ((len + bs - 1) / bs);
      std::uint64_t num =
          static_cast<std::uint64_t>(f.exponent_bits) * blocks +
          element_bits * numel;
      std::uint64_t den = numel;
      const std::uint64_t g = std::gcd(num, den);
      return {num / g, den / g};
    }
  }
  return {32, 1};
}

double storage_bits(const FormatSpec& f, const std::vector<std::size_t>& shape,
                    std::uint64_t stored_values) {
  const Rational r = bits_per_value(f, shape);
  return static_cast<double>(stored_values) * static_cast<double>(r.num) /
         static_cast<double>(r.den);
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) s += " x ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace wavenet
