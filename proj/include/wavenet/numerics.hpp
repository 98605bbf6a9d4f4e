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

// Emulation of the seven storage/arithmetic formats compared for the
// compressed vocoder: FP32, TF32, bfloat16, BFP16, FP16.16, FP16.32, INT8.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "wavenet/tensor.hpp"

namespace wavenet {

enum class FormatId : std::uint8_t {
  fp32,
  tf32,
  bfloat16,
  bfp16,
  fp16_16,
  fp16_32,
  int8,
};

enum class FormatKind : std::uint8_t { floating, block_floating, integer };

inline constexpr int kBfpBlockSize = 10;

struct FormatSpec {
  FormatId id;
  std::string_view name;
  FormatKind kind;
  int exponent_bits;
  int mantissa_bits;
  // Format used for sums and activation functions. FP16 accumulation is
  // expressed as fp16_16, whose layout is binary16.
  FormatId accumulation;
  int block_size;  // block-floating only, otherwise 0

  bool is_integer() const noexcept { return kind == FormatKind::integer; }
};

const FormatSpec& format_spec(FormatId id);
// All seven formats in table order.
std::span<const FormatSpec> all_formats();
// Accepts the canonical names ("FP16.32") case-insensitively, plus "bf16".
FormatId parse_format(std::string_view name);
std::string_view format_name(FormatId id);

// Nearest value of a binary floating format with `exponent_bits` and
// `mantissa_bits` (IEEE-style bias, subnormals, no NaN payloads).
// Round-to-nearest-even; overflow goes to signed infinity; NaN propagates.
float round_float(float x, int exponent_bits, int mantissa_bits);

// Same rounding applied to a double-precision intermediate (accumulators).
double round_to_format(double x, int exponent_bits, int mantissa_bits);

// Symmetric per-tensor integer quantization. The zero point is fixed at 0
// so that 0.0 is represented exactly.
struct IntQuantParams {
  float scale = 1.0f;
  static constexpr std::int32_t zero_point = 0;

  bool operator==(const IntQuantParams&) const = default;
};

inline constexpr int kInt8Max = 127;

// scale = max_abs / 127. An all-zero tensor gets the smallest positive
// normal float as a sentinel and sets *degenerate.
IntQuantParams int8_params_from_max_abs(float max_abs,
                                        bool* degenerate = nullptr);

std::int8_t quantize_int8(float x, IntQuantParams p);
std::vector<std::int8_t> quantize_int8(std::span<const float> x,
                                       IntQuantParams p);
inline float dequantize_int8(std::int8_t q, IntQuantParams p) {
  return static_cast<float>(q) * p.scale;
}
inline float fake_quantize_int8(float x, IntQuantParams p) {
  return dequantize_int8(quantize_int8(x, p), p);
}

// Block floating point: consecutive runs of `block_size` elements along
// `channel_axis` share the exponent of their largest element; each element
// keeps a sign and a 7-bit magnitude aligned to that exponent.
Tensor quantize_block_fp(const Tensor& t, std::size_t channel_axis,
                         int block_size = kBfpBlockSize);
// One block of `count` values spaced `stride` apart, in place.
void quantize_block_fp_inplace(float* first, std::size_t count,
                               std::size_t stride,
                               int mantissa_bits = 7);

// Axis along which parameters are blocked: input channels for weights,
// the only axis for vectors.
std::size_t parameter_channel_axis(const std::vector<std::size_t>& shape);

// Elementwise for floating kinds, block-wise along the parameter channel
// axis for BFP16, fake-quantized (quantize then dequantize) for INT8.
// Throws CalibrationRequired for INT8 without params.
Tensor quantize_tensor(const Tensor& t, const FormatSpec& f,
                       const IntQuantParams* int_params = nullptr);

struct Rational {
  std::uint64_t num = 0;
  std::uint64_t den = 1;
  double value() const noexcept {
    return static_cast<double>(num) / static_cast<double>(den);
  }
};

// Average storage cost of one value of a tensor with `shape`. Block formats
// pay one 8-bit exponent per (possibly partial) block.
Rational bits_per_value(const FormatSpec& f,
                        const std::vector<std::size_t>& shape);

// Bits needed to store `stored_values` entries of a tensor with `shape`.
double storage_bits(const FormatSpec& f, const std::vector<std::size_t>& shape,
                    std::uint64_t stored_values);

}  // namespace wavenet
