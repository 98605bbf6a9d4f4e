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

#include "wavenet/audio_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

namespace wavenet {
namespace {

constexpr std::uint16_t kPcmFormat = 1;
constexpr std::uint16_t kBitsPerSample = 16;
constexpr char kFeatureMagic[4] = {'W', 'N', 'F', '1'};
constexpr std::uint32_t kFeatureVersion = 1;

std::uint16_t get_u16(std::span<const std::uint8_t> in, std::size_t off) {
  return static_cast<std::uint16_t>(in[off] | (in[off + 1] << 8));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_tag(std::vector<std::uint8_t>& out, const char (&tag)[5]) {
  out.insert(out.end(), tag, tag + 4);
}

bool tag_is(std::span<const std::uint8_t> in, std::size_t off,
            const char* tag) {
  return std::memcmp(in.data() + off, tag, 4) == 0;
}

}  // namespace

Tensor FeatureMatrix::channel_major() const {
  Tensor t({bands, frames});
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t b = 0; b < bands; ++b) t.at(b, f) = at(f, b);
  }
  return t;
}

int mulaw_silence_code(int channels) { return channels / 2; }

int mulaw_encode(float x, int channels) {
  const double mu = channels - 1;
  const double v = std::clamp(static_cast<double>(x), -1.0, 1.0);
  const double y = std::copysign(std::log1p(mu * std::fabs(v)) / std::log1p(mu), v);
  const double code = std::floor((y + 1.0) / 2.0 * mu + 0.5);
  return static_cast<int>(std::clamp(code, 0.0, mu));
}

float mulaw_decode(int code, int channels) {
  if (code < 0 || code >= channels) {
    throw Error("mu-law code " + std::to_string(code) + " out of range");
  }
  if (code == mulaw_silence_code(channels)) return 0.0f;
  const double mu = channels - 1;
  const double y = 2.0 * code / mu - 1.0;
  const double x = std::expm1(std::fabs(y) * std::log1p(mu)) / mu;
  return static_cast<float>(std::copysign(std::min(x, 1.0), y));
}

std::vector<int> mulaw_encode(std::span<const float> samples, int channels) {
  std::vector<int> codes(samples.size());
  std::transform(samples.begin(), samples.end(), codes.begin(),
                 [channels](float s) { return mulaw_encode(s, channels); });
  return codes;
}

// ---------------------------------------------------------------------------

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
  }
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t off) {
  return static_cast<std::uint32_t>(in[off]) |
         (static_cast<std::uint32_t>(in[off + 1]) << 8) |
         (static_cast<std::uint32_t>(in[off + 2]) << 16) |
         (static_cast<std::uint32_t>(in[off + 3]) << 24);
}

float get_f32(std::span<const std::uint8_t> in, std::size_t off) {
  return std::bit_cast<float>(get_u32(in, off));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path,
                std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to '" + path.string() + "'");
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_wav(const AudioClip& clip) {
  if (clip.sample_rate != kSampleRate) {
    throw FormatError("only 16 kHz audio is supported, got " +
                      std::to_string(clip.sample_rate));
  }
  const auto data_bytes = static_cast<std::uint32_t>(clip.size() * 2);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  put_tag(out, "RIFF");
  put_u32(out, 36 + data_bytes);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, kPcmFormat);
  put_u16(out, 1);
  put_u32(out, kSampleRate);
  put_u32(out, kSampleRate * 2);
  put_u16(out, 2);
  put_u16(out, kBitsPerSample);
  put_tag(out, "data");
  put_u32(out, data_bytes);
  for (float s : clip.samples) {
    const double q = std::clamp(std::nearbyint(static_cast<double>(s) * 32768.0),
                                -32768.0, 32767.0);
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  return out;
}

AudioClip decode_wav(std::span<const std::uint8_t> in) {
  if (in.size() < 12 || !tag_is(in, 0, "RIFF") || !tag_is(in, 8, "WAVE")) {
    throw FormatError("not a RIFF/WAVE file");
  }
  bool have_fmt = false;
  std::size_t off = 12;
  while (off + 8 <= in.size()) {
    const std::uint32_t size = get_u32(in, off + 4);
    const std::size_t body = off + 8;
    if (body + size > in.size()) throw FormatError("truncated WAV chunk");
    if (tag_is(in, off, "fmt ")) {
      if (size < 16) throw FormatError("short fmt chunk");
      const std::uint16_t fmt = get_u16(in, body);
      const std::uint16_t channels = get_u16(in, body + 2);
      const std::uint32_t rate = get_u32(in, body + 4);
      const std::uint16_t bits = get_u16(in, body + 14);
      if (fmt != kPcmFormat || bits != kBitsPerSample) {
        throw FormatError("unsupported WAV encoding (need 16-bit PCM)");
      }
      if (channels != 1) {
        throw FormatError("unsupported WAV layout: " +
                          std::to_string(channels) + " channels, need mono");
      }
      if (rate != static_cast<std::uint32_t>(kSampleRate)) {
        throw FormatError("unsupported sample rate " + std::to_string(rate));
      }
      have_fmt = true;
    } else if (tag_is(in, off, "data")) {
      if (!have_fmt) throw FormatError("WAV data chunk before fmt chunk");
      AudioClip clip;
      clip.samples.resize(size / 2);
      for (std::size_t i = 0; i < clip.samples.size(); ++i) {
        const auto v = static_cast<std::int16_t>(get_u16(in, body + 2 * i));
        clip.samples[i] = static_cast<float>(v) / 32768.0f;
      }
      return clip;
    }
    off = body + size + (size & 1);
  }
  throw FormatError("WAV file has no data chunk");
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  write_file(path, encode_wav(clip));
}

AudioClip read_wav(const std::filesystem::path& path) {
  return decode_wav(read_file(path));
}

// ---------------------------------------------------------------------------

void write_features(const std::filesystem::path& path,
                    const FeatureMatrix& fm) {
  if (fm.data.size() != fm.frames * fm.bands) {
    throw ShapeError("feature matrix payload does not match its dimensions");
  }
  std::vector<std::uint8_t> out(kFeatureMagic, kFeatureMagic + 4);
  put_u32(out, kFeatureVersion);
  put_u32(out, static_cast<std::uint32_t>(fm.frames));
  put_u32(out, static_cast<std::uint32_t>(fm.bands));
  for (float v : fm.data) put_f32(out, v);
  write_file(path, out);
}

FeatureMatrix read_features(const std::filesystem::path& path,
                            std::optional<std::size_t> expected_bands) {
  const std::vector<std::uint8_t> in = read_file(path);
  if (in.size() < 16 || std::memcmp(in.data(), kFeatureMagic, 4) != 0) {
    throw FormatError("'" + path.string() + "' is not a WNF1 feature file");
  }
  if (get_u32(in, 4) != kFeatureVersion) {
    throw FormatError("unsupported WNF1 version " +
                      std::to_string(get_u32(in, 4)));
  }
  FeatureMatrix fm(get_u32(in, 8), get_u32(in, 12));
  if (expected_bands && fm.bands != *expected_bands) {
    throw FormatError("feature file has " + std::to_string(fm.bands) +
                      " bands, model expects " +
                      std::to_string(*expected_bands));
  }
  if (in.size() != 16 + 4 * fm.data.size()) {
    throw FormatError("truncated WNF1 payload in '" + path.string() + "'");
  }
  for (std::size_t i = 0; i < fm.data.size(); ++i) {
    fm.data[i] = get_f32(in, 16 + 4 * i);
  }
  return fm;
}

}  // namespace wavenet
