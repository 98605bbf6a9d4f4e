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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wavenet/tensor.hpp"

namespace wavenet {

inline constexpr int kSampleRate = 16000;
inline constexpr int kMelBins = 80;
inline constexpr int kHopLength = 200;
inline constexpr int kMuLawChannels = 256;
// Code of 0.0 amplitude; also the code assumed before the first sample.
inline constexpr int kSilenceCode = 128;

// Mono audio with samples in [-1, 1].
struct AudioClip {
  std::vector<float> samples;
  int sample_rate = kSampleRate;

  std::size_t size() const noexcept { return samples.size(); }
};

// Conditioning frames, frame-major: data[frame * bands + band].
struct FeatureMatrix {
  std::size_t frames = 0;
  std::size_t bands = kMelBins;
  std::vector<float> data;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t frames_, std::size_t bands_)
      : frames(frames_), bands(bands_), data(frames_ * bands_, 0.0f) {}

  float& at(std::size_t frame, std::size_t band) {
    return data[frame * bands + band];
  }
  float at(std::size_t frame, std::size_t band) const {
    return data[frame * bands + band];
  }
  // [bands x frames], the layout the convolutions consume.
  Tensor channel_major() const;

  bool operator==(const FeatureMatrix&) const = default;
};

// mu-law companding with `channels` levels (mu = channels - 1). encode maps
// +1 to channels - 1 and -1 to 0; decode returns the bin centre, exactly 0.0
// for the silence code. Inputs outside [-1, 1] are clamped.
int mulaw_encode(float x, int channels = kMuLawChannels);
float mulaw_decode(int code, int channels = kMuLawChannels);
std::vector<int> mulaw_encode(std::span<const float> samples,
                              int channels = kMuLawChannels);
int mulaw_silence_code(int channels = kMuLawChannels);

// 16-bit PCM mono RIFF/WAVE at 16 kHz with the canonical 44-byte header.
void write_wav(const std::filesystem::path& path, const AudioClip& clip);
AudioClip read_wav(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_wav(const AudioClip& clip);
AudioClip decode_wav(std::span<const std::uint8_t> bytes);

// WNF1: "WNF1", u32 version, u32 frames, u32 bands, then frame-major
// little-endian float32 values.
void write_features(const std::filesystem::path& path, const FeatureMatrix& fm);
FeatureMatrix read_features(const std::filesystem::path& path,
                            std::optional<std::size_t> expected_bands = kMelBins);

struct Example {
  std::string name;
  AudioClip audio;
  FeatureMatrix features;
};
using Dataset = std::vector<Example>;

// Deterministic harmonic tones with a per-frame amplitude envelope. Each
// frame's features are a one-hot pitch band plus the log-amplitude, so the
// features determine the waveform family.
Dataset synth_dataset(std::uint64_t seed, std::size_t clips,
                      double duration_seconds);

// A constant-amplitude sine with matching synthetic features.
Example sine_example(double frequency_hz, double duration_seconds,
                     float amplitude = 0.5f);

// Dataset manifest: one "<wav> <features>" pair per line, paths relative
// to the manifest; blank lines and '#' comments are skipped.
Dataset read_dataset_manifest(const std::filesystem::path& manifest);
void write_dataset(const std::filesystem::path& dir, const Dataset& data);

// Little-endian helpers shared by the binary formats.
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_f32(std::vector<std::uint8_t>& out, float v);
std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t offset);
float get_f32(std::span<const std::uint8_t> in, std::size_t offset);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path,
                std::span<const std::uint8_t> bytes);

}  // namespace wavenet
