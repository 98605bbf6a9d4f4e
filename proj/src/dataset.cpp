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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "wavenet/audio_io.hpp"
#include "wavenet/error.hpp"
#include "wavenet/kernels.hpp"

namespace wavenet {
namespace {

constexpr double kMinPitch = 80.0;
constexpr double kMaxPitch = 400.0;
constexpr float kLogAmplitudeWeight = 0.25f;

std::size_t pitch_band(double f0) {
  const double rel = (f0 - kMinPitch) / (kMaxPitch - kMinPitch);
  const double band = std::nearbyint(std::clamp(rel, 0.0, 1.0) * (kMelBins - 1));
  return static_cast<std::size_t>(band);
}

void fill_frame(FeatureMatrix& fm, std::size_t frame, std::size_t band,
                double amplitude) {
  const float log_amp =
      kLogAmplitudeWeight * static_cast<float>(std::log(std::max(amplitude, 1e-3)));
  for (std::size_t b = 0; b < fm.bands; ++b) {
    fm.at(frame, b) = (b == band ? 1.0f : 0.0f) + log_amp;
  }
}

std::size_t frame_aligned_samples(double seconds) {
  const auto n = static_cast<std::size_t>(std::floor(seconds * kSampleRate));
  return n - n % kHopLength;
}

}  // namespace

Dataset synth_dataset(std::uint64_t seed, std::size_t clips,
                      double duration_seconds) {
  if (clips == 0) throw ConfigError("synthetic dataset needs >= 1 clip");
  const std::size_t samples = frame_aligned_samples(duration_seconds);
  if (samples == 0) throw ConfigError("synthetic clip shorter than one frame");
  const std::size_t frames = samples / kHopLength;
  constexpr double two_pi = 2.0 * std::numbers::pi;

  Dataset data;
  data.reserve(clips);
  for (std::size_t i = 0; i < clips; ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed),
                      static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(i)};
    Rng rng(seq);
    const double f0 = kMinPitch + (kMaxPitch - kMinPitch) * uniform01(rng);
    const double rate = 0.5 + 2.5 * uniform01(rng);
    const double phase = two_pi * uniform01(rng);
    const double harmonic_phase[3] = {two_pi * uniform01(rng),
                                      two_pi * uniform01(rng),
                                      two_pi * uniform01(rng)};

    Example ex;
    ex.name = "synth_" + std::to_string(i);
    ex.audio.samples.resize(samples);
    ex.features = FeatureMatrix(frames, kMelBins);
    const std::size_t band = pitch_band(f0);
    for (std::size_t f = 0; f < frames; ++f) {
      const double t = (static_cast<double>(f) + 0.5) * kHopLength / kSampleRate;
      const double env = 0.1 + 0.7 * (0.5 + 0.5 * std::sin(two_pi * rate * t + phase));
      fill_frame(ex.features, f, band, env);
      for (std::size_t n = f * kHopLength; n < (f + 1) * kHopLength; ++n) {
        const double ts = static_cast<double>(n) / kSampleRate;
        double v = 0.0;
        for (int h = 0; h < 3; ++h) {
          v += std::sin(two_pi * (h + 1) * f0 * ts + harmonic_phase[h]) /
               (1 << h);
        }
        ex.audio.samples[n] = static_cast<float>(env * v / 1.75);
      }
    }
    data.push_back(std::move(ex));
  }
  return data;
}

Example sine_example(double frequency_hz, double duration_seconds,
                     float amplitude) {
  const std::size_t samples = frame_aligned_samples(duration_seconds);
  if (samples == 0) throw ConfigError("sine clip shorter than one frame");
  Example ex;
  ex.name = "sine_" + std::to_string(static_cast<int>(frequency_hz));
  ex.audio.samples.resize(samples);
  for (std::size_t n = 0; n < samples; ++n) {
    ex.audio.samples[n] = amplitude * static_cast<float>(std::sin(
        2.0 * std::numbers::pi * frequency_hz * static_cast<double>(n) /
        kSampleRate));
  }
  ex.features = FeatureMatrix(samples / kHopLength, kMelBins);
  for (std::size_t f = 0; f < ex.features.frames; ++f) {
    fill_frame(ex.features, f, pitch_band(frequency_hz), amplitude);
  }
  return ex;
}

Dataset read_dataset_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw Error("cannot open dataset manifest '" + manifest.string() + "'");
  const std::filesystem::path base = manifest.parent_path();
  Dataset data;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    std::string wav, features;
    if (!(fields >> wav >> features)) {
      throw FormatError("malformed manifest line: '" + line + "'");
    }
    Example ex;
    ex.name = std::filesystem::path(wav).stem().string();
    ex.audio = read_wav(base / wav);
    ex.features = read_features(base / features);
    data.push_back(std::move(ex));
  }
  if (data.empty()) throw FormatError("dataset manifest lists no clips");
  return data;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& data) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw Error("cannot write manifest in '" + dir.string() + "'");
  for (const Example& ex : data) {
    write_wav(dir / (ex.name + ".wav"), ex.audio);
    write_features(dir / (ex.name + ".wnf"), ex.features);
    manifest << ex.name << ".wav " << ex.name << ".wnf\n";
  }
}

}  // namespace wavenet
