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

#include "wavenet/calibration.hpp"

#include <algorithm>
#include <cmath>

namespace wavenet {

Calibration calibrate_int8(const Parameters& params,
                           std::span<const CalibrationClip> clips,
                           std::uint64_t seed) {
  if (clips.empty()) throw ConfigError("calibration set is empty");
  Calibration cal;
  params.for_each([&](const std::string& name, const Tensor& t) {
    if (is_bias(name)) return;
    float max_abs = 0.0f;
    for (float v : t.data) max_abs = std::max(max_abs, std::fabs(v));
    bool degenerate = false;
    cal.weights[name] = int8_params_from_max_abs(max_abs, &degenerate);
    if (degenerate) cal.degenerate.push_back(name);
  });

  const InferenceModel fp32(params, PrecisionContext{FormatId::fp32});
  ActivationRecorder recorder;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const CalibrationClip& clip = clips[i];
    if (!clip.codes.empty()) {
      fp32.forward(clip.features, clip.codes, &recorder);
      continue;
    }
    GenerationState st = fp32.start(clip.features, seed + i);
    std::vector<int> codes;
    codes.reserve(st.length());
    while (!st.done()) codes.push_back(st.step());
    fp32.forward(clip.features, codes, &recorder);
  }
  for (const auto& [site, max_abs] : recorder.max_abs) {
    bool degenerate = false;
    cal.activations[site] = int8_params_from_max_abs(max_abs, &degenerate);
    if (degenerate) cal.degenerate.push_back(site);
  }
  return cal;
}

Calibration calibrate_int8(const Parameters& params,
                           std::span<const FeatureMatrix> features,
                           std::uint64_t seed) {
  std::vector<CalibrationClip> clips;
  for (const FeatureMatrix& f : features) clips.push_back({f, {}});
  return calibrate_int8(params, clips, seed);
}

Calibration calibrate_int8(const Parameters& params, const Dataset& data) {
  std::vector<CalibrationClip> clips;
  const auto stride = static_cast<std::size_t>(params.config.upsample_stride);
  for (const Example& ex : data) {
    CalibrationClip clip{ex.features, mulaw_encode(ex.audio.samples,
                                                   params.config.audio_channels)};
    clip.codes.resize(std::min(clip.codes.size(), ex.features.frames * stride));
    clips.push_back(std::move(clip));
  }
  return calibrate_int8(params, clips);
}

}  // namespace wavenet
