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

#include <cstdint>
#include <span>
#include <vector>

#include "wavenet/audio_io.hpp"
#include "wavenet/model.hpp"

namespace wavenet {

struct CalibrationClip {
  FeatureMatrix features;
  // Teacher-forcing codes; when empty they are generated in FP32.
  std::vector<int> codes;
};

// Weight scales are max-abs/127 per tensor; activation scales are max-abs
// over an FP32 teacher-forced pass of every clip, per site, /127. A zero
// tensor or silent site gets the smallest normal scale and is listed in
// Calibration::degenerate.
Calibration calibrate_int8(const Parameters& params,
                           std::span<const CalibrationClip> clips,
                           std::uint64_t seed = 0);

Calibration calibrate_int8(const Parameters& params,
                           std::span<const FeatureMatrix> features,
                           std::uint64_t seed = 0);

Calibration calibrate_int8(const Parameters& params, const Dataset& data);

}  // namespace wavenet
