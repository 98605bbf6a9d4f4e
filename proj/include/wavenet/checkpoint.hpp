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
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "wavenet/compression.hpp"
#include "wavenet/model.hpp"
#include "wavenet/numerics.hpp"

namespace wavenet {

struct Checkpoint {
  Parameters params;
  MaskSet masks;
  FormatId format = FormatId::fp32;
  std::optional<Calibration> calibration;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> metadata;
  std::optional<ScheduleSet> schedules;
  long step = 0;
};

// Container: the line "WNCK1", the manifest byte length on its own line,
// a JSON manifest, then the raw little-endian blobs. Every blob carries a
// CRC-32 in the manifest.
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

// Retags a checkpoint. INT8 and BFP16 weights are stored pre-quantized;
// floating formats are converted on the fly at inference.
Checkpoint quantize_checkpoint(const Checkpoint& ck, FormatId format,
                               const Calibration* calibration = nullptr);

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

}  // namespace wavenet
