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

#include "wavenet/checkpoint.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <string_view>

#include "wavenet/audio_io.hpp"
#include "wavenet/serialize.hpp"

namespace wavenet {
namespace {

using nlohmann::json;

constexpr std::string_view kMagic = "WNCK1\n";

bool stored_as_int8(const Checkpoint& ck, const std::string& name) {
  return ck.format == FormatId::int8 && !is_bias(name);
}

std::vector<std::uint8_t> pack_bits(const std::vector<std::uint8_t>& keep) {
  std::vector<std::uint8_t> out((keep.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (keep[i] != 0) out[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
  return out;
}

std::vector<std::uint8_t> unpack_bits(std::span<const std::uint8_t> bits,
                                      std::size_t n) {
  std::vector<std::uint8_t> keep(n);
  for (std::size_t i = 0; i < n; ++i) keep[i] = (bits[i / 8] >> (i % 8)) & 1u;
  return keep;
}

std::span<const std::uint8_t> blob_at(std::span<const std::uint8_t> blobs,
                                      const json& entry,
                                      const std::string& owner) {
  const auto offset = entry.at("offset").get<std::uint64_t>();
  const auto bytes = entry.at("bytes").get<std::uint64_t>();
  if (offset > blobs.size() || bytes > blobs.size() - offset) {
    throw FormatError("blob for '" + owner + "' lies outside the file");
  }
  const auto blob = blobs.subspan(offset, bytes);
  if (crc32_of(blob) != entry.at("crc32").get<std::uint32_t>()) {
    throw ChecksumError(owner, "checksum mismatch in blob for '" + owner + "'");
  }
  return blob;
}

}  // namespace

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto chunk = static_cast<uInt>(
        std::min<std::size_t>(bytes.size() - done, 1u << 30));
    crc = crc32(crc, bytes.data() + done, chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  std::vector<std::uint8_t> blobs;
  json tensors = json::array();
  ck.params.for_each([&](const std::string& name, const Tensor& t) {
    const std::size_t offset = blobs.size();
    json entry{{"name", name}, {"shape", t.shape}, {"offset", offset}};
    if (stored_as_int8(ck, name)) {
      const auto it = ck.calibration ? ck.calibration->weights.find(name)
                                     : decltype(ck.calibration->weights.end()){};
      if (!ck.calibration || it == ck.calibration->weights.end()) {
        throw CalibrationRequired("INT8 checkpoint lacks a scale for '" + name + "'");
      }
      for (std::int8_t q : quantize_int8(t.data, it->second)) {
        blobs.push_back(static_cast<std::uint8_t>(q));
      }
      entry["dtype"] = "i8";
      entry["scale"] = it->second.scale;
    } else {
      blobs.reserve(blobs.size() + 4 * t.numel());
      for (float v : t.data) put_f32(blobs, v);
      entry["dtype"] = "f32";
    }
    entry["bytes"] = blobs.size() - offset;
    entry["crc32"] = crc32_of(std::span(blobs).subspan(offset));
    tensors.push_back(entry);
  });

  json masks = json::array();
  for (const auto& [name, m] : ck.masks) {
    const std::size_t offset = blobs.size();
    const std::vector<std::uint8_t> bits = pack_bits(m.keep);
    blobs.insert(blobs.end(), bits.begin(), bits.end());
    masks.push_back({{"tensor", name},
                     {"scheme", scheme_name(m.scheme)},
                     {"shape", m.shape},
                     {"kept", m.kept()},
                     {"offset", offset},
                     {"bytes", bits.size()},
                     {"crc32", crc32_of(bits)}});
  }

  json manifest{{"container", 1},
                {"config", ck.params.config},
                {"format", format_name(ck.format)},
                {"seed", ck.seed},
                {"step", ck.step},
                {"metadata", ck.metadata},
                {"tensors", tensors},
                {"masks", masks}};
  if (ck.calibration) manifest["calibration"] = *ck.calibration;
  if (ck.schedules) manifest["schedules"] = *ck.schedules;

  const std::string text = manifest.dump(1);
  std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
  const std::string len = std::to_string(text.size()) + "\n";
  out.insert(out.end(), len.begin(), len.end());
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), blobs.begin(), blobs.end());
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMagic.size() ||
      !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw FormatError("not a checkpoint: bad magic");
  }
  std::size_t pos = kMagic.size();
  std::size_t manifest_len = 0;
  bool digits = false;
  while (pos < bytes.size() && bytes[pos] != '\n') {
    if (bytes[pos] < '0' || bytes[pos] > '9' || manifest_len > (1u << 30)) {
      throw FormatError("checkpoint manifest length is malformed");
    }
    manifest_len = manifest_len * 10 + (bytes[pos] - '0');
    digits = true;
    ++pos;
  }
  if (!digits || pos >= bytes.size()) throw FormatError("checkpoint header truncated");
  ++pos;
  if (manifest_len > bytes.size() - pos) throw FormatError("checkpoint manifest truncated");
  json manifest;
  try {
    manifest = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                           bytes.begin() + static_cast<std::ptrdiff_t>(pos + manifest_len));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }
  const auto blobs = bytes.subspan(pos + manifest_len);

  Checkpoint ck;
  try {
    ck.params = allocate_parameters(manifest.at("config").get<ModelConfig>());
    ck.format = parse_format(manifest.at("format").get<std::string>());
    ck.seed = manifest.value("seed", std::uint64_t{0});
    ck.step = manifest.value("step", 0L);
    ck.metadata = manifest.value("metadata", std::map<std::string, std::string>{});
    if (manifest.contains("calibration")) ck.calibration = manifest["calibration"].get<Calibration>();
    if (manifest.contains("schedules")) ck.schedules = manifest["schedules"].get<ScheduleSet>();

    const json& tensors = manifest.at("tensors");
    std::size_t index = 0;
    ck.params.for_each([&](const std::string& name, Tensor& t) {
      if (index >= tensors.size()) throw FormatError("manifest lacks tensor '" + name + "'");
      const json& e = tensors[index++];
      if (e.at("name").get<std::string>() != name) {
        throw FormatError("manifest lists '" + e.at("name").get<std::string>() +
                          "' where '" + name + "' was expected");
      }
      if (e.at("shape").get<std::vector<std::size_t>>() != t.shape) {
        throw FormatError("manifest shape of '" + name + "' disagrees with config");
      }
      const auto blob = blob_at(blobs, e, name);
      const std::string dtype = e.at("dtype").get<std::string>();
      if (dtype == "f32") {
        if (blob.size() != 4 * t.numel()) throw FormatError("blob size mismatch for '" + name + "'");
        for (std::size_t i = 0; i < t.numel(); ++i) t.data[i] = get_f32(blob, 4 * i);
      } else if (dtype == "i8") {
        if (blob.size() != t.numel()) throw FormatError("blob size mismatch for '" + name + "'");
        const IntQuantParams p{e.at("scale").get<float>()};
        for (std::size_t i = 0; i < t.numel(); ++i) {
          t.data[i] = dequantize_int8(static_cast<std::int8_t>(blob[i]), p);
        }
      } else {
        throw FormatError("unknown dtype '" + dtype + "' for '" + name + "'");
      }
    });
    if (index != tensors.size()) throw FormatError("manifest lists extra tensors");

    for (const json& e : manifest.at("masks")) {
      Mask m;
      m.tensor = e.at("tensor").get<std::string>();
      m.scheme = parse_scheme(e.at("scheme").get<std::string>());
      m.shape = e.at("shape").get<std::vector<std::size_t>>();
      const Tensor* t = ck.params.find(m.tensor);
      if (t == nullptr || t->shape != m.shape) {
        throw FormatError("mask '" + m.tensor + "' does not match any tensor");
      }
      const auto blob = blob_at(blobs, e, "mask:" + m.tensor);
      if (blob.size() != (t->numel() + 7) / 8) {
        throw FormatError("mask blob size mismatch for '" + m.tensor + "'");
      }
      m.keep = unpack_bits(blob, t->numel());
      if (m.kept() != e.at("kept").get<std::size_t>()) {
        throw FormatError("mask popcount mismatch for '" + m.tensor + "'");
      }
      ck.masks[m.tensor] = std::move(m);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint manifest is incomplete: ") + e.what());
  }
  return ck;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  write_file(path, encode_checkpoint(ck));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

Checkpoint quantize_checkpoint(const Checkpoint& ck, FormatId format,
                               const Calibration* calibration) {
  if (ck.format != FormatId::fp32) {
    throw ConfigError("only FP32 checkpoints can be quantized, this one is " +
                      std::string(format_name(ck.format)));
  }
  Checkpoint out = ck;
  out.format = format;
  const FormatSpec& f = format_spec(format);
  if (f.is_integer()) {
    if (calibration == nullptr) {
      throw CalibrationRequired("INT8 quantization requires calibration data");
    }
    out.calibration = *calibration;
    out.params.for_each([&](const std::string& name, Tensor& t) {
      if (is_bias(name)) return;
      const IntQuantParams& p = calibration->weights.at(name);
      for (float& v : t.data) v = fake_quantize_int8(v, p);
    });
  } else if (f.kind == FormatKind::block_floating) {
    out.params.for_each([&](const std::string&, Tensor& t) {
      t = quantize_tensor(t, f);
    });
  }
  return out;
}

}  // namespace wavenet
