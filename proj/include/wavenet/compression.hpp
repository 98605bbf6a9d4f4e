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
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "wavenet/model.hpp"
#include "wavenet/numerics.hpp"

namespace wavenet {

enum class MaskScheme : std::uint8_t { unstructured, balanced_2to4 };

std::string_view scheme_name(MaskScheme s);
MaskScheme parse_scheme(std::string_view name);

// Keep/drop bitmap for one weight tensor; 1 keeps the weight.
struct Mask {
  std::string tensor;
  MaskScheme scheme = MaskScheme::unstructured;
  std::vector<std::size_t> shape;
  std::vector<std::uint8_t> keep;

  std::size_t numel() const noexcept { return keep.size(); }
  std::size_t kept() const;
  double sparsity() const;
  bool operator==(const Mask&) const = default;
};

using MaskSet = std::map<std::string, Mask>;

struct PruneSchedule {
  double initial_sparsity = 0.0;
  double final_sparsity = 0.0;
  long start_step = 0;
  long steps = 1;        // number of pruning events n
  long frequency = 500;  // steps between events
  int exponent = 3;

  void validate() const;  // throws ConfigError
  long end_step() const { return start_step + steps * frequency; }
};

// Schedule spanning `fraction` of `total_steps`, pruning every `frequency`.
PruneSchedule schedule_for(double final_sparsity, long total_steps,
                           long frequency, double fraction = 0.8);

double schedule_sparsity(long step, const PruneSchedule& sch);

// Drops round(s*numel) weights of smallest magnitude, lowest index first.
Mask prune_unstructured(const std::string& name, const Tensor& t,
                        double sparsity);

// Keeps the 2 largest magnitudes of every aligned group of 4 along the
// flattened (in x kernel) row of each output channel; a short trailing
// group keeps ceil(len/2). Ties keep the lower index.
Mask prune_2to4(const std::string& name, const Tensor& t);

void apply_mask(Tensor& t, const Mask& m);
void apply_masks(Parameters& params, const MaskSet& masks);

// Pruned groups, each with its own schedule.
const std::vector<std::string>& pruned_groups();
using ScheduleSet = std::map<std::string, PruneSchedule>;
ScheduleSet uniform_schedules(const PruneSchedule& sch);

struct PruneEvent {
  long step = 0;
  std::map<std::string, double> target;  // per tensor
  std::map<std::string, std::uint64_t> kept;
};

// Re-masks every prunable tensor whose schedule fires at `step` and zeroes
// the dropped weights. Returns the event when anything fired.
std::optional<PruneEvent> iterative_prune_hook(long step, Parameters& params,
                                               const ScheduleSet& schedules,
                                               MaskSet& masks);

MaskSet prune_all_2to4(Parameters& params);

// Structural problems, one message per failure; empty means valid.
std::vector<std::string> verify_masks(const Parameters& params,
                                      const MaskSet& masks);

struct TensorCompression {
  std::string tensor;
  std::string group;
  std::vector<std::size_t> shape;
  std::uint64_t numel = 0;
  std::uint64_t kept = 0;
  bool pruned = false;
  double original_bits = 0.0;
  double compressed_bits = 0.0;
};

enum class SpeedupConvention : std::uint8_t { upsample_dense, upsample_pruned };

struct CompressionReport {
  std::string format;
  std::vector<TensorCompression> tensors;
  double original_bits = 0.0;
  double compressed_bits = 0.0;
  double sparse_original_bits = 0.0;
  double sparse_compressed_bits = 0.0;
  double sparse_layer_cr = 1.0;
  double model_cr = 1.0;
  double speedup = 1.0;                  // upsample counted dense
  double speedup_upsample_pruned = 1.0;  // upsample scaled by its density
  std::map<std::string, double> group_sparsity;
};

// Kept weights per tensor name; tensors absent from the map are dense.
using KeptCounts = std::map<std::string, std::uint64_t>;

CompressionReport compression_report(const ModelConfig& cfg,
                                     const KeptCounts& kept, FormatId format);

CompressionReport compression_ratios(const Parameters& params,
                                     const MaskSet& masks, FormatId format);

// Nominal arithmetic: every prunable tensor keeps numel - round(s*numel).
KeptCounts nominal_unstructured(const ModelConfig& cfg, double sparsity);
// Kept counts implied by the 2:4 rule for each prunable tensor.
KeptCounts nominal_2to4(const ModelConfig& cfg);

double theoretical_speedup(const ModelConfig& cfg, const KeptCounts& kept,
                           SpeedupConvention convention =
                               SpeedupConvention::upsample_dense);

// Final sparsity that realizes a sparse-layer compression ratio.
double sparsity_for_cr(double cr);

}  // namespace wavenet
