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

#include "wavenet/compression.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace wavenet {
namespace {

std::uint64_t drop_count(std::size_t numel, double sparsity) {
  return static_cast<std::uint64_t>(std::llround(sparsity * static_cast<double>(numel)));
}

std::size_t row_length(const std::vector<std::size_t>& shape) {
  if (shape.empty()) return 1;
  std::size_t n = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) n *= shape[i];
  return n;
}

std::size_t balanced_kept(const std::vector<std::size_t>& shape) {
  const std::size_t len = row_length(shape);
  const std::size_t rows = shape.empty() ? 1 : shape[0];
  std::size_t per_row = 0;
  for (std::size_t g = 0; g < len; g += 4) per_row += (std::min<std::size_t>(4, len - g) + 1) / 2;
  return rows * per_row;
}

// Multiply-adds one tensor contributes per generated sample.
double macs_per_sample(const ModelConfig& cfg, const std::string& name,
                       double weights) {
  if (is_bias(name) || name == "embedding") return 0.0;
  if (name == "upsample.weight") return weights / cfg.upsample_stride;
  return weights;
}

}  // namespace

std::string_view scheme_name(MaskScheme s) {
  return s == MaskScheme::unstructured ? "unstructured" : "2:4";
}

MaskScheme parse_scheme(std::string_view name) {
  if (name == "unstructured" || name == "iterative") return MaskScheme::unstructured;
  if (name == "2:4" || name == "balanced") return MaskScheme::balanced_2to4;
  throw ConfigError("unknown mask scheme '" + std::string(name) + "'");
}

std::size_t Mask::kept() const {
  return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), 1));
}

double Mask::sparsity() const {
  return keep.empty() ? 0.0
                      : 1.0 - static_cast<double>(kept()) / static_cast<double>(numel());
}

void PruneSchedule::validate() const {
  if (!(initial_sparsity >= 0.0 && initial_sparsity <= final_sparsity &&
        final_sparsity < 1.0)) {
    throw ConfigError("schedule needs 0 <= initial <= final < 1");
  }
  if (frequency < 1) throw ConfigError("pruning frequency must be >= 1");
  if (steps < 1) throw ConfigError("pruning needs >= 1 event");
  if (start_step < 0) throw ConfigError("pruning start step must be >= 0");
  if (exponent < 1) throw ConfigError("schedule exponent must be >= 1");
}

PruneSchedule schedule_for(double final_sparsity, long total_steps,
                           long frequency, double fraction) {
  PruneSchedule s;
  s.final_sparsity = final_sparsity;
  s.frequency = frequency;
  const auto span = static_cast<long>(std::floor(fraction * static_cast<double>(total_steps)));
  s.steps = std::max(1L, span / frequency);
  s.validate();
  return s;
}

double schedule_sparsity(long step, const PruneSchedule& sch) {
  sch.validate();
  const long held = step - step % sch.frequency;
  const double span = static_cast<double>(sch.steps) * static_cast<double>(sch.frequency);
  const double progress =
      std::clamp(static_cast<double>(held - sch.start_step) / span, 0.0, 1.0);
  return sch.final_sparsity + (sch.initial_sparsity - sch.final_sparsity) *
                                  std::pow(1.0 - progress, sch.exponent);
}

Mask prune_unstructured(const std::string& name, const Tensor& t,
                        double sparsity) {
  if (!(sparsity >= 0.0 && sparsity < 1.0)) {
    throw ConfigError("sparsity must lie in [0, 1), got " + std::to_string(sparsity));
  }
  Mask m{name, MaskScheme::unstructured, t.shape,
         std::vector<std::uint8_t>(t.numel(), 1)};
  const std::uint64_t drop = drop_count(t.numel(), sparsity);
  if (drop == 0) return m;
  std::vector<std::uint32_t> idx(t.numel());
  std::iota(idx.begin(), idx.end(), 0u);
  auto smaller = [&](std::uint32_t a, std::uint32_t b) {
    const float ma = std::fabs(t.data[a]), mb = std::fabs(t.data[b]);
    return ma < mb || (ma == mb && a < b);
  };
  std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(drop - 1),
                   idx.end(), smaller);
  for (std::uint64_t i = 0; i < drop; ++i) m.keep[idx[i]] = 0;
  return m;
}

Mask prune_2to4(const std::string& name, const Tensor& t) {
  Mask m{name, MaskScheme::balanced_2to4, t.shape,
         std::vector<std::uint8_t>(t.numel(), 0)};
  const std::size_t len = row_length(t.shape);
  for (std::size_t base = 0; base < t.numel(); base += len) {
    for (std::size_t g = 0; g < len; g += 4) {
      const std::size_t n = std::min<std::size_t>(4, len - g);
      std::size_t order[4] = {0, 1, 2, 3};
      std::stable_sort(order, order + n, [&](std::size_t a, std::size_t b) {
        return std::fabs(t.data[base + g + a]) > std::fabs(t.data[base + g + b]);
      });
      for (std::size_t k = 0; k < (n + 1) / 2; ++k) m.keep[base + g + order[k]] = 1;
    }
  }
  return m;
}

void apply_mask(Tensor& t, const Mask& m) {
  if (t.shape != m.shape) {
    throw ShapeError("mask for " + m.tensor + " has shape " + shape_string(m.shape) +
                     ", tensor is " + shape_string(t.shape));
  }
  for (std::size_t i = 0; i < t.numel(); ++i) {
    if (m.keep[i] == 0) t.data[i] = 0.0f;
  }
}

void apply_masks(Parameters& params, const MaskSet& masks) {
  for (const auto& [name, mask] : masks) {
    Tensor* t = params.find(name);
    if (t == nullptr) throw ShapeError("mask names unknown tensor '" + name + "'");
    apply_mask(*t, mask);
  }
}

const std::vector<std::string>& pruned_groups() {
  static const std::vector<std::string> groups = {
      "upsample", "dilation", "conditional", "residual", "skip", "out"};
  return groups;
}

ScheduleSet uniform_schedules(const PruneSchedule& sch) {
  ScheduleSet set;
  for (const std::string& g : pruned_groups()) set[g] = sch;
  return set;
}

std::optional<PruneEvent> iterative_prune_hook(long step, Parameters& params,
                                               const ScheduleSet& schedules,
                                               MaskSet& masks) {
  PruneEvent event;
  event.step = step;
  params.for_each([&](const std::string& name, Tensor& t) {
    if (!is_prunable(name)) return;
    const std::string group = layer_group(name);
    const auto it = schedules.find(group);
    if (it == schedules.end()) {
      throw ConfigError("no pruning schedule for layer group '" + group + "'");
    }
    if (step % it->second.frequency != 0) return;
    const double s = schedule_sparsity(step, it->second);
    Mask m = prune_unstructured(name, t, s);
    apply_mask(t, m);
    event.target[name] = s;
    event.kept[name] = m.kept();
    masks[name] = std::move(m);
  });
  if (event.target.empty()) return std::nullopt;
  return event;
}

MaskSet prune_all_2to4(Parameters& params) {
  MaskSet masks;
  params.for_each([&](const std::string& name, Tensor& t) {
    if (!is_prunable(name)) return;
    Mask m = prune_2to4(name, t);
    apply_mask(t, m);
    masks[name] = std::move(m);
  });
  return masks;
}

std::vector<std::string> verify_masks(const Parameters& params,
                                      const MaskSet& masks) {
  std::vector<std::string> problems;
  for (const auto& [name, m] : masks) {
    const Tensor* t = params.find(name);
    if (t == nullptr) {
      problems.push_back(name + ": mask for unknown tensor");
      continue;
    }
    if (m.shape != t->shape || m.keep.size() != t->numel()) {
      problems.push_back(name + ": mask shape " + shape_string(m.shape) +
                         " != tensor shape " + shape_string(t->shape));
      continue;
    }
    if (!is_prunable(name)) problems.push_back(name + ": tensor must stay dense");
    std::size_t nonzero = 0;
    for (std::size_t i = 0; i < t->numel(); ++i) {
      if (m.keep[i] == 0 && t->data[i] != 0.0f) ++nonzero;
      if (m.keep[i] > 1) {
        problems.push_back(name + ": mask entry " + std::to_string(i) + " is not 0/1");
        break;
      }
    }
    if (nonzero > 0) {
      problems.push_back(name + ": " + std::to_string(nonzero) +
                         " masked weights are nonzero");
    }
    if (m.scheme != MaskScheme::balanced_2to4) continue;
    const std::size_t len = row_length(m.shape);
    for (std::size_t base = 0, row = 0; base < m.numel(); base += len, ++row) {
      for (std::size_t g = 0; g < len; g += 4) {
        const std::size_t n = std::min<std::size_t>(4, len - g);
        std::size_t kept = 0;
        for (std::size_t k = 0; k < n; ++k) kept += m.keep[base + g + k];
        if (kept != (n + 1) / 2) {
          problems.push_back(name + ": row " + std::to_string(row) + " group " +
                             std::to_string(g / 4) + " keeps " +
                             std::to_string(kept) + " of " + std::to_string(n));
        }
      }
    }
  }
  return problems;
}

CompressionReport compression_report(const ModelConfig& cfg,
                                     const KeptCounts& kept, FormatId format) {
  const FormatSpec& f = format_spec(format);
  CompressionReport r;
  r.format = std::string(f.name);
  std::map<std::string, std::pair<double, double>> group_counts;
  for (const TensorShape& ts : parameter_shapes(cfg)) {
    TensorCompression tc;
    tc.tensor = ts.name;
    tc.group = layer_group(ts.name);
    tc.shape = ts.shape;
    tc.numel = BasicTensor<float>::count(ts.shape);
    tc.pruned = is_prunable(ts.name);
    const auto it = kept.find(ts.name);
    tc.kept = it == kept.end() ? tc.numel : it->second;
    if (tc.kept > tc.numel) throw ShapeError(ts.name + ": kept exceeds numel");
    tc.original_bits = 32.0 * static_cast<double>(tc.numel);
    tc.compressed_bits = storage_bits(f, ts.shape, tc.kept);
    r.original_bits += tc.original_bits;
    r.compressed_bits += tc.compressed_bits;
    if (tc.pruned) {
      r.sparse_original_bits += tc.original_bits;
      r.sparse_compressed_bits += tc.compressed_bits;
      auto& gc = group_counts[tc.group];
      gc.first += static_cast<double>(tc.numel);
      gc.second += static_cast<double>(tc.kept);
    }
    r.tensors.push_back(std::move(tc));
  }
  r.model_cr = r.original_bits / r.compressed_bits;
  r.sparse_layer_cr = r.sparse_compressed_bits > 0.0
                          ? r.sparse_original_bits / r.sparse_compressed_bits
                          : 1.0;
  for (const auto& [g, c] : group_counts) r.group_sparsity[g] = 1.0 - c.second / c.first;
  r.speedup = theoretical_speedup(cfg, kept, SpeedupConvention::upsample_dense);
  r.speedup_upsample_pruned =
      theoretical_speedup(cfg, kept, SpeedupConvention::upsample_pruned);
  return r;
}

CompressionReport compression_ratios(const Parameters& params,
                                     const MaskSet& masks, FormatId format) {
  KeptCounts kept;
  for (const auto& [name, m] : masks) {
    const Tensor* t = params.find(name);
    if (t == nullptr || t->shape != m.shape) {
      throw ShapeError("mask '" + name + "' does not match the parameter set");
    }
    kept[name] = m.kept();
  }
  return compression_report(params.config, kept, format);
}

KeptCounts nominal_unstructured(const ModelConfig& cfg, double sparsity) {
  if (!(sparsity >= 0.0 && sparsity < 1.0)) {
    throw ConfigError("sparsity must lie in [0, 1)");
  }
  KeptCounts kept;
  for (const TensorShape& ts : parameter_shapes(cfg)) {
    if (!is_prunable(ts.name)) continue;
    const std::size_t n = BasicTensor<float>::count(ts.shape);
    kept[ts.name] = n - drop_count(n, sparsity);
  }
  return kept;
}

KeptCounts nominal_2to4(const ModelConfig& cfg) {
  KeptCounts kept;
  for (const TensorShape& ts : parameter_shapes(cfg)) {
    if (is_prunable(ts.name)) kept[ts.name] = balanced_kept(ts.shape);
  }
  return kept;
}

double theoretical_speedup(const ModelConfig& cfg, const KeptCounts& kept,
                           SpeedupConvention convention) {
  double dense = 0.0, sparse = 0.0;
  for (const TensorShape& ts : parameter_shapes(cfg)) {
    const auto n = static_cast<double>(BasicTensor<float>::count(ts.shape));
    const double full = macs_per_sample(cfg, ts.name, n);
    dense += full;
    const auto it = kept.find(ts.name);
    const bool counted_dense =
        it == kept.end() || (ts.name == "upsample.weight" &&
                             convention == SpeedupConvention::upsample_dense);
    sparse += counted_dense
                  ? full
                  : macs_per_sample(cfg, ts.name, static_cast<double>(it->second));
  }
  return dense / sparse;
}

double sparsity_for_cr(double cr) {
  if (!(cr >= 1.0) || !std::isfinite(cr)) {
    throw ConfigError("compression ratio must be >= 1");
  }
  return 1.0 - 1.0 / cr;
}

}  // namespace wavenet
