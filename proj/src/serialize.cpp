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

#include "wavenet/serialize.hpp"

namespace wavenet {

using nlohmann::json;

void to_json(json& j, const ModelConfig& c) {
  j = json{{"skip_channels", c.skip_channels},
           {"residual_channels", c.residual_channels},
           {"audio_channels", c.audio_channels},
           {"layers", c.layers},
           {"dilation_cycle", c.dilation_cycle},
           {"mel_bins", c.mel_bins},
           {"upsample_kernel", c.upsample_kernel},
           {"upsample_stride", c.upsample_stride},
           {"dilation_kernel", c.dilation_kernel},
           {"sample_rate", c.sample_rate}};
}

void from_json(const json& j, ModelConfig& c) {
  ModelConfig d;
  c.skip_channels = j.value("skip_channels", d.skip_channels);
  c.residual_channels = j.value("residual_channels", d.residual_channels);
  c.audio_channels = j.value("audio_channels", d.audio_channels);
  c.layers = j.value("layers", d.layers);
  c.dilation_cycle = j.value("dilation_cycle", d.dilation_cycle);
  c.mel_bins = j.value("mel_bins", d.mel_bins);
  c.upsample_kernel = j.value("upsample_kernel", d.upsample_kernel);
  c.upsample_stride = j.value("upsample_stride", d.upsample_stride);
  c.dilation_kernel = j.value("dilation_kernel", d.dilation_kernel);
  c.sample_rate = j.value("sample_rate", d.sample_rate);
}

void to_json(json& j, const PruneSchedule& s) {
  j = json{{"initial_sparsity", s.initial_sparsity},
           {"final_sparsity", s.final_sparsity},
           {"start_step", s.start_step},
           {"steps", s.steps},
           {"frequency", s.frequency},
           {"exponent", s.exponent}};
}

void from_json(const json& j, PruneSchedule& s) {
  s.initial_sparsity = j.at("initial_sparsity").get<double>();
  s.final_sparsity = j.at("final_sparsity").get<double>();
  s.start_step = j.at("start_step").get<long>();
  s.steps = j.at("steps").get<long>();
  s.frequency = j.at("frequency").get<long>();
  s.exponent = j.at("exponent").get<int>();
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"learning_rate", c.learning_rate}, {"beta1", c.beta1},
           {"beta2", c.beta2},                 {"epsilon", c.epsilon},
           {"batch_size", c.batch_size},       {"segment_samples", c.segment_samples},
           {"steps", c.steps},                 {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
  TrainConfig d;
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.epsilon = j.value("epsilon", d.epsilon);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.segment_samples = j.value("segment_samples", d.segment_samples);
  c.steps = j.value("steps", d.steps);
  c.seed = j.value("seed", d.seed);
}

void to_json(json& j, const Calibration& c) {
  json w = json::object(), a = json::object();
  for (const auto& [k, v] : c.weights) w[k] = v.scale;
  for (const auto& [k, v] : c.activations) a[k] = v.scale;
  j = json{{"weights", w}, {"activations", a}, {"degenerate", c.degenerate}};
}

void from_json(const json& j, Calibration& c) {
  for (const auto& [k, v] : j.at("weights").items()) {
    c.weights[k] = IntQuantParams{v.get<float>()};
  }
  for (const auto& [k, v] : j.at("activations").items()) {
    c.activations[k] = IntQuantParams{v.get<float>()};
  }
  c.degenerate = j.value("degenerate", std::vector<std::string>{});
}

json to_json(const CompressionReport& r) {
  json tensors = json::array();
  for (const TensorCompression& t : r.tensors) {
    tensors.push_back({{"tensor", t.tensor},
                       {"group", t.group},
                       {"numel", t.numel},
                       {"kept", t.kept},
                       {"pruned", t.pruned},
                       {"original_bits", t.original_bits},
                       {"compressed_bits", t.compressed_bits}});
  }
  return json{{"format", r.format},
              {"original_bits", r.original_bits},
              {"compressed_bits", r.compressed_bits},
              {"sparse_layer_cr", r.sparse_layer_cr},
              {"model_cr", r.model_cr},
              {"speedup_upsample_dense", r.speedup},
              {"speedup_upsample_pruned", r.speedup_upsample_pruned},
              {"group_sparsity", r.group_sparsity},
              {"tensors", tensors}};
}

json to_json(const ModelTable& t) {
  json rows = json::array();
  for (const LayerAccount& a : t.rows) {
    json row{{"layer", a.layer},
             {"type", a.type},
             {"repeats", a.repeats},
             {"params_per_layer", a.params_per_layer},
             {"params_total", a.params_total}};
    if (a.has_ops) {
      row["gops_per_layer"] = a.gops_per_layer;
      row["gops_total"] = a.gops_total;
    } else {
      row["gops_per_layer"] = nullptr;
      row["gops_total"] = nullptr;
    }
    rows.push_back(row);
  }
  return json{{"rows", rows},
              {"total_params", t.total_params},
              {"total_gops", t.total_gops}};
}

}  // namespace wavenet
