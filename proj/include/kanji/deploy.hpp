/*
 * Copyright 2026 The Kanji Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

//
// Trainable-model generation, parameter export/import and the bit-exact
// validation gate between the trainable model and the int8 engine.
//

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kanji/blob.hpp"
#include "kanji/dataset.hpp"
#include "kanji/graph.hpp"
#include "kanji/plan.hpp"

namespace kanji {

struct ParamLink {
  std::string plan_tensor; // "conv1.weights", "conv1.bias", ...
  int param_node = -1;     // raw fp32 parameter
  int fq_node = -1;        // its fake-quant image
};

struct GeneratedModel {
  TrainableGraph graph;
  ModelManifest manifest;
  std::vector<ParamLink> params; // plan parameter order
  std::vector<int> op_nodes;     // plan op index -> graph node mirroring its output
};

/// Emits the per-layer composition: raw fp32 parameters -> fake-quant
/// blocks with trackers -> float op -> output fake-quant. relu/maxpool pass
/// through without fake-quant. Parameters start at zero.
GeneratedModel gen_trainable(const ExecutionPlan& plan);

/// The same generator for training-only pipelines (fp32 baseline,
/// mean-image / per-image-standardization comparisons). When the scheme is
/// kanji and the preprocessing is float-valued, an input fake-quant node
/// bridges into the quantized ladder.
GeneratedModel gen_trainable_float(const ModelManifest& m, const DerivedPreproc& pre);

/// Parameter/activation max-abs per plan tensor, for rebuilding the plan
/// from a trained model.
RangeSet collect_ranges(const GeneratedModel& model);

/// Quantizes every parameter with its frozen format and serializes in plan
/// order. Requires a frozen graph whose formats equal the plan's.
ParameterBlob export_params(const GeneratedModel& model, const ExecutionPlan& plan);

/// Fills plan parameters from a blob (dims, formats and order must match).
void load_params(ExecutionPlan& plan, const ParameterBlob& blob);

/// Raw fp32 parameters, the hand-off format for pre-trained imports.
FloatBlob export_fp32_params(const GeneratedModel& model);

/// Seeds a trainable model from pre-trained fp32 weights. Weight ranges
/// come from the weights themselves; activation ranges from one forward
/// pass over a calibration batch when data is provided (max-abs, no EMA),
/// otherwise they default to frac_bits 7 pending fine-tuning.
GeneratedModel import_pretrained(const FloatBlob& weights, const ModelManifest& m,
                                 const ImageDataset* calibration);

struct ValidationReport {
  bool identical = true;
  int64_t samples = 0;
  // first divergence
  std::string op;
  int64_t sample = -1;
  int64_t index = -1;
  int32_t engine_value = 0;
  double model_value = 0.0;

  std::string to_string() const;
};

/// Runs n random inputs through the engine plan and the frozen trainable
/// model in qat-eval, comparing every intermediate integer tensor.
/// Divergence is a report outcome, not an exception. Sample evaluation is
/// sharded across threads (QF_THREADS caps the count); results do not
/// depend on the schedule.
ValidationReport validate_bitexact(const ExecutionPlan& plan, GeneratedModel& model,
                                   int n_samples, uint64_t seed);

/// Thread budget: QF_THREADS when set, hardware concurrency otherwise.
int worker_threads();

} // namespace kanji
