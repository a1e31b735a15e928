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
// Deployable execution plan: the manifest lowered onto the int8 engine with
// resolved formats, shift parameters, and a static buffer arena. Plan ops
// map 1:1 onto manifest layers plus the preprocessing op; the model the
// user described is the model that deploys.
//

#pragma once

#include <map>
#include <string>
#include <vector>

#include "kanji/engine.hpp"
#include "kanji/manifest.hpp"

namespace kanji {

enum class PlanOpKind { Preprocess, Conv, MaxPool, Relu, FullyConnected };

const char* plan_op_kind_name(PlanOpKind k);

struct PlanOp {
  PlanOpKind kind;
  std::string name;
  Shape in_shape, out_shape; // per-sample
  QFormat in_format{0, 0};
  QFormat out_format{0, 0};
  int input_buffer = -1;
  int output_buffer = -1;
  int staging_buffer = -1; // int32 staging (asym scheme only)
  int64_t macs = 0;

  ConvParams conv;      // Conv
  FcParams fc;          // FullyConnected
  PreprocParams preproc; // Preprocess
  int window = 0, stride = 0; // MaxPool
};

struct PlanBuffer {
  int id = 0;
  std::string name;
  size_t bytes = 0;
  int first_use = 0; // op index producing or first reading it
  int last_use = 0;  // last op index reading it
  size_t offset = 0; // assigned arena offset
};

/// Calibrated max-abs ranges keyed by plan tensor name
/// ("conv1.weights", "conv1.bias", "conv1.out", ...). Missing entries
/// behave like max_abs = 0 (default format, frac_bits = 7).
struct RangeSet {
  std::map<std::string, double> max_abs;

  double get(const std::string& key) const {
    auto it = max_abs.find(key);
    return it == max_abs.end() ? 0.0 : it->second;
  }
};

struct ExecutionPlan {
  ModelManifest manifest;
  PreprocParams preproc;
  std::vector<PlanOp> ops;
  std::vector<PlanBuffer> buffers;
  size_t arena_bytes = 0;
  size_t parameter_bytes = 0;
  // asym scheme: peak arena relative to an int8-only plan of the same model
  double dynamic_staging_ratio = 0.0;
};

/// Default preprocessing when no dataset statistics are available.
PreprocParams default_preproc_params(int64_t channels);

/// Lowers a validated manifest. Formats come from choose_qformat over the
/// provided ranges (auto policy) or from the manifest (explicit policy);
/// bias/output formats are clamped so derived shifts stay non-negative.
/// Parameters are zero-initialized. Throws FormatError naming the tensor
/// when an explicit format forces a negative shift, PlanError when the
/// worst-case accumulator reaches the 2^24 gate (override_acc_gate skips
/// that check) or when the scheme cannot be lowered.
ExecutionPlan build_plan(const ModelManifest& m, const RangeSet& ranges = {},
                         const PreprocParams* preproc = nullptr, bool override_acc_gate = false);

/// Deterministic machine-readable report: ops, shifts, formats, MAC
/// counts, buffer table and arena size.
std::string plan_report_json(const ExecutionPlan& plan);

/// Runs the plan on one uint8 image (plans whose first op is the
/// preprocessing op). trace, when given, collects every op output.
QTensor run_plan(const ExecutionPlan& plan, const Tensor<uint8_t>& image,
                 std::vector<QTensor>* trace = nullptr);

/// Runs a plan declared with int8 input and no preprocessing op.
QTensor run_plan_q7(const ExecutionPlan& plan, const QTensor& input,
                    std::vector<QTensor>* trace = nullptr);

/// True when no two live buffers overlap in the arena (interval audit).
bool allocator_is_safe(const ExecutionPlan& plan);

} // namespace kanji
