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

#include "kanji/plan.hpp"

#include <algorithm>

#include <json.hpp>

namespace kanji {

const char* plan_op_kind_name(PlanOpKind k) {
  switch (k) {
    case PlanOpKind::Preprocess: return "preprocess";
    case PlanOpKind::Conv: return "conv";
    case PlanOpKind::MaxPool: return "maxpool";
    case PlanOpKind::Relu: return "relu";
    case PlanOpKind::FullyConnected: return "fully_connected";
  }
  return "?";
}

PreprocParams default_preproc_params(int64_t channels) {
  PreprocParams p;
  p.mu.assign(static_cast<size_t>(channels), 128);
  p.sigma_shift = 6; // sigma = 64, a typical image std
  return p;
}

namespace {

// Clamped auto format: explicit frac wins, otherwise choose from the range;
// bound < kMinFracBits is unrepresentable.
int resolve_frac(const std::optional<int>& explicit_frac, double range_max_abs, int clamp_bound,
                 const std::string& tensor) {
  if (explicit_frac) return *explicit_frac; // validated against the bound by derive_shifts
  int frac = choose_qformat(range_max_abs, 8).frac_bits;
  if (clamp_bound < kMinFracBits)
    throw FormatError("accumulator format below representable range at " + tensor);
  return std::min(frac, clamp_bound);
}

struct AllocContext {
  std::vector<PlanBuffer> placed;
};

bool lifetimes_overlap(const PlanBuffer& a, const PlanBuffer& b) {
  return !(a.last_use < b.first_use || b.last_use < a.first_use);
}

// greedy first-fit over lifetime intervals
void place_buffer(AllocContext& ctx, PlanBuffer& b) {
  std::vector<const PlanBuffer*> live;
  for (const PlanBuffer& p : ctx.placed)
    if (lifetimes_overlap(p, b)) live.push_back(&p);
  std::sort(live.begin(), live.end(),
            [](const PlanBuffer* x, const PlanBuffer* y) { return x->offset < y->offset; });
  size_t candidate = 0;
  for (const PlanBuffer* p : live) {
    if (p->offset >= candidate + b.bytes) break; // gap fits
    candidate = std::max(candidate, p->offset + p->bytes);
  }
  b.offset = candidate;
  ctx.placed.push_back(b);
}

} // namespace

ExecutionPlan build_plan(const ModelManifest& m, const RangeSet& ranges,
                         const PreprocParams* preproc, bool override_acc_gate) {
  if (m.scheme == Scheme::Fp32)
    throw PlanError("fp32 scheme has no integer execution plan; train the fp32 model directly");
  if (m.scheme == Scheme::Kanji &&
      !(m.preproc == PreprocKind::BatchNormLike || m.preproc == PreprocKind::None))
    throw PlanError(std::string("preprocessing '") + preproc_kind_name(m.preproc) +
                    "' is input-dependent or float-valued and cannot be lowered to the int8 "
                    "engine; deployable plans use batch_norm_like or an int8 input");

  ExecutionPlan plan;
  plan.manifest = m;
  plan.preproc = preproc ? *preproc : default_preproc_params(m.in_c);
  const bool asym = m.scheme == Scheme::Asym;

  Shape cur{m.in_h, m.in_w, m.in_c};
  QFormat cur_fmt{8, 7}; // int8 inputs carry frac_bits 7 by convention
  int op_index = 0;

  // input buffer
  PlanBuffer input_buf;
  input_buf.id = 0;
  input_buf.name = "input";
  input_buf.bytes = static_cast<size_t>(numel(cur));
  input_buf.first_use = 0;
  input_buf.last_use = 0;
  plan.buffers.push_back(input_buf);
  int cur_buffer = 0;

  auto add_output_buffer = [&](const std::string& name, size_t bytes, int producer) {
    PlanBuffer b;
    b.id = static_cast<int>(plan.buffers.size());
    b.name = name;
    b.bytes = bytes;
    b.first_use = producer;
    b.last_use = producer; // extended when consumed
    plan.buffers.push_back(b);
    return b.id;
  };

  if (m.preproc == PreprocKind::BatchNormLike) {
    PlanOp op;
    op.kind = PlanOpKind::Preprocess;
    op.name = "preprocess";
    op.in_shape = cur;
    op.out_shape = cur;
    op.in_format = QFormat{0, 0}; // raw uint8 pixels
    op.preproc = plan.preproc;
    op.out_format = QFormat{8, plan.preproc.sigma_shift};
    op.input_buffer = cur_buffer;
    op.output_buffer = add_output_buffer("preprocess.out", static_cast<size_t>(numel(cur)), op_index);
    cur_fmt = op.out_format;
    cur_buffer = op.output_buffer;
    plan.ops.push_back(op);
    op_index++;
  }

  for (size_t li = 0; li < m.layers.size(); ++li) {
    const LayerDesc& l = m.layers[li];
    const Shape out_shape = m.layer_shapes[li];
    PlanOp op;
    op.name = l.name;
    op.in_shape = cur;
    op.out_shape = out_shape;
    op.in_format = cur_fmt;
    op.input_buffer = cur_buffer;
    plan.buffers[static_cast<size_t>(cur_buffer)].last_use = op_index;

    if (l.kind == "conv" || l.kind == "fc") {
      const bool is_conv = l.kind == "conv";
      const int64_t fan_in = is_conv
                                 ? static_cast<int64_t>(cur[2]) * l.kernel * l.kernel
                                 : numel(cur);
      const int fin = cur_fmt.frac_bits;
      const int fwt_raw = l.wt_frac ? *l.wt_frac
                                    : choose_qformat(ranges.get(l.name + ".weights"), 8).frac_bits;
      const int bound = fin + fwt_raw;
      const int fbias =
          resolve_frac(l.bias_frac, ranges.get(l.name + ".bias"), bound, l.name + ".bias");
      const int fout = resolve_frac(l.out_frac, ranges.get(l.name + ".out"), bound, l.name + ".out");

      Shifts shifts;
      try {
        shifts = derive_shifts(fin, fwt_raw, fbias, fout);
      } catch (const FormatError& e) {
        throw FormatError(std::string(e.what()) + " (tensor " + l.name +
                          (l.bias_frac || l.out_frac ? ", explicit format" : "") + ")");
      }

      int64_t worst = worst_case_accumulator(fan_in, shifts.bias_shift);
      if (!override_acc_gate && worst >= kAccumulatorGate)
        throw PlanError("accumulator gate: worst-case |acc| " + std::to_string(worst) +
                        " reaches 2^24 at layer " + l.name +
                        " (fan_in " + std::to_string(fan_in) + ")");

      op.out_format = QFormat{8, fout};
      if (is_conv) {
        op.kind = PlanOpKind::Conv;
        op.conv.in_channels = static_cast<int>(cur[2]);
        op.conv.out_channels = l.out_channels;
        op.conv.kernel_h = op.conv.kernel_w = l.kernel;
        op.conv.stride = l.stride;
        op.conv.padding = l.pad;
        op.conv.weights = QTensor(Shape{l.out_channels, cur[2], l.kernel, l.kernel}, QFormat{8, fwt_raw});
        op.conv.bias = QTensor(Shape{l.out_channels}, QFormat{8, fbias});
        op.conv.bias_shift = shifts.bias_shift;
        op.conv.out_shift = shifts.out_shift;
        op.conv.out_format = op.out_format;
        op.conv.relu = l.relu;
        op.macs = numel(out_shape) * fan_in;
        plan.parameter_bytes += static_cast<size_t>(op.conv.weights.size() + op.conv.bias.size());
      } else {
        op.kind = PlanOpKind::FullyConnected;
        op.fc.in_features = static_cast<int>(numel(cur));
        op.fc.out_features = l.out_features;
        op.fc.weights = QTensor(Shape{l.out_features, numel(cur)}, QFormat{8, fwt_raw});
        op.fc.bias = QTensor(Shape{l.out_features}, QFormat{8, fbias});
        op.fc.bias_shift = shifts.bias_shift;
        op.fc.out_shift = shifts.out_shift;
        op.fc.out_format = op.out_format;
        op.fc.relu = l.relu;
        op.macs = static_cast<int64_t>(l.out_features) * fan_in;
        plan.parameter_bytes += static_cast<size_t>(op.fc.weights.size() + op.fc.bias.size());
      }
      if (asym) {
        // dynamic output quantization stages raw int32 accumulators
        op.staging_buffer =
            add_output_buffer(l.name + ".staging", static_cast<size_t>(numel(out_shape)) * 4, op_index);
      }
    } else if (l.kind == "maxpool") {
      op.kind = PlanOpKind::MaxPool;
      op.window = l.window;
      op.stride = l.stride;
      op.out_format = cur_fmt;
    } else { // relu
      op.kind = PlanOpKind::Relu;
      op.out_format = cur_fmt;
    }

    op.output_buffer = add_output_buffer(l.name + ".out", static_cast<size_t>(numel(out_shape)), op_index);
    cur_buffer = op.output_buffer;
    cur = out_shape;
    cur_fmt = op.out_format;
    plan.ops.push_back(op);
    op_index++;
  }

  // final output stays live past the last op
  plan.buffers[static_cast<size_t>(cur_buffer)].last_use = op_index;

  // greedy first-fit arena assignment over lifetime intervals
  AllocContext ctx;
  for (PlanBuffer& b : plan.buffers) place_buffer(ctx, b);
  plan.buffers = ctx.placed;
  plan.arena_bytes = 0;
  for (const PlanBuffer& b : plan.buffers)
    plan.arena_bytes = std::max(plan.arena_bytes, b.offset + b.bytes);

  if (asym) {
    // compare against the same plan without staging buffers
    size_t int8_arena = 0;
    AllocContext ctx8;
    for (const PlanBuffer& b : plan.buffers) {
      if (b.name.find(".staging") != std::string::npos) continue;
      PlanBuffer c = b;
      place_buffer(ctx8, c);
      int8_arena = std::max(int8_arena, c.offset + c.bytes);
    }
    plan.dynamic_staging_ratio =
        int8_arena ? static_cast<double>(plan.arena_bytes) / static_cast<double>(int8_arena) : 0.0;
  }

  return plan;
}

bool allocator_is_safe(const ExecutionPlan& plan) {
  for (size_t i = 0; i < plan.buffers.size(); ++i)
    for (size_t j = i + 1; j < plan.buffers.size(); ++j) {
      const PlanBuffer& a = plan.buffers[i];
      const PlanBuffer& b = plan.buffers[j];
      if (!lifetimes_overlap(a, b)) continue;
      bool disjoint = a.offset + a.bytes <= b.offset || b.offset + b.bytes <= a.offset;
      if (!disjoint) return false;
    }
  return true;
}

std::string plan_report_json(const ExecutionPlan& plan) {
  nlohmann::ordered_json j;
  j["model"] = plan.manifest.name;
  j["scheme"] = scheme_name(plan.manifest.scheme);
  j["preproc"] = preproc_kind_name(plan.manifest.preproc);
  j["arena_bytes"] = plan.arena_bytes;
  j["parameter_bytes"] = plan.parameter_bytes;
  if (plan.manifest.scheme == Scheme::Asym)
    j["dynamic_staging_ratio"] = plan.dynamic_staging_ratio;

  int64_t total_macs = 0;
  nlohmann::ordered_json ops = nlohmann::ordered_json::array();
  for (const PlanOp& op : plan.ops) {
    nlohmann::ordered_json o;
    o["name"] = op.name;
    o["kind"] = plan_op_kind_name(op.kind);
    o["in_shape"] = op.in_shape;
    o["out_shape"] = op.out_shape;
    o["out_frac_bits"] = op.out_format.frac_bits;
    o["macs"] = op.macs;
    if (op.kind == PlanOpKind::Conv) {
      o["wt_frac_bits"] = op.conv.weights.format.frac_bits;
      o["bias_frac_bits"] = op.conv.bias.format.frac_bits;
      o["bias_shift"] = op.conv.bias_shift;
      o["out_shift"] = op.conv.out_shift;
      o["relu"] = op.conv.relu;
    } else if (op.kind == PlanOpKind::FullyConnected) {
      o["wt_frac_bits"] = op.fc.weights.format.frac_bits;
      o["bias_frac_bits"] = op.fc.bias.format.frac_bits;
      o["bias_shift"] = op.fc.bias_shift;
      o["out_shift"] = op.fc.out_shift;
      o["relu"] = op.fc.relu;
    } else if (op.kind == PlanOpKind::Preprocess) {
      o["mu"] = op.preproc.mu;
      o["sigma_shift"] = op.preproc.sigma_shift;
    }
    total_macs += op.macs;
    ops.push_back(o);
  }
  j["total_macs"] = total_macs;
  j["ops"] = ops;

  nlohmann::ordered_json bufs = nlohmann::ordered_json::array();
  for (const PlanBuffer& b : plan.buffers) {
    nlohmann::ordered_json o;
    o["id"] = b.id;
    o["name"] = b.name;
    o["bytes"] = b.bytes;
    o["first_use"] = b.first_use;
    o["last_use"] = b.last_use;
    o["offset"] = b.offset;
    bufs.push_back(o);
  }
  j["buffers"] = bufs;
  return j.dump(2) + "\n";
}

namespace {

QTensor run_ops(const ExecutionPlan& plan, QTensor x, size_t from, std::vector<QTensor>* trace) {
  for (size_t i = from; i < plan.ops.size(); ++i) {
    const PlanOp& op = plan.ops[i];
    switch (op.kind) {
      case PlanOpKind::Preprocess:
        throw PlanError("preprocess op after the first position");
      case PlanOpKind::Conv:
        x = conv2d_q7(x, op.conv);
        break;
      case PlanOpKind::MaxPool:
        x = maxpool_q7(x, op.window, op.stride);
        break;
      case PlanOpKind::Relu:
        x = relu_q7(x);
        break;
      case PlanOpKind::FullyConnected:
        x = fully_connected_q7(x, op.fc);
        break;
    }
    if (trace) trace->push_back(x);
  }
  return x;
}

} // namespace

QTensor run_plan(const ExecutionPlan& plan, const Tensor<uint8_t>& image,
                 std::vector<QTensor>* trace) {
  if (plan.ops.empty()) throw PlanError("empty plan");
  if (plan.ops[0].kind != PlanOpKind::Preprocess)
    throw InvalidInputError("plan expects int8 input; use run_plan_q7");
  if (plan.manifest.scheme == Scheme::Asym)
    throw PlanError("asym plans are memory-planning artifacts; execution uses the kanji scheme");
  QTensor x = preprocess_q7(image, plan.ops[0].preproc);
  if (trace) trace->push_back(x);
  return run_ops(plan, std::move(x), 1, trace);
}

QTensor run_plan_q7(const ExecutionPlan& plan, const QTensor& input, std::vector<QTensor>* trace) {
  if (plan.ops.empty()) throw PlanError("empty plan");
  if (plan.ops[0].kind == PlanOpKind::Preprocess)
    throw InvalidInputError("plan expects a uint8 image; use run_plan");
  if (plan.manifest.scheme == Scheme::Asym)
    throw PlanError("asym plans are memory-planning artifacts; execution uses the kanji scheme");
  return run_ops(plan, input, 0, trace);
}

} // namespace kanji
