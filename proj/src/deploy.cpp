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

#include "kanji/deploy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "kanji/rng.hpp"
#include "kanji/train.hpp"

namespace kanji {

namespace {

GeneratedModel build_model(const ModelManifest& m, const PreprocParams& pp,
                           const PreprocStats* stats) {
  GeneratedModel model;
  model.manifest = m;
  TrainableGraph& g = model.graph;

  const Shape in_shape{m.in_h, m.in_w, m.in_c};
  g.input_node = g.add_constant("input", in_shape);
  int x = g.input_node;
  if (!m.input_uint8) g.node(x).out_format = QFormat{8, 7};

  switch (m.preproc) {
    case PreprocKind::BatchNormLike: {
      PreprocNodeAttrs a;
      a.mode = PreprocMode::BatchNormLike;
      a.mu = pp.mu;
      a.sigma_shift = pp.sigma_shift;
      x = g.add_preprocess(x, a, "preprocess");
      model.op_nodes.push_back(x);
      break;
    }
    case PreprocKind::MeanImage: {
      PreprocNodeAttrs a;
      a.mode = PreprocMode::MeanImage;
      a.mean_image = stats && !stats->mean_image.data.empty() ? stats->mean_image
                                                              : Tensor<double>(in_shape);
      x = g.add_preprocess(x, a, "preprocess");
      if (m.scheme == Scheme::Kanji) {
        FakeQuantAttrs fa;
        fa.source = RangeSource::ActivationEma;
        x = g.add_fake_quant(x, fa, "input.fq");
      }
      break;
    }
    case PreprocKind::PerImageStd: {
      PreprocNodeAttrs a;
      a.mode = PreprocMode::PerImageStd;
      x = g.add_preprocess(x, a, "preprocess");
      if (m.scheme == Scheme::Kanji) {
        FakeQuantAttrs fa;
        fa.source = RangeSource::ActivationEma;
        x = g.add_fake_quant(x, fa, "input.fq");
      }
      break;
    }
    case PreprocKind::None:
      break;
  }

  Shape cur = in_shape;
  for (size_t li = 0; li < m.layers.size(); ++li) {
    const LayerDesc& l = m.layers[li];
    if (l.kind == "conv" || l.kind == "fc") {
      const bool is_conv = l.kind == "conv";
      Shape wshape = is_conv ? Shape{l.out_channels, cur[2], l.kernel, l.kernel}
                             : Shape{l.out_features, numel(cur)};
      Shape bshape{is_conv ? l.out_channels : l.out_features};

      int w = g.add_parameter(l.name + ".weights.raw", Tensor<double>(wshape));
      FakeQuantAttrs wq;
      wq.source = l.wt_frac ? RangeSource::Fixed : RangeSource::ParamMaxAbs;
      if (l.wt_frac) wq.format = QFormat{8, *l.wt_frac};
      wq.plan_tensor = l.name + ".weights";
      int fqw = g.add_fake_quant(w, wq, l.name + ".weights.fq");

      int b = g.add_parameter(l.name + ".bias.raw", Tensor<double>(bshape));
      FakeQuantAttrs bq;
      bq.source = l.bias_frac ? RangeSource::Fixed : RangeSource::ParamMaxAbs;
      if (l.bias_frac) bq.format = QFormat{8, *l.bias_frac};
      bq.clamp_to_accumulator = !l.bias_frac;
      bq.conv_input_node = x;
      bq.weight_fq_node = fqw;
      bq.plan_tensor = l.name + ".bias";
      int fqb = g.add_fake_quant(b, bq, l.name + ".bias.fq");

      int op;
      if (is_conv) {
        ConvNodeAttrs attrs;
        attrs.in_channels = static_cast<int>(cur[2]);
        attrs.out_channels = l.out_channels;
        attrs.kernel_h = attrs.kernel_w = l.kernel;
        attrs.stride = l.stride;
        attrs.padding = l.pad;
        op = g.add_conv2d(x, fqw, fqb, attrs, l.name);
      } else {
        op = g.add_fully_connected(x, fqw, fqb, l.name);
      }

      FakeQuantAttrs oq;
      oq.source = l.out_frac ? RangeSource::Fixed : RangeSource::ActivationEma;
      if (l.out_frac) oq.format = QFormat{8, *l.out_frac};
      oq.clamp_to_accumulator = !l.out_frac;
      oq.plan_tensor = l.name + ".out";
      x = g.add_fake_quant(op, oq, l.name + ".out.fq");
      if (l.relu) x = g.add_relu(x, l.name + ".relu");

      model.params.push_back({l.name + ".weights", w, fqw});
      model.params.push_back({l.name + ".bias", b, fqb});
    } else if (l.kind == "maxpool") {
      x = g.add_maxpool(x, l.window, l.stride, l.name);
    } else { // relu
      x = g.add_relu(x, l.name);
    }
    model.op_nodes.push_back(x);
    cur = m.layer_shapes[li];
  }

  g.output_node = x;
  g.label_node = g.add_constant("labels", Shape{});
  g.loss_node = g.add_softmax_xent(g.output_node, g.label_node, "loss");
  return model;
}

} // namespace

GeneratedModel gen_trainable(const ExecutionPlan& plan) {
  return build_model(plan.manifest, plan.preproc, nullptr);
}

GeneratedModel gen_trainable_float(const ModelManifest& m, const DerivedPreproc& pre) {
  return build_model(m, pre.params, &pre.stats);
}

RangeSet collect_ranges(const GeneratedModel& model) {
  RangeSet rs;
  for (const ParamLink& link : model.params)
    rs.max_abs[link.plan_tensor] = max_abs(model.graph.node(link.param_node).value);
  for (const Node& n : model.graph.nodes) {
    if (n.kind != OpKind::FakeQuant) continue;
    if (n.fq.source != RangeSource::ActivationEma || n.fq.plan_tensor.empty()) continue;
    rs.max_abs[n.fq.plan_tensor] = n.fq.tracker.max_abs_ema;
  }
  return rs;
}

namespace {

struct PlanParamSlot {
  std::string name;
  QTensor* tensor;
};

std::vector<PlanParamSlot> plan_param_slots(ExecutionPlan& plan) {
  std::vector<PlanParamSlot> slots;
  for (PlanOp& op : plan.ops) {
    if (op.kind == PlanOpKind::Conv) {
      slots.push_back({op.name + ".weights", &op.conv.weights});
      slots.push_back({op.name + ".bias", &op.conv.bias});
    } else if (op.kind == PlanOpKind::FullyConnected) {
      slots.push_back({op.name + ".weights", &op.fc.weights});
      slots.push_back({op.name + ".bias", &op.fc.bias});
    }
  }
  return slots;
}

struct PlanParamView {
  std::string name;
  const QTensor* tensor;
};

std::vector<PlanParamView> plan_param_views(const ExecutionPlan& plan) {
  std::vector<PlanParamView> slots;
  for (const PlanOp& op : plan.ops) {
    if (op.kind == PlanOpKind::Conv) {
      slots.push_back({op.name + ".weights", &op.conv.weights});
      slots.push_back({op.name + ".bias", &op.conv.bias});
    } else if (op.kind == PlanOpKind::FullyConnected) {
      slots.push_back({op.name + ".weights", &op.fc.weights});
      slots.push_back({op.name + ".bias", &op.fc.bias});
    }
  }
  return slots;
}

} // namespace

ParameterBlob export_params(const GeneratedModel& model, const ExecutionPlan& plan) {
  if (!model.graph.frozen)
    throw StateError("export_params: unfrozen trackers (call freeze_ranges after training)");

  std::vector<PlanParamView> slots = plan_param_views(plan);
  if (slots.size() != model.params.size())
    throw InvalidInputError("export_params: plan/model parameter count mismatch");

  ParameterBlob blob;
  for (size_t i = 0; i < slots.size(); ++i) {
    const ParamLink& link = model.params[i];
    if (slots[i].name != link.plan_tensor)
      throw InvalidInputError("export_params: parameter order mismatch at " + slots[i].name);
    const Node& fq = model.graph.node(link.fq_node);
    const QFormat plan_fmt = slots[i].tensor->format;
    if (fq.fq.format != plan_fmt)
      throw StateError("export_params: format drift at " + link.plan_tensor +
                       " (graph frac " + std::to_string(fq.fq.format.frac_bits) + ", plan frac " +
                       std::to_string(plan_fmt.frac_bits) + "); rebuild the plan from collect_ranges");

    const Node& p = model.graph.node(link.param_node);
    QTensor q = quantize(p.value, plan_fmt);
    BlobRecord r;
    r.name = link.plan_tensor;
    r.bits = plan_fmt.bits;
    r.frac_bits = plan_fmt.frac_bits;
    r.dims = q.shape;
    r.data = q.data;
    blob.records.push_back(std::move(r));
  }
  return blob;
}

void load_params(ExecutionPlan& plan, const ParameterBlob& blob) {
  std::vector<PlanParamSlot> slots = plan_param_slots(plan);
  if (slots.size() != blob.records.size())
    throw DataError("blob has " + std::to_string(blob.records.size()) + " records, plan expects " +
                    std::to_string(slots.size()));
  for (size_t i = 0; i < slots.size(); ++i) {
    const BlobRecord& r = blob.records[i];
    if (r.name != slots[i].name)
      throw DataError("blob record '" + r.name + "' does not match plan tensor '" +
                      slots[i].name + "'");
    if (r.dims != slots[i].tensor->shape)
      throw DataError("blob record '" + r.name + "' dims " + shape_str(r.dims) +
                      " do not match plan " + shape_str(slots[i].tensor->shape));
    if (QFormat{r.bits, r.frac_bits} != slots[i].tensor->format)
      throw DataError("blob record '" + r.name + "' format q" + std::to_string(r.bits) + "/" +
                      std::to_string(r.frac_bits) + " does not match plan");
    slots[i].tensor->data = r.data;
    check_qtensor(*slots[i].tensor);
  }
}

FloatBlob export_fp32_params(const GeneratedModel& model) {
  FloatBlob blob;
  for (const ParamLink& link : model.params) {
    const Node& p = model.graph.node(link.param_node);
    FloatRecord r;
    r.name = link.plan_tensor;
    r.dims = p.value.shape;
    r.data.assign(p.value.data.begin(), p.value.data.end());
    blob.records.push_back(std::move(r));
  }
  return blob;
}

GeneratedModel import_pretrained(const FloatBlob& weights, const ModelManifest& m,
                                 const ImageDataset* calibration) {
  DerivedPreproc pre;
  if (calibration && calibration->size() > 0) {
    pre = compute_preproc_stats(*calibration);
  } else {
    pre.params = default_preproc_params(m.in_c);
    pre.stats.mean_image = Tensor<double>(Shape{m.in_h, m.in_w, m.in_c});
  }
  GeneratedModel model = build_model(m, pre.params, &pre.stats);

  std::string missing;
  for (const ParamLink& link : model.params) {
    const FloatRecord* rec = nullptr;
    for (const FloatRecord& r : weights.records)
      if (r.name == link.plan_tensor) {
        rec = &r;
        break;
      }
    Node& p = model.graph.node(link.param_node);
    if (!rec) {
      missing += (missing.empty() ? "" : ", ") + link.plan_tensor + " (absent)";
      continue;
    }
    if (rec->dims != p.value.shape) {
      missing += (missing.empty() ? "" : ", ") + link.plan_tensor + " (dims " +
                 shape_str(rec->dims) + " vs " + shape_str(p.value.shape) + ")";
      continue;
    }
    for (int64_t i = 0; i < p.value.size(); ++i)
      p.value[i] = static_cast<double>(rec->data[static_cast<size_t>(i)]);
  }
  if (!missing.empty())
    throw InvalidInputError("import_pretrained: tensor mismatch: " + missing);

  if (calibration && calibration->size() > 0) {
    // one fp32 calibration pass; activation trackers seed from batch max-abs
    int64_t n = std::min<int64_t>(calibration->size(), 128);
    std::vector<int64_t> idx(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    Tensor<double> batch = make_batch(*calibration, idx, nullptr);
    model.graph.forward(batch, TrainMode::Fp32);
    for (Node& node : model.graph.nodes) {
      if (node.kind != OpKind::FakeQuant || node.fq.source != RangeSource::ActivationEma) continue;
      const Node& src = model.graph.node(node.inputs[0]);
      node.fq.tracker.max_abs_ema = max_abs(src.value);
      node.fq.tracker.initialized = true;
    }
  }
  return model;
}

std::string ValidationReport::to_string() const {
  if (identical) return "identical (" + std::to_string(samples) + " samples)";
  return "DIVERGED at op '" + op + "' sample " + std::to_string(sample) + " element " +
         std::to_string(index) + ": engine " + std::to_string(engine_value) + ", trainable " +
         std::to_string(model_value);
}

int worker_threads() {
  if (const char* env = std::getenv("QF_THREADS")) {
    int v = std::atoi(env);
    if (v >= 1) return v;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc ? static_cast<int>(hc) : 1;
}

ValidationReport validate_bitexact(const ExecutionPlan& plan, GeneratedModel& model,
                                   int n_samples, uint64_t seed) {
  if (plan.manifest.scheme != Scheme::Kanji)
    throw InvalidInputError(std::string("validator refuses a ") +
                            scheme_name(plan.manifest.scheme) +
                            " plan: nothing integer to compare");
  if (!model.graph.frozen)
    throw StateError("validate_bitexact: freeze_ranges first");
  if (plan.ops.size() != model.op_nodes.size())
    throw InvalidInputError("plan/model op count mismatch");

  const bool uint8_input = plan.manifest.input_uint8;
  const Shape sample_shape{plan.manifest.in_h, plan.manifest.in_w, plan.manifest.in_c};
  const int64_t per = numel(sample_shape);

  ValidationReport report;
  report.samples = n_samples;

  const int batch = 25;
  for (int base = 0; base < n_samples && report.identical; base += batch) {
    const int count = std::min(batch, n_samples - base);

    // inputs seeded per sample: results do not depend on batching or threads
    Shape batched = sample_shape;
    batched.insert(batched.begin(), count);
    Tensor<double> graph_in(batched);
    std::vector<Tensor<uint8_t>> images(static_cast<size_t>(count));
    std::vector<QTensor> qinputs(static_cast<size_t>(count));
    for (int s = 0; s < count; ++s) {
      Rng rng(seed + static_cast<uint64_t>(base + s) * 0x9e3779b9ull);
      if (uint8_input) {
        images[static_cast<size_t>(s)] = Tensor<uint8_t>(sample_shape);
        for (int64_t i = 0; i < per; ++i) {
          uint8_t px = static_cast<uint8_t>(rng.next_int(0, 255));
          images[static_cast<size_t>(s)][i] = px;
          graph_in[s * per + i] = static_cast<double>(px);
        }
      } else {
        qinputs[static_cast<size_t>(s)] = QTensor(sample_shape, QFormat{8, 7});
        for (int64_t i = 0; i < per; ++i) {
          int32_t code = static_cast<int32_t>(rng.next_int(-128, 127));
          qinputs[static_cast<size_t>(s)].data[static_cast<size_t>(i)] = code;
          graph_in[s * per + i] = std::ldexp(static_cast<double>(code), -7);
        }
      }
    }

    model.graph.forward(graph_in, TrainMode::QatEval);

    // engine traces, sharded across samples
    std::vector<std::vector<QTensor>> traces(static_cast<size_t>(count));
    const int threads = std::min(worker_threads(), count);
    auto run_range = [&](int from, int to) {
      for (int s = from; s < to; ++s) {
        std::vector<QTensor>& tr = traces[static_cast<size_t>(s)];
        if (uint8_input)
          run_plan(plan, images[static_cast<size_t>(s)], &tr);
        else
          run_plan_q7(plan, qinputs[static_cast<size_t>(s)], &tr);
      }
    };
    if (threads <= 1) {
      run_range(0, count);
    } else {
      std::vector<std::thread> pool;
      int chunk = (count + threads - 1) / threads;
      for (int t = 0; t < threads; ++t) {
        int from = t * chunk;
        int to = std::min(count, from + chunk);
        if (from < to) pool.emplace_back(run_range, from, to);
      }
      for (std::thread& th : pool) th.join();
    }

    // compare every intermediate integer tensor, lowest sample first
    for (int s = 0; s < count && report.identical; ++s) {
      const std::vector<QTensor>& tr = traces[static_cast<size_t>(s)];
      for (size_t oi = 0; oi < plan.ops.size() && report.identical; ++oi) {
        const QTensor& eng = tr[oi];
        const Node& node = model.graph.node(model.op_nodes[oi]);
        const int frac = eng.format.frac_bits;
        const int64_t n = eng.size();
        const double* gv = node.value.data.data() + static_cast<int64_t>(s) * n;
        for (int64_t i = 0; i < n; ++i) {
          double scaled = std::ldexp(gv[i], frac);
          if (scaled != std::floor(scaled) ||
              static_cast<int64_t>(scaled) != eng.data[static_cast<size_t>(i)]) {
            report.identical = false;
            report.op = plan.ops[oi].name;
            report.sample = base + s;
            report.index = i;
            report.engine_value = eng.data[static_cast<size_t>(i)];
            report.model_value = gv[i];
            break;
          }
        }
      }
    }
  }
  return report;
}

} // namespace kanji
