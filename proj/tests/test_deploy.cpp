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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <sstream>

#include "kanji/deploy.hpp"
#include "kanji/rng.hpp"
#include "kanji/train.hpp"

using namespace kanji;

namespace {

const char* kSmallManifest = R"(
version 1
name tiny
input 8 8 3 uint8
scheme kanji
preproc batch_norm_like
layer conv out_channels=4 kernel=3 stride=1 pad=1 relu=true
layer maxpool window=2 stride=2
layer fc out_features=3
)";

ModelManifest parse_ok(const std::string& text) {
  ManifestParseResult res = parse_manifest(text);
  if (!res.manifest) {
    for (const std::string& e : res.errors) MESSAGE(e);
  }
  REQUIRE(res.manifest.has_value());
  return *res.manifest;
}

std::string manifest_dir() {
#ifdef KANJI_MANIFEST_DIR
  return KANJI_MANIFEST_DIR;
#else
  return "manifests";
#endif
}

} // namespace

TEST_CASE("manifest: the CMSIS-NN style CNN parses to 7 layers plus preprocessing") {
  ManifestParseResult res = parse_manifest_file(manifest_dir() + "/cmsisnn_cifar10.manifest");
  REQUIRE(res.manifest.has_value());
  const ModelManifest& m = *res.manifest;
  CHECK(m.layers.size() == 7);
  CHECK(m.preproc == PreprocKind::BatchNormLike);
  int convs = 0, pools = 0, fcs = 0;
  for (const LayerDesc& l : m.layers) {
    if (l.kind == "conv") convs++;
    if (l.kind == "maxpool") pools++;
    if (l.kind == "fc") fcs++;
  }
  CHECK(convs == 3);
  CHECK(pools == 3);
  CHECK(fcs == 1);
  CHECK(m.layers[0].out_channels == 32);
  CHECK(m.layers[4].out_channels == 64);
  CHECK(m.output_shape() == Shape({10}));
}

TEST_CASE("manifest: empty layer list and unknown operators") {
  ManifestParseResult res = parse_manifest("version 1\ninput 8 8 3 uint8\npreproc batch_norm_like\n");
  CHECK(!res.manifest.has_value());
  bool found = false;
  for (const std::string& e : res.errors)
    if (e.find("no layers") != std::string::npos) found = true;
  CHECK(found);

  res = parse_manifest(
      "version 1\ninput 8 8 3 uint8\npreproc batch_norm_like\nlayer lstm units=16\n");
  CHECK(!res.manifest.has_value());
  found = false;
  for (const std::string& e : res.errors)
    if (e.find("operator unavailable: lstm") != std::string::npos) found = true;
  CHECK(found);
}

TEST_CASE("manifest: all errors are collected, not just the first") {
  ManifestParseResult res = parse_manifest(
      "version 1\nlayer lstm\nlayer gru\nlayer conv kernel=0\n");
  CHECK(res.errors.size() >= 4); // two unavailable ops, bad conv, missing input
}

TEST_CASE("build_plan: formats, shifts and determinism") {
  ModelManifest m = parse_ok(kSmallManifest);
  ExecutionPlan plan = build_plan(m);
  REQUIRE(plan.ops.size() == 4); // preprocess + 3 layers

  const PlanOp& conv = plan.ops[1];
  CHECK(conv.kind == PlanOpKind::Conv);
  // defaults: fin = sigma_shift 6, fwt = 7 (zero ranges), fbias = fout = 7
  CHECK(conv.in_format.frac_bits == 6);
  CHECK(conv.conv.weights.format.frac_bits == 7);
  CHECK(conv.conv.bias_shift == 6);  // 6 + 7 - 7
  CHECK(conv.conv.out_shift == 6);
  CHECK(conv.conv.relu);

  // deterministic: same inputs, byte-identical report
  CHECK(plan_report_json(plan) == plan_report_json(build_plan(m)));
}

TEST_CASE("build_plan: single conv with uniform frac 7 gives shifts (7, 7)") {
  const char* text = R"(
version 1
name one
input 4 4 1 int8
scheme kanji
preproc none
layer conv out_channels=2 kernel=3 pad=1 wt_format=7 bias_format=7 out_format=7
)";
  ModelManifest m = parse_ok(text);
  ExecutionPlan plan = build_plan(m);
  const PlanOp& conv = plan.ops[0];
  CHECK(conv.conv.bias_shift == 7);
  CHECK(conv.conv.out_shift == 7);
}

TEST_CASE("build_plan: sequential buffers share arena space") {
  ModelManifest m = parse_ok(kSmallManifest);
  ExecutionPlan plan = build_plan(m);
  size_t total = 0;
  for (const PlanBuffer& b : plan.buffers) total += b.bytes;
  CHECK(plan.arena_bytes < total); // disjoint lifetimes overlap in the arena
  CHECK(allocator_is_safe(plan));
}

TEST_CASE("build_plan: explicit formats that force negative shifts fail, naming the tensor") {
  const char* text = R"(
version 1
input 4 4 1 int8
scheme kanji
preproc none
layer conv out_channels=2 kernel=3 pad=1 wt_format=3 bias_format=7 out_format=7
)";
  // fin 7 + fwt 3 = 10 >= 7: fine. force failure with a lower product format
  ModelManifest m = parse_ok(text);
  CHECK_NOTHROW(build_plan(m));

  const char* bad = R"(
version 1
input 4 4 1 int8
scheme kanji
preproc none
layer conv out_channels=2 kernel=3 pad=1 wt_format=-4 bias_format=7 out_format=7
)";
  // fin 7 + fwt -4 = 3 < 7: bias_shift would be -4
  ModelManifest m2 = parse_ok(bad);
  try {
    build_plan(m2);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("conv1") != std::string::npos);
  }
}

TEST_CASE("build_plan: accumulator gate rejects huge fan-in unless overridden") {
  const char* text = R"(
version 1
input 2 2 1200 int8
scheme kanji
preproc none
layer fc out_features=2
)";
  // fan_in 4800: 127*127*4800 = 77.4e6 >= 2^24
  ModelManifest m = parse_ok(text);
  CHECK_THROWS_AS(build_plan(m), PlanError);
  CHECK_NOTHROW(build_plan(m, RangeSet{}, nullptr, /*override_acc_gate=*/true));
}

TEST_CASE("build_plan: asym scheme stages int32 accumulators, ratio in the 2-4x envelope") {
  ModelManifest m = parse_ok(kSmallManifest);
  m.scheme = Scheme::Asym;
  ExecutionPlan plan = build_plan(m);
  bool has_staging = false;
  for (const PlanBuffer& b : plan.buffers)
    if (b.name.find(".staging") != std::string::npos) {
      has_staging = true;
      // staging is 4x the int8 output of its op
      for (const PlanOp& op : plan.ops)
        if (op.staging_buffer == b.id)
          CHECK(b.bytes == 4 * static_cast<size_t>(numel(op.out_shape)));
    }
  CHECK(has_staging);
  CHECK(plan.dynamic_staging_ratio >= 2.0);
  CHECK(plan.dynamic_staging_ratio <= 4.0);
}

TEST_CASE("workflow identity: plan ops map 1:1 onto manifest layers plus preprocess") {
  ModelManifest m = parse_ok(kSmallManifest);
  ExecutionPlan plan = build_plan(m);
  REQUIRE(plan.ops.size() == m.layers.size() + 1);
  CHECK(plan.ops[0].kind == PlanOpKind::Preprocess);
  for (size_t i = 0; i < m.layers.size(); ++i) {
    const std::string& kind = m.layers[i].kind;
    PlanOpKind want = kind == "conv" ? PlanOpKind::Conv
                      : kind == "maxpool" ? PlanOpKind::MaxPool
                      : kind == "relu" ? PlanOpKind::Relu
                                       : PlanOpKind::FullyConnected;
    CHECK(plan.ops[i + 1].kind == want);
    CHECK(plan.ops[i + 1].name == m.layers[i].name);
  }
}

TEST_CASE("gen_trainable: conv block has exactly 3 fake-quant nodes, pool/relu none") {
  ModelManifest m = parse_ok(kSmallManifest);
  ExecutionPlan plan = build_plan(m);
  GeneratedModel model = gen_trainable(plan);

  int fq_total = 0;
  for (const Node& n : model.graph.nodes)
    if (n.kind == OpKind::FakeQuant) fq_total++;
  // 3 per conv/fc block, none for pool/relu/preprocess
  CHECK(fq_total == 6);

  // relu/maxpool nodes pass through without fake-quant between them
  int conv_relu = model.graph.find("conv1.relu");
  int pool = model.graph.find("pool1");
  REQUIRE(conv_relu >= 0);
  REQUIRE(pool >= 0);
  CHECK(model.graph.node(pool).inputs[0] == conv_relu);
  CHECK(model.graph.node(conv_relu).kind == OpKind::Relu);
}

TEST_CASE("blob: header plus single record length follows the record formula") {
  ParameterBlob blob;
  BlobRecord r;
  r.name = "w";
  r.bits = 8;
  r.frac_bits = 7;
  r.dims = Shape{2, 3};
  r.data = {1, 2, 3, -4, -5, 6};
  blob.records.push_back(r);
  std::vector<uint8_t> bytes = serialize_blob(blob);
  CHECK(bytes.size() == 4 + 2 + blob_record_bytes(r));
  CHECK(blob_record_bytes(r) == 2 + 1 + 1 + 1 + 1 + 4 * 2 + 6);
  CHECK(bytes[0] == 'K');
  CHECK(bytes[1] == 'N');
  CHECK(bytes[2] == 'J');
  CHECK(bytes[3] == '1');
}

TEST_CASE("blob: negative frac_bits round trips (step > 1 formats)") {
  ParameterBlob blob;
  BlobRecord r;
  r.name = "big";
  r.bits = 8;
  r.frac_bits = -2; // step 4
  r.dims = Shape{1};
  r.data = {-7};
  blob.records.push_back(r);
  ParameterBlob back = parse_blob(serialize_blob(blob));
  REQUIRE(back.records.size() == 1);
  CHECK(back.records[0].frac_bits == -2);
  CHECK(back.records[0].to_qtensor().format.step() == 4.0);
  CHECK(back.records[0].data == std::vector<int32_t>({-7}));
}

TEST_CASE("blob: export -> parse -> export is byte-identical; truncation errors") {
  Rng rng(70);
  ParameterBlob blob;
  for (int i = 0; i < 3; ++i) {
    BlobRecord r;
    r.name = "t" + std::to_string(i);
    r.bits = 8;
    r.frac_bits = static_cast<int>(rng.next_int(-8, 20));
    r.dims = Shape{4, 2};
    for (int j = 0; j < 8; ++j) r.data.push_back(static_cast<int32_t>(rng.next_int(-128, 127)));
    blob.records.push_back(r);
  }
  std::vector<uint8_t> b1 = serialize_blob(blob);
  std::vector<uint8_t> b2 = serialize_blob(parse_blob(b1));
  CHECK(b1 == b2);

  std::vector<uint8_t> cut(b1.begin(), b1.end() - 3);
  CHECK_THROWS_AS(parse_blob(cut), DataError);
}

TEST_CASE("export/load: trained model round-trips into the engine plan") {
  ModelManifest m = parse_ok(kSmallManifest);
  GeneratedModel model = gen_trainable(build_plan(m));
  init_params(model.graph, 9);
  model.graph.freeze_ranges();
  ExecutionPlan plan = build_plan(m, collect_ranges(model));
  ParameterBlob blob = export_params(model, plan);
  CHECK(blob.records.size() == 4); // conv w/b, fc w/b
  CHECK(blob.records[0].name == "conv1.weights");
  load_params(plan, blob);
  // engine weights now match the fake-quant images of the raw parameters
  const Node& fqw = model.graph.node(model.graph.find("conv1.weights.fq"));
  QTensor expect = quantize(model.graph.node(model.params[0].param_node).value, fqw.fq.format);
  CHECK(plan.ops[1].conv.weights.data == expect.data);

  // unfrozen export refuses
  model.graph.unfreeze_ranges();
  CHECK_THROWS_AS(export_params(model, plan), StateError);
}

TEST_CASE("validate_bitexact: freshly generated pair is identical; corruption pinpoints the op") {
  ModelManifest m = parse_ok(kSmallManifest);
  GeneratedModel model = gen_trainable(build_plan(m));
  init_params(model.graph, 10);
  model.graph.freeze_ranges();
  ExecutionPlan plan = build_plan(m, collect_ranges(model));
  load_params(plan, export_params(model, plan));

  ValidationReport report = validate_bitexact(plan, model, 50, 4242);
  INFO(report.to_string());
  CHECK(report.identical);

  // deliberately corrupt the conv out_shift: the report names the op
  ExecutionPlan bad = plan;
  bad.ops[1].conv.out_shift += 1;
  ValidationReport rbad = validate_bitexact(bad, model, 50, 4242);
  CHECK(!rbad.identical);
  CHECK(rbad.op == "conv1");

  // fp32-scheme plans are refused (nothing integer to compare)
  ModelManifest mf = parse_ok(kSmallManifest);
  mf.scheme = Scheme::Fp32;
  CHECK_THROWS_AS(build_plan(mf), PlanError);
  // an fp32 "plan" cannot even be built; the validator guard covers the
  // asym case
  ModelManifest ma = parse_ok(kSmallManifest);
  ma.scheme = Scheme::Asym;
  ExecutionPlan asym_plan = build_plan(ma);
  CHECK_THROWS_AS(validate_bitexact(asym_plan, model, 1, 1), InvalidInputError);
}

TEST_CASE("qat-eval forward equals the engine after a real training run") {
  ModelManifest m = parse_ok(kSmallManifest);
  GeneratedModel model = gen_trainable(build_plan(m));
  init_params(model.graph, 11);

  SynthSpec spec;
  spec.n = 48;
  spec.height = 8;
  spec.width = 8;
  spec.channels = 3;
  spec.classes = 3;
  ImageDataset data = synth_dataset(spec, 5);

  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.seed = 3;
  cfg.mode = TrainMode::QatTrain;
  cfg.optimizer.lr.initial = 0.05;
  TrainResult tr = train_loop(model.graph, data, cfg);
  REQUIRE(!tr.diverged);

  model.graph.freeze_ranges();
  ExecutionPlan plan = build_plan(m, collect_ranges(model));
  load_params(plan, export_params(model, plan));
  ValidationReport report = validate_bitexact(plan, model, 200, 99);
  INFO(report.to_string());
  CHECK(report.identical);
}

TEST_CASE("import_pretrained: PTQ consistency and defaults") {
  ModelManifest m = parse_ok(kSmallManifest);

  // train an fp32 model, export raw weights
  DerivedPreproc pre;
  pre.params = default_preproc_params(3);
  GeneratedModel fp = gen_trainable_float(m, pre);
  init_params(fp.graph, 12);
  FloatBlob weights = export_fp32_params(fp);

  // no calibration data: activation formats default to frac_bits 7
  GeneratedModel imported = import_pretrained(weights, m, nullptr);
  imported.graph.freeze_ranges();
  int fq = imported.graph.find("conv1.out.fq");
  REQUIRE(fq >= 0);
  CHECK(imported.graph.node(fq).fq.format.frac_bits == 7);

  // importing a graph's own weights: fine-tuning for zero steps then
  // qat-eval equals direct post-training quantization of those weights
  PreprocParams pp = default_preproc_params(3);
  ExecutionPlan plan = build_plan(m, collect_ranges(imported), &pp);
  load_params(plan, export_params(imported, plan));
  ValidationReport report = validate_bitexact(plan, imported, 25, 7);
  INFO(report.to_string());
  CHECK(report.identical);

  // shape mismatch lists tensor names
  FloatBlob bad = weights;
  bad.records[0].dims = Shape{1, 1, 1, 1};
  bad.records[0].data.assign(1, 0.0f);
  try {
    import_pretrained(bad, m, nullptr);
    FAIL("expected InvalidInputError");
  } catch (const InvalidInputError& e) {
    CHECK(std::string(e.what()).find("conv1.weights") != std::string::npos);
  }
}

TEST_CASE("import_pretrained with calibration seeds activation ranges from one batch") {
  ModelManifest m = parse_ok(kSmallManifest);
  DerivedPreproc pre;
  pre.params = default_preproc_params(3);
  GeneratedModel fp = gen_trainable_float(m, pre);
  init_params(fp.graph, 13);
  FloatBlob weights = export_fp32_params(fp);

  SynthSpec spec;
  spec.n = 32;
  spec.height = 8;
  spec.width = 8;
  spec.channels = 3;
  spec.classes = 3;
  ImageDataset calib = synth_dataset(spec, 21);

  GeneratedModel imported = import_pretrained(weights, m, &calib);
  int fq = imported.graph.find("conv1.out.fq");
  REQUIRE(fq >= 0);
  CHECK(imported.graph.node(fq).fq.tracker.initialized);
  CHECK(imported.graph.node(fq).fq.tracker.max_abs_ema > 0.0);

  // fine-tuning from the import works (graph is unfrozen)
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 16;
  cfg.seed = 14;
  cfg.mode = TrainMode::QatTrain;
  cfg.optimizer.lr.initial = 0.01;
  CHECK_NOTHROW(train_loop(imported.graph, calib, cfg));
}
