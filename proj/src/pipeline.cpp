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

#include "kanji/pipeline.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace kanji {

namespace {

namespace fs = std::filesystem;

ModelManifest parse_and_override(const PipelineConfig& cfg) {
  ManifestParseResult parsed = parse_manifest_file(cfg.manifest_path);
  if (!parsed.manifest) {
    std::string msg = "manifest errors:";
    for (const std::string& e : parsed.errors) msg += "\n  " + e;
    throw InvalidInputError(msg);
  }
  ModelManifest m = *parsed.manifest;
  if (cfg.scheme_override) m.scheme = *cfg.scheme_override;
  if (cfg.preproc_override) m.preproc = *cfg.preproc_override;
  if (m.input_uint8 && m.preproc == PreprocKind::None && m.scheme != Scheme::Fp32)
    throw InvalidInputError("uint8 input requires preprocessing for integer schemes");
  return m;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f << text;
}

void write_accuracy_json(const std::string& path, const ModelManifest& m,
                         const PipelineResult& r, const PipelineConfig& cfg) {
  nlohmann::ordered_json j;
  j["model"] = m.name;
  j["scheme"] = scheme_name(m.scheme);
  j["preproc"] = preproc_kind_name(m.preproc);
  j["seed"] = cfg.seed;
  j["epochs"] = cfg.epochs;
  j["train_accuracy"] = r.train_accuracy;
  j["test_accuracy"] = r.test_accuracy;
  j["deployed"] = r.deployed;
  j["preproc_param_bytes"] = r.preproc_bytes;
  if (r.deployed) j["validation"] = r.validation.to_string();
  write_text(path, j.dump(2) + "\n");
}

TrainConfig make_train_config(const PipelineConfig& cfg, TrainMode mode) {
  TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.seed = cfg.seed;
  tc.mode = mode;
  tc.optimizer = cfg.optimizer;
  tc.augment_flip = cfg.augment_flip;
  tc.augment_crop = cfg.augment_crop;
  return tc;
}

std::string format_lr(double lr) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", lr);
  std::string s = buf;
  for (char& c : s)
    if (c == '.') c = 'p';
  return s;
}

} // namespace

void load_splits(const PipelineConfig& cfg, ImageDataset& train, ImageDataset& test) {
  if (cfg.synth) {
    SynthSpec spec;
    spec.classes = cfg.synth->classes;
    spec.class_seed = cfg.synth->class_seed;
    spec.noise = cfg.synth->noise;
    spec.sep = cfg.synth->sep;
    spec.jitter = cfg.synth->jitter;
    spec.n = cfg.synth->train_n;
    train = synth_dataset(spec, cfg.seed * 2 + 1);
    train.split = "train";
    spec.n = cfg.synth->test_n;
    test = synth_dataset(spec, cfg.seed * 2 + 2);
    test.split = "test";
  } else if (!cfg.data_dir.empty()) {
    train = load_cifar10_dir(cfg.data_dir, "train");
    test = load_cifar10_dir(cfg.data_dir, "test");
    if (cfg.train_limit > 0) train = subset(train, cfg.train_limit);
    if (cfg.test_limit > 0) test = subset(test, cfg.test_limit);
  } else {
    throw InvalidInputError("no dataset: give a data directory or a synthetic spec");
  }
}

PipelineResult run_pipeline(const PipelineConfig& cfg) {
  ModelManifest m = parse_and_override(cfg);

  PipelineResult result;
  result.scheme = m.scheme;
  result.preproc = m.preproc;
  result.preproc_bytes = preproc_param_bytes(m.preproc, m.in_h, m.in_w, m.in_c);

  fs::create_directories(cfg.out_dir);
  const std::string out = cfg.out_dir;

  if (m.scheme == Scheme::Asym) {
    // memory-planning artifact only; the training path and the validator
    // run on the kanji scheme, the kernels are benchmarked by cmd_bench
    ExecutionPlan plan = build_plan(m, RangeSet{}, nullptr);
    write_text(out + "/plan.json", plan_report_json(plan));
    std::fprintf(stderr,
                 "asym scheme: wrote the memory plan (staging ratio %.2f); training and "
                 "bit-exact validation apply to the kanji scheme, kernel overheads to bench\n",
                 plan.dynamic_staging_ratio);
    return result;
  }

  ImageDataset train_set, test_set;
  load_splits(cfg, train_set, test_set);
  DerivedPreproc pre = compute_preproc_stats(train_set);

  if (m.scheme == Scheme::Fp32) {
    GeneratedModel model = gen_trainable_float(m, pre);
    init_params(model.graph, cfg.seed);
    result.train = train_loop(model.graph, train_set, make_train_config(cfg, TrainMode::Fp32));
    result.trained = true;
    write_trace_csv(result.train.trace, out + "/loss.csv");
    if (result.train.diverged) {
      write_accuracy_json(out + "/accuracy.json", m, result, cfg);
      throw NumericError("training diverged (NaN loss); trace written to " + out + "/loss.csv");
    }
    result.train_accuracy = evaluate_accuracy(model.graph, train_set, TrainMode::Fp32);
    result.test_accuracy = evaluate_accuracy(model.graph, test_set, TrainMode::Fp32);
    write_float_blob_file(export_fp32_params(model), out + "/weights.knjf");
    write_accuracy_json(out + "/accuracy.json", m, result, cfg);
    return result;
  }

  // kanji scheme
  const bool deployable = m.preproc == PreprocKind::BatchNormLike || m.preproc == PreprocKind::None;
  GeneratedModel model = deployable ? gen_trainable(build_plan(m, RangeSet{}, &pre.params))
                                    : gen_trainable_float(m, pre);
  init_params(model.graph, cfg.seed);
  result.train = train_loop(model.graph, train_set, make_train_config(cfg, TrainMode::QatTrain));
  result.trained = true;
  write_trace_csv(result.train.trace, out + "/loss.csv");
  if (result.train.diverged) {
    write_accuracy_json(out + "/accuracy.json", m, result, cfg);
    throw NumericError("training diverged (NaN loss); trace written to " + out + "/loss.csv");
  }
  model.graph.freeze_ranges();
  result.train_accuracy = evaluate_accuracy(model.graph, train_set, TrainMode::QatEval);
  result.test_accuracy = evaluate_accuracy(model.graph, test_set, TrainMode::QatEval);

  if (deployable) {
    ExecutionPlan plan = build_plan(m, collect_ranges(model), &pre.params);
    ParameterBlob blob = export_params(model, plan);
    load_params(plan, blob);
    write_text(out + "/plan.json", plan_report_json(plan));
    write_blob_file(blob, out + "/model.knj");
    result.validation = validate_bitexact(plan, model, cfg.validate_samples, cfg.seed + 0x5eed);
    write_text(out + "/validation.txt", result.validation.to_string() + "\n");
    result.deployed = true;
  } else {
    std::fprintf(stderr,
                 "preprocessing '%s' is not lowerable to the int8 engine; trained the "
                 "quantized model without a deployment plan\n",
                 preproc_kind_name(m.preproc));
  }
  write_accuracy_json(out + "/accuracy.json", m, result, cfg);
  return result;
}

std::vector<std::pair<std::string, double>> run_lr_sweep(
    const PipelineConfig& base, const std::vector<std::pair<OptimizerKind, double>>& pairs,
    const std::vector<TrainMode>& modes) {
  ModelManifest m = parse_and_override(base);
  ImageDataset train_set, test_set;
  load_splits(base, train_set, test_set);
  DerivedPreproc pre = compute_preproc_stats(train_set);
  fs::create_directories(base.out_dir);

  std::vector<std::pair<std::string, double>> step_times;
  for (TrainMode mode : modes) {
    for (const auto& [kind, lr] : pairs) {
      const bool deployable =
          m.preproc == PreprocKind::BatchNormLike || m.preproc == PreprocKind::None;
      GeneratedModel model = (mode != TrainMode::Fp32 && deployable)
                                 ? gen_trainable(build_plan(m, RangeSet{}, &pre.params))
                                 : gen_trainable_float(m, pre);
      init_params(model.graph, base.seed);

      PipelineConfig cfg = base;
      cfg.optimizer.kind = kind;
      cfg.optimizer.lr.initial = lr;
      TrainResult tr = train_loop(model.graph, train_set, make_train_config(cfg, mode));

      std::string tag = std::string(mode == TrainMode::Fp32 ? "fp32" : "qat") + "_" +
                        (kind == OptimizerKind::Sgd ? "sgd" : "adam") + "_" + format_lr(lr);
      write_trace_csv(tr.trace, base.out_dir + "/loss_" + tag + ".csv");
      step_times.emplace_back(tag, tr.mean_step_ms);
    }
  }
  return step_times;
}

PipelineResult run_import(const PipelineConfig& cfg, const std::string& weights_path) {
  ModelManifest m = parse_and_override(cfg);
  if (m.scheme != Scheme::Kanji)
    throw InvalidInputError("import targets the kanji scheme");

  ImageDataset train_set, test_set;
  load_splits(cfg, train_set, test_set);

  FloatBlob weights = read_float_blob_file(weights_path);
  GeneratedModel model = import_pretrained(weights, m, &train_set);

  PipelineResult result;
  result.scheme = m.scheme;
  result.preproc = m.preproc;
  result.preproc_bytes = preproc_param_bytes(m.preproc, m.in_h, m.in_w, m.in_c);
  fs::create_directories(cfg.out_dir);
  const std::string out = cfg.out_dir;

  if (cfg.epochs > 0) {
    result.train = train_loop(model.graph, train_set, make_train_config(cfg, TrainMode::QatTrain));
    result.trained = true;
    write_trace_csv(result.train.trace, out + "/loss.csv");
    if (result.train.diverged)
      throw NumericError("fine-tuning diverged (NaN loss); trace written to " + out + "/loss.csv");
  }
  model.graph.freeze_ranges();
  result.train_accuracy = evaluate_accuracy(model.graph, train_set, TrainMode::QatEval);
  result.test_accuracy = evaluate_accuracy(model.graph, test_set, TrainMode::QatEval);

  const DerivedPreproc pre = compute_preproc_stats(train_set);
  ExecutionPlan plan = build_plan(m, collect_ranges(model), &pre.params);
  ParameterBlob blob = export_params(model, plan);
  load_params(plan, blob);
  write_text(out + "/plan.json", plan_report_json(plan));
  write_blob_file(blob, out + "/model.knj");
  result.validation = validate_bitexact(plan, model, cfg.validate_samples, cfg.seed + 0x5eed);
  write_text(out + "/validation.txt", result.validation.to_string() + "\n");
  result.deployed = true;
  write_accuracy_json(out + "/accuracy.json", m, result, cfg);
  return result;
}

} // namespace kanji
