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
// End-to-end drivers behind the CLI commands: pipeline (parse -> plan ->
// trainable -> train -> export -> validate), lr sweep, and pre-trained
// import. Everything lands in an output directory; reruns with the same
// config and seed overwrite with identical bytes (wall-clock fields in the
// loss trace excepted).
//

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kanji/deploy.hpp"
#include "kanji/manifest.hpp"
#include "kanji/train.hpp"

namespace kanji {

struct SynthDataConfig {
  int64_t train_n = 2000;
  int64_t test_n = 500;
  int classes = 10;
  uint64_t class_seed = 42;
  double noise = 0.5;
  double sep = 1.0;
  int jitter = 2;
};

struct PipelineConfig {
  std::string manifest_path;
  std::string data_dir; // CIFAR-10 binary directory
  std::optional<SynthDataConfig> synth;
  int64_t train_limit = 0; // 0: all
  int64_t test_limit = 0;

  uint64_t seed = 1;
  int epochs = 1;
  int batch_size = 32;
  OptimizerConfig optimizer;
  bool augment_flip = false;
  bool augment_crop = false;

  std::string out_dir = "out";
  int validate_samples = 200;
  std::optional<Scheme> scheme_override;
  std::optional<PreprocKind> preproc_override;
};

struct PipelineResult {
  Scheme scheme = Scheme::Kanji;
  PreprocKind preproc = PreprocKind::BatchNormLike;
  bool deployed = false; // plan/blob/validation artifacts exist
  bool trained = false;
  ValidationReport validation;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  TrainResult train;
  size_t preproc_bytes = 0;
};

/// Runs the configured pipeline, writing plan.json, model.knj, loss.csv,
/// accuracy.json and validation.txt (as applicable) under out_dir.
PipelineResult run_pipeline(const PipelineConfig& cfg);

/// One training run per (optimizer, lr) pair per mode on identical data
/// and seed; each writes loss_<mode>_<optimizer>_<lr>.csv. Returns the
/// mean step time of each run, keyed like the file names.
std::vector<std::pair<std::string, double>> run_lr_sweep(
    const PipelineConfig& base, const std::vector<std::pair<OptimizerKind, double>>& pairs,
    const std::vector<TrainMode>& modes);

/// Seeds a model from exported fp32 weights, optionally fine-tunes, then
/// freezes, exports and validates like the pipeline tail.
PipelineResult run_import(const PipelineConfig& cfg, const std::string& weights_path);

/// Loads train/test splits per the config (synthetic or CIFAR-10 files).
void load_splits(const PipelineConfig& cfg, ImageDataset& train, ImageDataset& test);

} // namespace kanji
