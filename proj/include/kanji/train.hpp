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

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kanji/dataset.hpp"
#include "kanji/graph.hpp"
#include "kanji/optim.hpp"

namespace kanji {

struct TrainConfig {
  int epochs = 1;
  int batch_size = 32;
  uint64_t seed = 1;
  TrainMode mode = TrainMode::QatTrain;
  OptimizerConfig optimizer;
  bool augment_flip = false;
  bool augment_crop = false; // pad-4 random crop
};

struct TraceRow {
  int64_t step = 0;
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  std::vector<TraceRow> trace;
  bool diverged = false;    // loss went NaN; trace kept up to the abort
  double mean_step_ms = 0.0;
  double final_loss = 0.0;
};

/// Seeded, single-threaded; identical seed and config give an identical
/// trace (wall_ms excluded).
TrainResult train_loop(TrainableGraph& graph, const ImageDataset& data, const TrainConfig& cfg);

/// Batched argmax accuracy of the graph output against dataset labels.
double evaluate_accuracy(TrainableGraph& graph, const ImageDataset& data, TrainMode mode,
                         int batch_size = 100);

/// step,epoch,loss,lr,wall_ms CSV.
void write_trace_csv(const std::vector<TraceRow>& trace, const std::string& path);

/// Uniform He-style init of every parameter, deterministic in the seed.
void init_params(TrainableGraph& graph, uint64_t seed);

/// Converts uint8 images [from, to) into a batched double tensor.
Tensor<double> make_batch(const ImageDataset& data, const std::vector<int64_t>& indices,
                          std::vector<int32_t>* labels);

} // namespace kanji
