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
#include <map>
#include <string>

#include "kanji/graph.hpp"
#include "kanji/tensor.hpp"

namespace kanji {

enum class OptimizerKind { Sgd, Adam };

/// Stepwise decay: lr(t) = initial * decay_factor^floor(t / decay_every).
struct LrSchedule {
  double initial = 0.1;
  double decay_factor = 1.0;
  int64_t decay_every = 0; // 0 disables decay

  double at(int64_t step) const;
};

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Sgd;
  LrSchedule lr;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  OptimizerConfig config;
  int64_t step_count = 0; // completed steps
  std::map<std::string, Tensor<double>> slot_m; // momentum / first moment
  std::map<std::string, Tensor<double>> slot_v; // second moment (Adam)
};

/// p -= lr * v where v = momentum * v + g. Returns the updated parameter.
Tensor<double> sgd_update(const Tensor<double>& param, const Tensor<double>& grad,
                          Tensor<double>& velocity, double lr, double momentum);

/// Bias-corrected Adam; t is the 1-based step index.
Tensor<double> adam_update(const Tensor<double>& param, const Tensor<double>& grad,
                           Tensor<double>& m, Tensor<double>& v, double lr, double beta1,
                           double beta2, double epsilon, int64_t t);

/// Applies one update to every graph parameter using the gradients of the
/// last backward pass, advancing the schedule. Returns the lr used.
double optimizer_step(TrainableGraph& graph, OptimizerState& state);

} // namespace kanji
