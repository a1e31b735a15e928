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

#include "kanji/optim.hpp"

#include <cmath>

namespace kanji {

double LrSchedule::at(int64_t step) const {
  if (decay_every <= 0 || decay_factor == 1.0) return initial;
  return initial * std::pow(decay_factor, static_cast<double>(step / decay_every));
}

Tensor<double> sgd_update(const Tensor<double>& param, const Tensor<double>& grad,
                          Tensor<double>& velocity, double lr, double momentum) {
  if (param.shape != grad.shape) throw InvalidInputError("sgd_update: shape mismatch");
  if (velocity.data.empty()) velocity = Tensor<double>(param.shape);
  Tensor<double> out = param;
  for (int64_t i = 0; i < param.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grad[i];
    out[i] -= lr * velocity[i];
  }
  return out;
}

Tensor<double> adam_update(const Tensor<double>& param, const Tensor<double>& grad,
                           Tensor<double>& m, Tensor<double>& v, double lr, double beta1,
                           double beta2, double epsilon, int64_t t) {
  if (param.shape != grad.shape) throw InvalidInputError("adam_update: shape mismatch");
  if (m.data.empty()) m = Tensor<double>(param.shape);
  if (v.data.empty()) v = Tensor<double>(param.shape);
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  Tensor<double> out = param;
  for (int64_t i = 0; i < param.size(); ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
    double mhat = m[i] / c1;
    double vhat = v[i] / c2;
    out[i] -= lr * mhat / (std::sqrt(vhat) + epsilon);
  }
  return out;
}

double optimizer_step(TrainableGraph& graph, OptimizerState& state) {
  const double lr = state.config.lr.at(state.step_count);
  for (int pid : graph.params) {
    Node& p = graph.node(pid);
    if (p.grad.data.empty()) continue;
    switch (state.config.kind) {
      case OptimizerKind::Sgd:
        p.value = sgd_update(p.value, p.grad, state.slot_m[p.name], lr, state.config.momentum);
        break;
      case OptimizerKind::Adam:
        p.value = adam_update(p.value, p.grad, state.slot_m[p.name], state.slot_v[p.name], lr,
                              state.config.beta1, state.config.beta2, state.config.epsilon,
                              state.step_count + 1);
        break;
    }
  }
  state.step_count++;
  return lr;
}

} // namespace kanji
