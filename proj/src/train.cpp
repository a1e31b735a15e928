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

#include "kanji/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "kanji/rng.hpp"

namespace kanji {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

// flip/crop in pixel space before the graph sees the batch
void augment_sample(std::vector<double>& px, const Shape& sample, bool flip, int crop_dy,
                    int crop_dx) {
  const int64_t h = sample[0], w = sample[1], c = sample[2];
  if (flip) {
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w / 2; ++x)
        for (int64_t ch = 0; ch < c; ++ch)
          std::swap(px[(y * w + x) * c + ch], px[(y * w + (w - 1 - x)) * c + ch]);
  }
  if (crop_dy != 0 || crop_dx != 0) {
    std::vector<double> shifted(px.size(), 0.0);
    for (int64_t y = 0; y < h; ++y) {
      int64_t sy = y + crop_dy;
      if (sy < 0 || sy >= h) continue;
      for (int64_t x = 0; x < w; ++x) {
        int64_t sx = x + crop_dx;
        if (sx < 0 || sx >= w) continue;
        for (int64_t ch = 0; ch < c; ++ch)
          shifted[(y * w + x) * c + ch] = px[(sy * w + sx) * c + ch];
      }
    }
    px.swap(shifted);
  }
}

} // namespace

Tensor<double> make_batch(const ImageDataset& data, const std::vector<int64_t>& indices,
                          std::vector<int32_t>* labels) {
  Shape sample = data.sample_shape();
  Shape batched = sample;
  batched.insert(batched.begin(), static_cast<int64_t>(indices.size()));
  Tensor<double> out(batched);
  const int64_t per = numel(sample);
  for (size_t i = 0; i < indices.size(); ++i) {
    const uint8_t* src = data.images.data.data() + indices[i] * per;
    double* dst = out.data.data() + static_cast<int64_t>(i) * per;
    for (int64_t j = 0; j < per; ++j) dst[j] = static_cast<double>(src[j]);
    if (labels) labels->push_back(data.labels[static_cast<size_t>(indices[i])]);
  }
  return out;
}

TrainResult train_loop(TrainableGraph& graph, const ImageDataset& data, const TrainConfig& cfg) {
  if (data.size() == 0) throw InvalidInputError("train_loop: empty dataset");
  if (cfg.batch_size <= 0) throw InvalidInputError("train_loop: batch_size must be positive");

  TrainResult result;
  Rng rng(cfg.seed);
  OptimizerState opt_state;
  opt_state.config = cfg.optimizer;

  const Shape sample = data.sample_shape();
  const int64_t per = numel(sample);
  std::vector<int64_t> order(static_cast<size_t>(data.size()));
  std::iota(order.begin(), order.end(), 0);

  int64_t step = 0;
  double total_ms = 0.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (int64_t start = 0; start + cfg.batch_size <= data.size(); start += cfg.batch_size) {
      auto t0 = Clock::now();
      std::vector<int64_t> idx(order.begin() + start, order.begin() + start + cfg.batch_size);
      std::vector<int32_t> labels;
      Tensor<double> batch = make_batch(data, idx, &labels);

      if (cfg.augment_flip || cfg.augment_crop) {
        std::vector<double> px(static_cast<size_t>(per));
        for (int b = 0; b < cfg.batch_size; ++b) {
          bool flip = cfg.augment_flip && rng.next_double() < 0.5;
          int dy = cfg.augment_crop ? static_cast<int>(rng.next_int(-4, 4)) : 0;
          int dx = cfg.augment_crop ? static_cast<int>(rng.next_int(-4, 4)) : 0;
          if (!flip && dy == 0 && dx == 0) continue;
          double* p = batch.data.data() + static_cast<int64_t>(b) * per;
          px.assign(p, p + per);
          augment_sample(px, sample, flip, dy, dx);
          std::copy(px.begin(), px.end(), p);
        }
      }

      double loss = graph.forward_loss(batch, labels, cfg.mode);
      double lr = opt_state.config.lr.at(opt_state.step_count);
      if (std::isnan(loss)) {
        result.diverged = true;
        result.trace.push_back({step, epoch, loss, lr, ms_since(t0)});
        result.final_loss = loss;
        return result;
      }
      graph.backward();
      optimizer_step(graph, opt_state);

      double ms = ms_since(t0);
      total_ms += ms;
      result.trace.push_back({step, epoch, loss, lr, ms});
      result.final_loss = loss;
      step++;
    }
  }
  if (step > 0) result.mean_step_ms = total_ms / static_cast<double>(step);
  return result;
}

double evaluate_accuracy(TrainableGraph& graph, const ImageDataset& data, TrainMode mode,
                         int batch_size) {
  if (data.size() == 0) throw InvalidInputError("evaluate_accuracy: empty dataset");
  int64_t correct = 0;
  for (int64_t start = 0; start < data.size(); start += batch_size) {
    int64_t end = std::min<int64_t>(start + batch_size, data.size());
    std::vector<int64_t> idx(static_cast<size_t>(end - start));
    std::iota(idx.begin(), idx.end(), start);
    Tensor<double> batch = make_batch(data, idx, nullptr);
    const Tensor<double>& logits = graph.forward(batch, mode);
    const int64_t classes = logits.shape.back();
    for (int64_t s = 0; s < end - start; ++s) {
      const double* row = logits.data.data() + s * classes;
      int64_t best = 0;
      for (int64_t c = 1; c < classes; ++c)
        if (row[c] > row[best]) best = c;
      if (best == data.labels[static_cast<size_t>(start + s)]) correct++;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

void write_trace_csv(const std::vector<TraceRow>& trace, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path);
  f << "step,epoch,loss,lr,wall_ms\n";
  char buf[160];
  for (const TraceRow& r : trace) {
    std::snprintf(buf, sizeof(buf), "%lld,%d,%.17g,%.17g,%.3f\n",
                  static_cast<long long>(r.step), r.epoch, r.loss, r.lr, r.wall_ms);
    f << buf;
  }
}

void init_params(TrainableGraph& graph, uint64_t seed) {
  Rng rng(seed);
  for (int pid : graph.params) {
    Node& p = graph.node(pid);
    if (p.value.data.empty()) continue;
    int64_t fan_in = p.value.size();
    if (p.value.rank() >= 2) {
      fan_in = 1;
      for (size_t d = 1; d < p.value.rank(); ++d) fan_in *= p.value.shape[d];
    }
    // biases (rank 1) start at zero
    if (p.value.rank() == 1) {
      for (double& v : p.value.data) v = 0.0;
      continue;
    }
    double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& v : p.value.data) v = (2.0 * rng.next_double() - 1.0) * limit;
  }
}

} // namespace kanji
