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

#include "kanji/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>

#include "kanji/engine.hpp"
#include "kanji/rng.hpp"

namespace kanji {

namespace {

using Clock = std::chrono::steady_clock;

// Paired timing: the two variants run back to back inside each round so
// machine drift hits both sides alike. Inner iteration counts are sized
// for ~20 ms windows; the reported ratio is the median over rounds and
// the per-call times are the round minima.
struct Paired {
  double base_ms = 0.0;
  double other_ms = 0.0;
  double ratio = 0.0;
};

Paired time_paired(const std::function<void()>& base, const std::function<void()>& other,
                   int rounds) {
  auto probe = [](const std::function<void()>& fn) {
    auto t0 = Clock::now();
    fn();
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  };
  double pb = probe(base); // also warms up
  double po = probe(other);
  const double window_ms = 20.0;
  int ib = std::max(1, static_cast<int>(window_ms / std::max(pb, 1e-4)));
  int io = std::max(1, static_cast<int>(window_ms / std::max(po, 1e-4)));

  std::vector<double> bms, oms, ratios;
  for (int r = 0; r < rounds; ++r) {
    auto t0 = Clock::now();
    for (int i = 0; i < ib; ++i) base();
    auto t1 = Clock::now();
    for (int i = 0; i < io; ++i) other();
    auto t2 = Clock::now();
    double tb = std::chrono::duration<double, std::milli>(t1 - t0).count() / ib;
    double to = std::chrono::duration<double, std::milli>(t2 - t1).count() / io;
    bms.push_back(tb);
    oms.push_back(to);
    ratios.push_back(to / tb);
  }
  std::sort(bms.begin(), bms.end());
  std::sort(oms.begin(), oms.end());
  std::sort(ratios.begin(), ratios.end());
  Paired p;
  p.base_ms = bms.front();
  p.other_ms = oms.front();
  p.ratio = ratios[ratios.size() / 2];
  return p;
}

} // namespace

MatmulBenchRow bench_matmul(int size, int reps, uint64_t seed) {
  Rng rng(seed);
  const int64_t n = size;
  Tensor<uint8_t> au(Shape{n, n}), bu(Shape{n, n});
  for (int64_t i = 0; i < au.size(); ++i) au[i] = static_cast<uint8_t>(rng.next_int(0, 255));
  for (int64_t i = 0; i < bu.size(); ++i) bu[i] = static_cast<uint8_t>(rng.next_int(0, 255));
  // same bytes, signed view: s = u - 128, which is the value (u - zero_point)
  Tensor<int8_t> as(Shape{n, n}), bs(Shape{n, n});
  for (int64_t i = 0; i < au.size(); ++i) as[i] = static_cast<int8_t>(au[i] - 128);
  for (int64_t i = 0; i < bu.size(); ++i) bs[i] = static_cast<int8_t>(bu[i] - 128);

  volatile int32_t sink = 0;
  Paired p = time_paired(
      [&] {
        Tensor<int32_t> r = matmul_sym(as, bs);
        sink = sink + r[0];
      },
      [&] {
        Tensor<int32_t> r = matmul_asym(au, bu, 128, 128);
        sink = sink + r[0];
      },
      reps);
  (void)sink;
  MatmulBenchRow row;
  row.size = size;
  row.sym_ms = p.base_ms;
  row.asym_ms = p.other_ms;
  row.overhead = p.ratio;
  return row;
}

RequantBenchRow bench_requant(int64_t elements, int reps, uint64_t seed) {
  Rng rng(seed);
  AccumulatorBuffer acc;
  acc.shape = Shape{elements};
  acc.data.resize(static_cast<size_t>(elements));
  for (int64_t i = 0; i < elements; ++i)
    acc.data[static_cast<size_t>(i)] = static_cast<int32_t>(rng.next_int(-(1 << 20), 1 << 20));

  RequantBenchRow row;
  row.elements = elements;

  std::vector<int8_t> out8(static_cast<size_t>(elements));
  volatile int32_t sink = 0;
  Paired p = time_paired(
      [&] {
        // on-the-fly power-of-2 output quantization
        for (int64_t i = 0; i < elements; ++i) {
          int32_t v = round_shift(acc.data[static_cast<size_t>(i)], 13);
          out8[static_cast<size_t>(i)] = static_cast<int8_t>(std::clamp(v, -128, 127));
        }
        sink = sink + out8[0];
      },
      [&] {
        DynamicRequantResult r = requantize_dynamic(acc);
        sink = sink + r.values[0];
      },
      reps);
  (void)sink;
  row.shift_ms = p.base_ms;
  row.dynamic_ms = p.other_ms;
  row.overhead = p.ratio;
  DynamicRequantResult r = requantize_dynamic(acc);
  row.staging_bytes = r.staging_bytes;
  row.output_bytes = r.output_bytes;
  row.memory_ratio = static_cast<double>(r.staging_bytes) / static_cast<double>(r.output_bytes);
  return row;
}

BenchReport run_bench(const std::vector<int>& sizes, int reps, uint64_t seed) {
  BenchReport report;
  for (int s : sizes) {
    report.matmul.push_back(bench_matmul(s, reps, seed));
    report.requant.push_back(bench_requant(static_cast<int64_t>(s) * s, reps, seed + 1));
  }
  return report;
}

std::string bench_report_csv(const BenchReport& report) {
  std::string csv = "op,size,sym_ms,asym_ms,overhead,staging_bytes,output_bytes,memory_ratio\n";
  char buf[256];
  for (const MatmulBenchRow& r : report.matmul) {
    std::snprintf(buf, sizeof(buf), "matmul,%d,%.6f,%.6f,%.4f,,,\n", r.size, r.sym_ms, r.asym_ms,
                  r.overhead);
    csv += buf;
  }
  for (const RequantBenchRow& r : report.requant) {
    std::snprintf(buf, sizeof(buf), "requant,%lld,%.6f,%.6f,%.4f,%zu,%zu,%.2f\n",
                  static_cast<long long>(r.elements), r.shift_ms, r.dynamic_ms, r.overhead,
                  r.staging_bytes, r.output_bytes, r.memory_ratio);
    csv += buf;
  }
  return csv;
}

} // namespace kanji
