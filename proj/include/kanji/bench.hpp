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
// Microbenchmarks behind the bench command: symmetric vs offset-corrected
// matrix multiply, and on-the-fly shift requantization vs dynamic
// (input-dependent) requantization with its staging memory.
//

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace kanji {

struct MatmulBenchRow {
  int size = 0;        // square M=N=K
  double sym_ms = 0.0; // median per call
  double asym_ms = 0.0;
  double overhead = 0.0; // asym_ms / sym_ms
};

struct RequantBenchRow {
  int64_t elements = 0;
  double shift_ms = 0.0;
  double dynamic_ms = 0.0;
  double overhead = 0.0;
  size_t staging_bytes = 0;
  size_t output_bytes = 0;
  double memory_ratio = 0.0; // staging / output
};

/// Same bytes through both kernels (signed view for the symmetric one,
/// unsigned with zero point 128 for the corrected one), median of reps
/// timed runs after one warmup.
MatmulBenchRow bench_matmul(int size, int reps, uint64_t seed);

RequantBenchRow bench_requant(int64_t elements, int reps, uint64_t seed);

struct BenchReport {
  std::vector<MatmulBenchRow> matmul;
  std::vector<RequantBenchRow> requant;
};

BenchReport run_bench(const std::vector<int>& sizes, int reps, uint64_t seed);

/// op,size,sym_ms,asym_ms,overhead,staging_bytes,output_bytes,memory_ratio CSV.
std::string bench_report_csv(const BenchReport& report);

} // namespace kanji
