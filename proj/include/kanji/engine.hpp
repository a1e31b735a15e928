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
// Reference int8 deployment engine. Fixed-point kernels with shift-based
// requantization replicating CMSIS-NN semantics, plus the asymmetric
// (GEMMLOWP-style) comparison kernels. The kernels are a semantic
// reference: they must stay bit-identical to the trainable model's
// eval-mode forward, so keep them boring.
//

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "kanji/quant.hpp"
#include "kanji/tensor.hpp"

namespace kanji {

// Plans whose worst-case accumulator magnitude reaches 2^24 are rejected:
// every numeric path (including single-precision replicas) stays exact
// below that bound.
inline constexpr int64_t kAccumulatorGate = int64_t{1} << 24;

/// floor(acc / 2^s + 0.5) computed as add-half-then-arithmetic-shift.
int32_t round_shift(int32_t acc, int s);

struct Shifts {
  int bias_shift = 0;
  int out_shift = 0;
};

/// bias_shift = frac_in + frac_wt - frac_bias, out_shift = frac_in + frac_wt - frac_out.
/// Throws FormatError when either comes out negative (the format chooser
/// must lower frac_bias / frac_out).
Shifts derive_shifts(int frac_in, int frac_wt, int frac_bias, int frac_out);

/// Worst-case |accumulator| for the plan gate: 127*127*fan_in + 128*2^bias_shift.
int64_t worst_case_accumulator(int64_t fan_in, int bias_shift);

struct ConvParams {
  int in_channels = 0;
  int out_channels = 0;
  int kernel_h = 0;
  int kernel_w = 0;
  int stride = 1;
  int padding = 0;
  QTensor weights; // [out_channels, in_channels, kernel_h, kernel_w]
  QTensor bias;    // [out_channels]
  int bias_shift = 0;
  int out_shift = 0;
  QFormat out_format{8, 0};
  bool relu = false; // fused post-activation, applied after requantization
};

struct FcParams {
  int in_features = 0;
  int out_features = 0;
  QTensor weights; // [out_features, in_features]
  QTensor bias;    // [out_features]
  int bias_shift = 0;
  int out_shift = 0;
  QFormat out_format{8, 0};
  bool relu = false;
};

/// Per-channel integer mean plus a per-tensor power-of-2 scale exponent.
/// The division by sigma = 2^sigma_shift is carried by the output format,
/// costing zero runtime arithmetic.
struct PreprocParams {
  std::vector<int> mu; // one entry per channel, each in [0, 255]
  int sigma_shift = 0;
};

/// HWC input, zero padding. acc = (bias << bias_shift) + sum(in * w);
/// out = sat8(round_shift(acc, out_shift)).
QTensor conv2d_q7(const QTensor& input, const ConvParams& p);

QTensor fully_connected_q7(const QTensor& input, const FcParams& p);

/// Integer max per window; format unchanged.
QTensor maxpool_q7(const QTensor& input, int window, int stride);

/// max(q, 0); format unchanged.
QTensor relu_q7(const QTensor& input);

/// out = sat8(pixel - mu[c]); output format frac_bits = sigma_shift.
QTensor preprocess_q7(const Tensor<uint8_t>& image, const PreprocParams& p);

/// Work counters for the structural symmetric-vs-asymmetric comparison.
struct MatmulStats {
  int64_t core_macs = 0;
  int64_t correction_ops = 0; // rowsum/colsum/apply passes; zero on the symmetric path
};

/// Plain signed int8 matrix multiply, int32 accumulation. No offset
/// corrections exist on this path.
Tensor<int32_t> matmul_sym(const Tensor<int8_t>& a, const Tensor<int8_t>& b,
                           MatmulStats* stats = nullptr);

/// GEMMLOWP-style offset-corrected multiply of unsigned matrices:
/// result = sum((A - a0)(B - b0)), computed as the integer core plus
/// -b0*rowsum(A) - a0*colsum(B) + K*a0*b0. The decomposition is exact.
Tensor<int32_t> matmul_asym(const Tensor<uint8_t>& a, const Tensor<uint8_t>& b,
                            int a0, int b0, MatmulStats* stats = nullptr);

struct AccumulatorBuffer {
  Shape shape;
  std::vector<int32_t> data;

  AccumulatorBuffer() = default;
  AccumulatorBuffer(Shape s, std::vector<int32_t> d);
  int64_t size() const { return static_cast<int64_t>(data.size()); }
};

struct DynamicRequantResult {
  Tensor<uint8_t> values;
  AsymmetricQParams params;
  size_t staging_bytes = 0; // int32 staging actually held during the scan
  size_t output_bytes = 0;  // final uint8 result
};

/// Input-dependent output quantization: scans for min/max, derives an
/// arbitrary scale and zero point, requantizes. The staging buffer is 4x
/// the byte size of the int8 result; that ratio is the measured basis of
/// the memory-overhead comparison against on-the-fly shifting.
DynamicRequantResult requantize_dynamic(const AccumulatorBuffer& acc);

} // namespace kanji
