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
// Quantization core: formats, quantize/dequantize/fake-quant and range
// tracking. These semantics are shared bit-for-bit by the int8 engine and
// the trainable model; any change here changes both sides at once.
//

#pragma once

#include <cmath>
#include <cstdint>

#include "kanji/error.hpp"
#include "kanji/tensor.hpp"

namespace kanji {

// frac_bits may be negative (step > 1) for large-magnitude tensors; the
// clamp keeps derived shift amounts inside machine shift range.
inline constexpr int kMinFracBits = -8;
inline constexpr int kMaxFracBits = 31;

/// Symmetric power-of-2 quantization format: real value = code * 2^-frac_bits.
/// The integer range is the full two's-complement range [-2^(bits-1), 2^(bits-1)-1],
/// so min_fp + max_fp = -step rather than exactly 0; code -2^(bits-1) is kept.
struct QFormat {
  int bits = 8;      // 8 for deployment tensors, 16/32 for accumulators
  int frac_bits = 0; // step = 2^-frac_bits

  double step() const { return std::ldexp(1.0, -frac_bits); }
  int64_t min_int() const { return -(int64_t{1} << (bits - 1)); }
  int64_t max_int() const { return (int64_t{1} << (bits - 1)) - 1; }
  double min_fp() const { return std::ldexp(static_cast<double>(min_int()), -frac_bits); }
  double max_fp() const { return std::ldexp(static_cast<double>(max_int()), -frac_bits); }

  bool operator==(const QFormat& o) const { return bits == o.bits && frac_bits == o.frac_bits; }
  bool operator!=(const QFormat& o) const { return !(*this == o); }
};

/// Integer tensor together with its format. Codes are stored widened to
/// int32; every element must lie inside the format's integer range.
struct QTensor {
  Shape shape;
  std::vector<int32_t> data;
  QFormat format;

  QTensor() = default;
  QTensor(Shape s, QFormat fmt)
      : shape(std::move(s)), data(static_cast<size_t>(numel(shape)), 0), format(fmt) {}
  QTensor(Shape s, std::vector<int32_t> d, QFormat fmt);

  int64_t size() const { return static_cast<int64_t>(data.size()); }
};

/// Asymmetric 8-bit parameters: real value = (code - zero_point) * scale.
struct AsymmetricQParams {
  double scale = 1.0;
  int zero_point = 0; // in [0, 255]
  int bits = 8;       // unsigned
};

/// EMA of the observed max-abs of a tensor stream. The first observation
/// seeds the average directly.
struct RangeTracker {
  double max_abs_ema = 0.0;
  double decay = 0.99;
  bool initialized = false;
};

/// Saturation diagnostics for quantize calls.
struct QuantStats {
  int64_t saturated = 0;
  int64_t total = 0;
};

/// Picks the power-of-2 format whose full negative bound covers -max_abs.
/// The positive extreme may saturate by one code (127*step < max_abs <= 128*step);
/// QAT adapts weights to the realized range. max_abs == 0 yields the finest step.
QFormat choose_qformat(double max_abs, int bits);

/// Round-half-up toward +inf: floor(v + 0.5). The one rounding rule used
/// everywhere, identical to the engine's add-then-arithmetic-shift.
int64_t round_half_up(double v);

int32_t quantize_value(double x, const QFormat& fmt, QuantStats* stats = nullptr);
double dequantize_value(int32_t code, const QFormat& fmt);
double fake_quant_value(double x, const QFormat& fmt);

QTensor quantize(const Tensor<double>& x, const QFormat& fmt, QuantStats* stats = nullptr);
Tensor<double> dequantize(const QTensor& q);

/// quantize-then-dequantize; the training-side image of deployment precision.
Tensor<double> fake_quant(const Tensor<double>& x, const QFormat& fmt, QuantStats* stats = nullptr);

/// Straight-through estimator mask: 1 where min_fp <= x <= max_fp, else 0.
Tensor<double> ste_mask(const Tensor<double>& x, const QFormat& fmt);

/// Returns the tracker advanced by one batch observation. Pure.
RangeTracker update_range(const RangeTracker& t, const Tensor<double>& batch);

Tensor<uint8_t> quantize_asymmetric(const Tensor<double>& x, const AsymmetricQParams& p);
Tensor<double> dequantize_asymmetric(const Tensor<uint8_t>& q, const AsymmetricQParams& p);

/// Throws InvalidInputError when any element is outside the format's range.
void check_qtensor(const QTensor& q);

} // namespace kanji
