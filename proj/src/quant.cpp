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

#include "kanji/quant.hpp"

#include <algorithm>

namespace kanji {

QTensor::QTensor(Shape s, std::vector<int32_t> d, QFormat fmt)
    : shape(std::move(s)), data(std::move(d)), format(fmt) {
  if (static_cast<int64_t>(data.size()) != numel(shape))
    throw InvalidInputError("qtensor data size does not match shape " + shape_str(shape));
  check_qtensor(*this);
}

void check_qtensor(const QTensor& q) {
  const int64_t lo = q.format.min_int();
  const int64_t hi = q.format.max_int();
  for (int32_t v : q.data) {
    if (v < lo || v > hi)
      throw InvalidInputError("qtensor element " + std::to_string(v) +
                              " outside integer range of q" + std::to_string(q.format.bits) +
                              " format");
  }
}

QFormat choose_qformat(double max_abs, int bits) {
  if (!(bits == 8 || bits == 16 || bits == 32))
    throw InvalidInputError("unsupported bit width " + std::to_string(bits));
  if (!std::isfinite(max_abs) || max_abs < 0.0)
    throw InvalidInputError("max_abs must be finite and non-negative");

  int frac;
  if (max_abs == 0.0) {
    frac = bits - 1; // all-zero tensor: finest step, maximal headroom
  } else {
    // ceil(log2(max_abs)) computed exactly from the binary exponent.
    int exp = 0;
    double m = std::frexp(max_abs, &exp); // max_abs = m * 2^exp, m in [0.5, 1)
    int ceil_log2 = (m == 0.5) ? exp - 1 : exp;
    frac = (bits - 1) - ceil_log2;
  }
  frac = std::clamp(frac, kMinFracBits, kMaxFracBits);
  return QFormat{bits, frac};
}

int64_t round_half_up(double v) {
  return static_cast<int64_t>(std::floor(v + 0.5));
}

int32_t quantize_value(double x, const QFormat& fmt, QuantStats* stats) {
  if (stats) stats->total++;
  if (std::isnan(x)) return 0;
  const int64_t lo = fmt.min_int();
  const int64_t hi = fmt.max_int();
  double scaled = std::ldexp(x, fmt.frac_bits); // exact power-of-2 scaling
  int64_t q;
  if (scaled >= 9.0e18) { // keep the int64 conversion in range
    q = hi + 1;
  } else if (scaled <= -9.0e18) {
    q = lo - 1;
  } else {
    q = round_half_up(scaled);
  }
  if (q < lo) {
    if (stats) stats->saturated++;
    return static_cast<int32_t>(lo);
  }
  if (q > hi) {
    if (stats) stats->saturated++;
    return static_cast<int32_t>(hi);
  }
  return static_cast<int32_t>(q);
}

double dequantize_value(int32_t code, const QFormat& fmt) {
  return std::ldexp(static_cast<double>(code), -fmt.frac_bits);
}

double fake_quant_value(double x, const QFormat& fmt) {
  return dequantize_value(quantize_value(x, fmt), fmt);
}

QTensor quantize(const Tensor<double>& x, const QFormat& fmt, QuantStats* stats) {
  QTensor out(x.shape, fmt);
  for (int64_t i = 0; i < x.size(); ++i) out.data[static_cast<size_t>(i)] = quantize_value(x[i], fmt, stats);
  return out;
}

Tensor<double> dequantize(const QTensor& q) {
  Tensor<double> out(q.shape);
  for (int64_t i = 0; i < q.size(); ++i)
    out[i] = dequantize_value(q.data[static_cast<size_t>(i)], q.format);
  return out;
}

Tensor<double> fake_quant(const Tensor<double>& x, const QFormat& fmt, QuantStats* stats) {
  Tensor<double> out(x.shape);
  for (int64_t i = 0; i < x.size(); ++i)
    out[i] = dequantize_value(quantize_value(x[i], fmt, stats), fmt);
  return out;
}

Tensor<double> ste_mask(const Tensor<double>& x, const QFormat& fmt) {
  const double lo = fmt.min_fp();
  const double hi = fmt.max_fp();
  Tensor<double> mask(x.shape);
  for (int64_t i = 0; i < x.size(); ++i) mask[i] = (x[i] >= lo && x[i] <= hi) ? 1.0 : 0.0;
  return mask;
}

RangeTracker update_range(const RangeTracker& t, const Tensor<double>& batch) {
  if (batch.empty()) throw InvalidInputError("update_range: empty batch");
  double m = max_abs(batch);
  RangeTracker next = t;
  if (!t.initialized) {
    next.max_abs_ema = m;
    next.initialized = true;
  } else {
    next.max_abs_ema = t.decay * t.max_abs_ema + (1.0 - t.decay) * m;
  }
  return next;
}

Tensor<uint8_t> quantize_asymmetric(const Tensor<double>& x, const AsymmetricQParams& p) {
  if (!(p.scale > 0.0)) throw InvalidInputError("asymmetric scale must be positive");
  Tensor<uint8_t> out(x.shape);
  for (int64_t i = 0; i < x.size(); ++i) {
    int64_t q = round_half_up(x[i] / p.scale) + p.zero_point;
    out[i] = static_cast<uint8_t>(std::clamp<int64_t>(q, 0, 255));
  }
  return out;
}

Tensor<double> dequantize_asymmetric(const Tensor<uint8_t>& q, const AsymmetricQParams& p) {
  Tensor<double> out(q.shape);
  for (int64_t i = 0; i < q.size(); ++i)
    out[i] = (static_cast<double>(q[i]) - p.zero_point) * p.scale;
  return out;
}

} // namespace kanji
