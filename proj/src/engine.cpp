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

#include "kanji/engine.hpp"

#include <algorithm>
#include <limits>
#include <string>

namespace kanji {

namespace {

inline int32_t sat8(int32_t v) {
  return std::clamp(v, -128, 127);
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidInputError(msg);
}

} // namespace

int32_t round_shift(int32_t acc, int s) {
  if (s == 0) return acc;
  // int64 intermediate: the +2^(s-1) bias can not overflow, and >> on a
  // signed value is an arithmetic shift in C++20.
  int64_t t = static_cast<int64_t>(acc) + (int64_t{1} << (s - 1));
  return static_cast<int32_t>(t >> s);
}

Shifts derive_shifts(int frac_in, int frac_wt, int frac_bias, int frac_out) {
  Shifts s;
  s.bias_shift = frac_in + frac_wt - frac_bias;
  s.out_shift = frac_in + frac_wt - frac_out;
  if (s.bias_shift < 0 || s.out_shift < 0)
    throw FormatError("unrepresentable format combination: frac_in=" + std::to_string(frac_in) +
                      " frac_wt=" + std::to_string(frac_wt) + " frac_bias=" +
                      std::to_string(frac_bias) + " frac_out=" + std::to_string(frac_out));
  return s;
}

int64_t worst_case_accumulator(int64_t fan_in, int bias_shift) {
  return int64_t{127} * 127 * fan_in + (int64_t{128} << bias_shift);
}

QTensor conv2d_q7(const QTensor& input, const ConvParams& p) {
  require(input.shape.size() == 3, "conv2d_q7: input must be [H,W,C]");
  const int64_t h = input.shape[0];
  const int64_t w = input.shape[1];
  const int64_t c = input.shape[2];
  require(c == p.in_channels, "conv2d_q7: channel mismatch");
  require(p.weights.shape ==
              Shape({p.out_channels, p.in_channels, p.kernel_h, p.kernel_w}),
          "conv2d_q7: weight shape mismatch");
  require(p.bias.shape == Shape({p.out_channels}), "conv2d_q7: bias shape mismatch");
  require(p.stride >= 1 && p.padding >= 0, "conv2d_q7: bad stride/padding");
  require(p.bias_shift >= 0 && p.bias_shift <= 31 && p.out_shift >= 0 && p.out_shift <= 31,
          "conv2d_q7: shift out of range");

  const int64_t oh = (h + 2 * p.padding - p.kernel_h) / p.stride + 1;
  const int64_t ow = (w + 2 * p.padding - p.kernel_w) / p.stride + 1;
  require(oh >= 1 && ow >= 1, "conv2d_q7: kernel larger than padded input");

  // Repack weights O,I,KH,KW -> O,KH,KW,I so the innermost channel loop is
  // contiguous for both operands.
  const int64_t k = static_cast<int64_t>(p.in_channels) * p.kernel_h * p.kernel_w;
  std::vector<int32_t> wpack(static_cast<size_t>(p.out_channels * k));
  for (int64_t o = 0; o < p.out_channels; ++o)
    for (int64_t ci = 0; ci < p.in_channels; ++ci)
      for (int64_t ky = 0; ky < p.kernel_h; ++ky)
        for (int64_t kx = 0; kx < p.kernel_w; ++kx) {
          int64_t src = ((o * p.in_channels + ci) * p.kernel_h + ky) * p.kernel_w + kx;
          int64_t dst = ((o * p.kernel_h + ky) * p.kernel_w + kx) * p.in_channels + ci;
          wpack[static_cast<size_t>(dst)] = p.weights.data[static_cast<size_t>(src)];
        }

  QTensor out(Shape{oh, ow, p.out_channels}, p.out_format);
  const int32_t* in = input.data.data();

  for (int64_t oy = 0; oy < oh; ++oy) {
    for (int64_t ox = 0; ox < ow; ++ox) {
      for (int64_t o = 0; o < p.out_channels; ++o) {
        // int64 accumulation; gated plans keep |acc| < 2^24 so the int32
        // engine semantics are unchanged.
        int64_t acc = static_cast<int64_t>(p.bias.data[static_cast<size_t>(o)]) << p.bias_shift;
        const int32_t* wrow = wpack.data() + o * k;
        for (int64_t ky = 0; ky < p.kernel_h; ++ky) {
          int64_t iy = oy * p.stride - p.padding + ky;
          if (iy < 0 || iy >= h) continue; // zero padding contributes zero
          for (int64_t kx = 0; kx < p.kernel_w; ++kx) {
            int64_t ix = ox * p.stride - p.padding + kx;
            if (ix < 0 || ix >= w) continue;
            const int32_t* irow = in + (iy * w + ix) * c;
            const int32_t* wr = wrow + (ky * p.kernel_w + kx) * c;
            for (int64_t ci = 0; ci < c; ++ci) acc += irow[ci] * wr[ci];
          }
        }
        int32_t v = sat8(round_shift(static_cast<int32_t>(acc), p.out_shift));
        if (p.relu && v < 0) v = 0;
        out.data[static_cast<size_t>((oy * ow + ox) * p.out_channels + o)] = v;
      }
    }
  }
  return out;
}

QTensor fully_connected_q7(const QTensor& input, const FcParams& p) {
  require(input.size() == p.in_features, "fully_connected_q7: input length mismatch");
  require(p.weights.shape == Shape({p.out_features, p.in_features}),
          "fully_connected_q7: weight shape mismatch");
  require(p.bias.shape == Shape({p.out_features}), "fully_connected_q7: bias shape mismatch");
  require(p.bias_shift >= 0 && p.bias_shift <= 31 && p.out_shift >= 0 && p.out_shift <= 31,
          "fully_connected_q7: shift out of range");

  QTensor out(Shape{p.out_features}, p.out_format);
  for (int64_t o = 0; o < p.out_features; ++o) {
    int64_t acc = static_cast<int64_t>(p.bias.data[static_cast<size_t>(o)]) << p.bias_shift;
    const int32_t* wrow = p.weights.data.data() + o * p.in_features;
    const int32_t* in = input.data.data();
    for (int64_t i = 0; i < p.in_features; ++i) acc += in[i] * wrow[i];
    int32_t v = sat8(round_shift(static_cast<int32_t>(acc), p.out_shift));
    if (p.relu && v < 0) v = 0;
    out.data[static_cast<size_t>(o)] = v;
  }
  return out;
}

QTensor maxpool_q7(const QTensor& input, int window, int stride) {
  require(input.shape.size() == 3, "maxpool_q7: input must be [H,W,C]");
  require(window >= 1 && stride >= 1, "maxpool_q7: window/stride must be positive");
  const int64_t h = input.shape[0];
  const int64_t w = input.shape[1];
  const int64_t c = input.shape[2];
  require(window <= h && window <= w, "maxpool_q7: window larger than input");

  const int64_t oh = (h - window) / stride + 1;
  const int64_t ow = (w - window) / stride + 1;
  QTensor out(Shape{oh, ow, c}, input.format);
  for (int64_t oy = 0; oy < oh; ++oy)
    for (int64_t ox = 0; ox < ow; ++ox)
      for (int64_t ci = 0; ci < c; ++ci) {
        int32_t m = std::numeric_limits<int32_t>::min();
        for (int64_t ky = 0; ky < window; ++ky)
          for (int64_t kx = 0; kx < window; ++kx) {
            int64_t iy = oy * stride + ky;
            int64_t ix = ox * stride + kx;
            m = std::max(m, input.data[static_cast<size_t>((iy * w + ix) * c + ci)]);
          }
        out.data[static_cast<size_t>((oy * ow + ox) * c + ci)] = m;
      }
  return out;
}

QTensor relu_q7(const QTensor& input) {
  QTensor out = input;
  for (int32_t& v : out.data) v = std::max(v, 0);
  return out;
}

QTensor preprocess_q7(const Tensor<uint8_t>& image, const PreprocParams& p) {
  require(image.shape.size() == 3, "preprocess_q7: image must be [H,W,C]");
  const int64_t c = image.shape[2];
  require(static_cast<int64_t>(p.mu.size()) == c, "preprocess_q7: mu length != channel count");
  require(p.sigma_shift >= 0, "preprocess_q7: sigma_shift must be >= 0");

  QTensor out(image.shape, QFormat{8, p.sigma_shift});
  for (int64_t i = 0; i < image.size(); ++i) {
    int ch = static_cast<int>(i % c);
    out.data[static_cast<size_t>(i)] = sat8(static_cast<int32_t>(image[i]) - p.mu[static_cast<size_t>(ch)]);
  }
  return out;
}

namespace {

// Shared integer GEMM core. Both matmul flavors widen their operands to
// int16 and run exactly this routine, so the symmetric/asymmetric timing
// difference is the offset-correction work and nothing else.
void gemm_i16_core(const int16_t* a, const int16_t* b, int32_t* out, int64_t m, int64_t kk,
                   int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const int16_t* arow = a + i * kk;
    int32_t* orow = out + i * n;
    for (int64_t kidx = 0; kidx < kk; ++kidx) {
      int32_t av = arow[kidx];
      const int16_t* brow = b + kidx * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += av * static_cast<int32_t>(brow[j]);
    }
  }
}

} // namespace

Tensor<int32_t> matmul_sym(const Tensor<int8_t>& a, const Tensor<int8_t>& b, MatmulStats* stats) {
  require(a.shape.size() == 2 && b.shape.size() == 2, "matmul_sym: operands must be matrices");
  const int64_t m = a.shape[0];
  const int64_t kk = a.shape[1];
  require(b.shape[0] == kk, "matmul_sym: inner dimensions disagree");
  const int64_t n = b.shape[1];

  std::vector<int16_t> aw(a.data.begin(), a.data.end());
  std::vector<int16_t> bw(b.data.begin(), b.data.end());
  Tensor<int32_t> out(Shape{m, n}, 0);
  gemm_i16_core(aw.data(), bw.data(), out.data.data(), m, kk, n);
  if (stats) stats->core_macs += m * n * kk;
  return out;
}

Tensor<int32_t> matmul_asym(const Tensor<uint8_t>& a, const Tensor<uint8_t>& b,
                            int a0, int b0, MatmulStats* stats) {
  require(a.shape.size() == 2 && b.shape.size() == 2, "matmul_asym: operands must be matrices");
  const int64_t m = a.shape[0];
  const int64_t kk = a.shape[1];
  require(b.shape[0] == kk, "matmul_asym: inner dimensions disagree");
  const int64_t n = b.shape[1];

  std::vector<int16_t> aw(a.data.begin(), a.data.end());
  std::vector<int16_t> bw(b.data.begin(), b.data.end());
  Tensor<int32_t> out(Shape{m, n}, 0);
  gemm_i16_core(aw.data(), bw.data(), out.data.data(), m, kk, n);

  // Offset-correction routines: rowsum(A), colsum(B), then the per-element
  // correction -b0*rowsum - a0*colsum + K*a0*b0.
  std::vector<int32_t> rowsum(static_cast<size_t>(m), 0);
  for (int64_t i = 0; i < m; ++i) {
    const uint8_t* arow = a.data.data() + i * kk;
    int32_t s = 0;
    for (int64_t kidx = 0; kidx < kk; ++kidx) s += arow[kidx];
    rowsum[static_cast<size_t>(i)] = s;
  }
  std::vector<int32_t> colsum(static_cast<size_t>(n), 0);
  for (int64_t kidx = 0; kidx < kk; ++kidx) {
    const uint8_t* brow = b.data.data() + kidx * n;
    for (int64_t j = 0; j < n; ++j) colsum[static_cast<size_t>(j)] += brow[j];
  }
  const int32_t kab = static_cast<int32_t>(kk) * a0 * b0;
  for (int64_t i = 0; i < m; ++i) {
    int32_t* orow = out.data.data() + i * n;
    const int32_t ra = b0 * rowsum[static_cast<size_t>(i)];
    for (int64_t j = 0; j < n; ++j)
      orow[j] += kab - ra - a0 * colsum[static_cast<size_t>(j)];
  }

  if (stats) {
    stats->core_macs += m * n * kk;
    stats->correction_ops += m * kk + kk * n + m * n;
  }
  return out;
}

AccumulatorBuffer::AccumulatorBuffer(Shape s, std::vector<int32_t> d)
    : shape(std::move(s)), data(std::move(d)) {
  if (static_cast<int64_t>(data.size()) != numel(shape))
    throw InvalidInputError("accumulator data size does not match shape");
}

DynamicRequantResult requantize_dynamic(const AccumulatorBuffer& acc) {
  if (acc.data.empty()) throw InvalidInputError("requantize_dynamic: empty buffer");

  int32_t lo = acc.data[0];
  int32_t hi = acc.data[0];
  for (int32_t v : acc.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }

  DynamicRequantResult r;
  if (hi == lo) {
    r.params.scale = 1.0;
    r.params.zero_point = static_cast<int>(std::clamp<int64_t>(round_half_up(-double(lo) / 1.0), 0, 255));
  } else {
    r.params.scale = (static_cast<double>(hi) - lo) / 255.0;
    r.params.zero_point = static_cast<int>(
        std::clamp<int64_t>(round_half_up(-static_cast<double>(lo) / r.params.scale), 0, 255));
  }

  r.values = Tensor<uint8_t>(acc.shape);
  for (int64_t i = 0; i < acc.size(); ++i) {
    int64_t q = round_half_up(acc.data[static_cast<size_t>(i)] / r.params.scale) + r.params.zero_point;
    r.values[i] = static_cast<uint8_t>(std::clamp<int64_t>(q, 0, 255));
  }
  r.output_bytes = acc.data.size();               // one byte per element
  r.staging_bytes = acc.data.size() * sizeof(int32_t); // raw outputs held for the scan
  return r;
}

} // namespace kanji
