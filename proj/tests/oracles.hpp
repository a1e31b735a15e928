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
// Brute-force reference implementations for the integer kernels. Test-only.
// Written straight from the operator definitions (position-wise loops, no
// repacking, no im2col, float round for the shift) so they stay independent
// of the engine's implementation choices.
//

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace kanji_oracle {

inline int32_t sat8(int64_t v) {
  if (v < -128) return -128;
  if (v > 127) return 127;
  return static_cast<int32_t>(v);
}

inline int64_t round_shift(int64_t acc, int s) {
  return static_cast<int64_t>(std::floor(static_cast<double>(acc) / std::pow(2.0, s) + 0.5));
}

// input [H,W,C], weights [O,I,KH,KW], zero padding
inline std::vector<int32_t> conv_q7(const std::vector<int32_t>& in, int64_t h, int64_t w,
                                    int64_t c, const std::vector<int32_t>& wt, int64_t o_ch,
                                    int64_t kh, int64_t kw, const std::vector<int32_t>& bias,
                                    int stride, int pad, int bias_shift, int out_shift,
                                    bool relu) {
  const int64_t oh = (h + 2 * pad - kh) / stride + 1;
  const int64_t ow = (w + 2 * pad - kw) / stride + 1;
  std::vector<int32_t> out(static_cast<size_t>(oh * ow * o_ch));
  for (int64_t oy = 0; oy < oh; ++oy)
    for (int64_t ox = 0; ox < ow; ++ox)
      for (int64_t oc = 0; oc < o_ch; ++oc) {
        int64_t acc = static_cast<int64_t>(bias[static_cast<size_t>(oc)]) << bias_shift;
        for (int64_t ci = 0; ci < c; ++ci)
          for (int64_t ky = 0; ky < kh; ++ky)
            for (int64_t kx = 0; kx < kw; ++kx) {
              int64_t iy = oy * stride - pad + ky;
              int64_t ix = ox * stride - pad + kx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              int32_t iv = in[static_cast<size_t>((iy * w + ix) * c + ci)];
              int32_t wv = wt[static_cast<size_t>(((oc * c + ci) * kh + ky) * kw + kx)];
              acc += static_cast<int64_t>(iv) * wv;
            }
        int32_t v = sat8(round_shift(acc, out_shift));
        if (relu && v < 0) v = 0;
        out[static_cast<size_t>((oy * ow + ox) * o_ch + oc)] = v;
      }
  return out;
}

inline std::vector<int32_t> fc_q7(const std::vector<int32_t>& in, const std::vector<int32_t>& wt,
                                  int64_t out_f, int64_t in_f, const std::vector<int32_t>& bias,
                                  int bias_shift, int out_shift, bool relu) {
  std::vector<int32_t> out(static_cast<size_t>(out_f));
  for (int64_t o = 0; o < out_f; ++o) {
    int64_t acc = static_cast<int64_t>(bias[static_cast<size_t>(o)]) << bias_shift;
    for (int64_t i = 0; i < in_f; ++i)
      acc += static_cast<int64_t>(in[static_cast<size_t>(i)]) *
             wt[static_cast<size_t>(o * in_f + i)];
    int32_t v = sat8(round_shift(acc, out_shift));
    if (relu && v < 0) v = 0;
    out[static_cast<size_t>(o)] = v;
  }
  return out;
}

// naive offset form: result[i][j] = sum_k (A[i][k]-a0)(B[k][j]-b0)
inline std::vector<int32_t> matmul_offsets(const std::vector<uint8_t>& a,
                                           const std::vector<uint8_t>& b, int64_t m, int64_t k,
                                           int64_t n, int a0, int b0) {
  std::vector<int32_t> out(static_cast<size_t>(m * n), 0);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      int64_t acc = 0;
      for (int64_t kk = 0; kk < k; ++kk)
        acc += (static_cast<int64_t>(a[static_cast<size_t>(i * k + kk)]) - a0) *
               (static_cast<int64_t>(b[static_cast<size_t>(kk * n + j)]) - b0);
      out[static_cast<size_t>(i * n + j)] = static_cast<int32_t>(acc);
    }
  return out;
}

} // namespace kanji_oracle
