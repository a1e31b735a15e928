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
// Parameter blob: the bit-exact deployment container.
//
//   magic "KNJ1" | version u16 LE | records...
//   record: name_len u16 LE | name | bit_width u8 | frac_bits i8 |
//           dim_count u8 | dims u32 LE each | raw little-endian codes
//
// Record order matches plan parameter order. A sibling "KNJF" container
// carries raw float32 tensors for pre-trained fp32 imports.
//

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kanji/quant.hpp"
#include "kanji/tensor.hpp"

namespace kanji {

struct BlobRecord {
  std::string name;
  int bits = 8;
  int frac_bits = 0;
  Shape dims;
  std::vector<int32_t> data; // codes, widened

  QTensor to_qtensor() const { return QTensor(dims, data, QFormat{bits, frac_bits}); }
};

struct ParameterBlob {
  uint16_t version = 1;
  std::vector<BlobRecord> records;
};

std::vector<uint8_t> serialize_blob(const ParameterBlob& blob);
ParameterBlob parse_blob(const std::vector<uint8_t>& bytes);

void write_blob_file(const ParameterBlob& blob, const std::string& path);
ParameterBlob read_blob_file(const std::string& path);

/// Byte length of a serialized record: 2 + name + 1 + 1 + 1 + 4*dims + numel*bits/8.
size_t blob_record_bytes(const BlobRecord& r);

struct FloatRecord {
  std::string name;
  Shape dims;
  std::vector<float> data;
};

struct FloatBlob {
  uint16_t version = 1;
  std::vector<FloatRecord> records;
};

std::vector<uint8_t> serialize_float_blob(const FloatBlob& blob);
FloatBlob parse_float_blob(const std::vector<uint8_t>& bytes);
void write_float_blob_file(const FloatBlob& blob, const std::string& path);
FloatBlob read_float_blob_file(const std::string& path);

} // namespace kanji
