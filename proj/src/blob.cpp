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

#include "kanji/blob.hpp"

#include <cstring>
#include <fstream>

namespace kanji {

namespace {

constexpr char kMagicInt[4] = {'K', 'N', 'J', '1'};
constexpr char kMagicFloat[4] = {'K', 'N', 'J', 'F'};

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

struct Reader {
  const std::vector<uint8_t>& bytes;
  size_t pos = 0;

  bool eof() const { return pos >= bytes.size(); }
  void need(size_t n, const char* what) {
    if (pos + n > bytes.size())
      throw DataError(std::string("blob truncated reading ") + what + " at offset " +
                      std::to_string(pos));
  }
  uint8_t u8(const char* what) {
    need(1, what);
    return bytes[pos++];
  }
  uint16_t u16(const char* what) {
    need(2, what);
    uint16_t v = static_cast<uint16_t>(bytes[pos] | (bytes[pos + 1] << 8));
    pos += 2;
    return v;
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::string str(size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes.data()) + pos, n);
    pos += n;
    return s;
  }
};

} // namespace

size_t blob_record_bytes(const BlobRecord& r) {
  return 2 + r.name.size() + 1 + 1 + 1 + 4 * r.dims.size() +
         static_cast<size_t>(numel(r.dims)) * static_cast<size_t>(r.bits / 8);
}

std::vector<uint8_t> serialize_blob(const ParameterBlob& blob) {
  std::vector<uint8_t> out;
  out.insert(out.end(), kMagicInt, kMagicInt + 4);
  put_u16(out, blob.version);
  for (const BlobRecord& r : blob.records) {
    if (r.name.size() > 0xffff) throw InvalidInputError("record name too long");
    if (r.dims.size() > 0xff) throw InvalidInputError("record rank too large");
    if (!(r.bits == 8 || r.bits == 16 || r.bits == 32))
      throw InvalidInputError("record bit width must be 8, 16 or 32");
    if (static_cast<int64_t>(r.data.size()) != numel(r.dims))
      throw InvalidInputError("record data does not match dims for " + r.name);

    put_u16(out, static_cast<uint16_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    out.push_back(static_cast<uint8_t>(r.bits));
    out.push_back(static_cast<uint8_t>(static_cast<int8_t>(r.frac_bits)));
    out.push_back(static_cast<uint8_t>(r.dims.size()));
    for (int64_t d : r.dims) put_u32(out, static_cast<uint32_t>(d));
    for (int32_t v : r.data) {
      for (int b = 0; b < r.bits / 8; ++b)
        out.push_back(static_cast<uint8_t>((static_cast<uint32_t>(v) >> (8 * b)) & 0xff));
    }
  }
  return out;
}

ParameterBlob parse_blob(const std::vector<uint8_t>& bytes) {
  Reader rd{bytes};
  std::string magic = rd.str(4, "magic");
  if (std::memcmp(magic.data(), kMagicInt, 4) != 0)
    throw DataError("bad blob magic (want KNJ1)");
  ParameterBlob blob;
  blob.version = rd.u16("version");
  if (blob.version != 1) throw DataError("unsupported blob version " + std::to_string(blob.version));

  while (!rd.eof()) {
    BlobRecord r;
    uint16_t name_len = rd.u16("name length");
    r.name = rd.str(name_len, "name");
    r.bits = rd.u8("bit width");
    if (!(r.bits == 8 || r.bits == 16 || r.bits == 32))
      throw DataError("record '" + r.name + "' has bad bit width " + std::to_string(r.bits));
    r.frac_bits = static_cast<int8_t>(rd.u8("frac_bits"));
    uint8_t rank = rd.u8("dim count");
    for (int i = 0; i < rank; ++i) r.dims.push_back(rd.u32("dim"));
    int64_t n = numel(r.dims);
    r.data.resize(static_cast<size_t>(n));
    const int bytes_per = r.bits / 8;
    for (int64_t i = 0; i < n; ++i) {
      uint32_t v = 0;
      for (int b = 0; b < bytes_per; ++b)
        v |= static_cast<uint32_t>(rd.u8("data")) << (8 * b);
      // sign-extend from bits
      int32_t sv;
      if (r.bits == 8) sv = static_cast<int8_t>(v);
      else if (r.bits == 16) sv = static_cast<int16_t>(v);
      else sv = static_cast<int32_t>(v);
      r.data[static_cast<size_t>(i)] = sv;
    }
    blob.records.push_back(std::move(r));
  }
  return blob;
}

void write_blob_file(const ParameterBlob& blob, const std::string& path) {
  std::vector<uint8_t> bytes = serialize_blob(blob);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ParameterBlob read_blob_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_blob(bytes);
}

std::vector<uint8_t> serialize_float_blob(const FloatBlob& blob) {
  std::vector<uint8_t> out;
  out.insert(out.end(), kMagicFloat, kMagicFloat + 4);
  put_u16(out, blob.version);
  for (const FloatRecord& r : blob.records) {
    put_u16(out, static_cast<uint16_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    out.push_back(static_cast<uint8_t>(r.dims.size()));
    for (int64_t d : r.dims) put_u32(out, static_cast<uint32_t>(d));
    for (float v : r.data) {
      uint32_t bits;
      std::memcpy(&bits, &v, 4);
      put_u32(out, bits);
    }
  }
  return out;
}

FloatBlob parse_float_blob(const std::vector<uint8_t>& bytes) {
  Reader rd{bytes};
  std::string magic = rd.str(4, "magic");
  if (std::memcmp(magic.data(), kMagicFloat, 4) != 0)
    throw DataError("bad float blob magic (want KNJF)");
  FloatBlob blob;
  blob.version = rd.u16("version");
  while (!rd.eof()) {
    FloatRecord r;
    uint16_t name_len = rd.u16("name length");
    r.name = rd.str(name_len, "name");
    uint8_t rank = rd.u8("dim count");
    for (int i = 0; i < rank; ++i) r.dims.push_back(rd.u32("dim"));
    int64_t n = numel(r.dims);
    r.data.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
      uint32_t bits = rd.u32("data");
      float v;
      std::memcpy(&v, &bits, 4);
      r.data[static_cast<size_t>(i)] = v;
    }
    blob.records.push_back(std::move(r));
  }
  return blob;
}

void write_float_blob_file(const FloatBlob& blob, const std::string& path) {
  std::vector<uint8_t> bytes = serialize_float_blob(blob);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

FloatBlob read_float_blob_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_float_blob(bytes);
}

} // namespace kanji
