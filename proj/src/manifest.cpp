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

#include "kanji/manifest.hpp"

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "kanji/quant.hpp"

namespace kanji {

const char* scheme_name(Scheme s) {
  switch (s) {
    case Scheme::Kanji: return "kanji";
    case Scheme::Asym: return "asym";
    case Scheme::Fp32: return "fp32";
  }
  return "?";
}

namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

bool parse_int(const std::string& s, int64_t& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  long long v = std::strtoll(s.c_str(), &end, 10);
  if (end != s.c_str() + s.size()) return false;
  out = v;
  return true;
}

bool parse_bool(const std::string& s, bool& out) {
  if (s == "true" || s == "1") {
    out = true;
    return true;
  }
  if (s == "false" || s == "0") {
    out = false;
    return true;
  }
  return false;
}

struct Attr {
  std::string key, value;
};

bool parse_attrs(const std::vector<std::string>& toks, size_t from, std::vector<Attr>& attrs,
                 std::string& bad) {
  for (size_t i = from; i < toks.size(); ++i) {
    size_t eq = toks[i].find('=');
    if (eq == std::string::npos || eq == 0) {
      bad = toks[i];
      return false;
    }
    attrs.push_back({toks[i].substr(0, eq), toks[i].substr(eq + 1)});
  }
  return true;
}

} // namespace

ManifestParseResult parse_manifest(const std::string& text) {
  ManifestParseResult res;
  ModelManifest m;
  bool saw_version = false, saw_input = false;
  std::map<std::string, int> kind_counts;

  auto err = [&](int lineno, const std::string& msg) {
    res.errors.push_back("line " + std::to_string(lineno) + ": " + msg);
  };

  std::istringstream ss(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(ss, raw)) {
    lineno++;
    std::string line = raw;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::vector<std::string> toks = split_ws(line);
    if (toks.empty()) continue;
    const std::string& head = toks[0];

    if (head == "version") {
      int64_t v = 0;
      if (toks.size() != 2 || !parse_int(toks[1], v))
        err(lineno, "expected: version <integer>");
      else if (v != 1)
        err(lineno, "unsupported manifest version " + std::to_string(v));
      else {
        m.version = static_cast<int>(v);
        saw_version = true;
      }
    } else if (head == "name") {
      if (toks.size() != 2)
        err(lineno, "expected: name <identifier>");
      else
        m.name = toks[1];
    } else if (head == "input") {
      int64_t h = 0, w = 0, c = 0;
      if (toks.size() != 5 || !parse_int(toks[1], h) || !parse_int(toks[2], w) ||
          !parse_int(toks[3], c) || (toks[4] != "uint8" && toks[4] != "int8")) {
        err(lineno, "expected: input <H> <W> <C> <uint8|int8>");
      } else if (h < 1 || w < 1 || c < 1) {
        err(lineno, "input dimensions must be positive");
      } else {
        m.in_h = h;
        m.in_w = w;
        m.in_c = c;
        m.input_uint8 = (toks[4] == "uint8");
        saw_input = true;
      }
    } else if (head == "scheme") {
      if (toks.size() != 2) {
        err(lineno, "expected: scheme <kanji|asym|fp32>");
      } else if (toks[1] == "kanji") {
        m.scheme = Scheme::Kanji;
      } else if (toks[1] == "asym") {
        m.scheme = Scheme::Asym;
      } else if (toks[1] == "fp32") {
        m.scheme = Scheme::Fp32;
      } else {
        err(lineno, "unknown scheme '" + toks[1] + "'");
      }
    } else if (head == "preproc") {
      if (toks.size() != 2) {
        err(lineno, "expected: preproc <kind>");
      } else if (toks[1] == "batch_norm_like") {
        m.preproc = PreprocKind::BatchNormLike;
      } else if (toks[1] == "mean_image") {
        m.preproc = PreprocKind::MeanImage;
      } else if (toks[1] == "per_image_standardization") {
        m.preproc = PreprocKind::PerImageStd;
      } else if (toks[1] == "none") {
        m.preproc = PreprocKind::None;
      } else {
        err(lineno, "unknown preprocessing '" + toks[1] + "'");
      }
    } else if (head == "layer") {
      if (toks.size() < 2) {
        err(lineno, "expected: layer <kind> [key=value ...]");
        continue;
      }
      const std::string& kind = toks[1];
      if (kind != "conv" && kind != "maxpool" && kind != "relu" && kind != "fc") {
        err(lineno, "operator unavailable: " + kind);
        continue;
      }
      std::vector<Attr> attrs;
      std::string bad;
      if (!parse_attrs(toks, 2, attrs, bad)) {
        err(lineno, "malformed attribute '" + bad + "'");
        continue;
      }

      LayerDesc layer;
      layer.kind = kind;
      bool ok = true;
      for (const Attr& a : attrs) {
        int64_t iv = 0;
        bool bv = false;
        if (a.key == "out_channels" && parse_int(a.value, iv)) layer.out_channels = static_cast<int>(iv);
        else if (a.key == "kernel" && parse_int(a.value, iv)) layer.kernel = static_cast<int>(iv);
        else if (a.key == "stride" && parse_int(a.value, iv)) layer.stride = static_cast<int>(iv);
        else if (a.key == "pad" && parse_int(a.value, iv)) layer.pad = static_cast<int>(iv);
        else if (a.key == "window" && parse_int(a.value, iv)) layer.window = static_cast<int>(iv);
        else if (a.key == "out_features" && parse_int(a.value, iv)) layer.out_features = static_cast<int>(iv);
        else if (a.key == "relu" && parse_bool(a.value, bv)) layer.relu = bv;
        else if (a.key == "out_format" || a.key == "wt_format" || a.key == "bias_format") {
          if (a.value == "auto") continue;
          if (!parse_int(a.value, iv) || iv < kMinFracBits || iv > kMaxFracBits) {
            err(lineno, "bad format '" + a.value + "' for " + a.key +
                        " (auto or frac_bits in [" + std::to_string(kMinFracBits) + "," +
                        std::to_string(kMaxFracBits) + "])");
            ok = false;
          } else if (a.key == "out_format") layer.out_frac = static_cast<int>(iv);
          else if (a.key == "wt_format") layer.wt_frac = static_cast<int>(iv);
          else layer.bias_frac = static_cast<int>(iv);
        } else {
          err(lineno, "unknown or malformed attribute '" + a.key + "=" + a.value + "' for " + kind);
          ok = false;
        }
      }
      if (!ok) continue;

      if (kind == "conv") {
        if (layer.out_channels < 1) err(lineno, "conv requires out_channels >= 1");
        if (layer.kernel < 1) err(lineno, "conv requires kernel >= 1");
        if (layer.stride < 1 || layer.pad < 0) err(lineno, "conv stride/pad out of range");
        layer.name = "conv" + std::to_string(++kind_counts["conv"]);
      } else if (kind == "maxpool") {
        if (layer.window < 1) err(lineno, "maxpool requires window >= 1");
        if (layer.stride < 1) layer.stride = layer.window;
        layer.name = "pool" + std::to_string(++kind_counts["maxpool"]);
      } else if (kind == "relu") {
        layer.name = "relu" + std::to_string(++kind_counts["relu"]);
      } else { // fc
        if (layer.out_features < 1) err(lineno, "fc requires out_features >= 1");
        layer.name = "fc" + std::to_string(++kind_counts["fc"]);
      }
      m.layers.push_back(layer);
    } else {
      err(lineno, "unknown directive '" + head + "'");
    }
  }

  if (!saw_version) res.errors.push_back("missing required 'version' line");
  if (!saw_input) res.errors.push_back("missing required 'input' line");
  if (m.layers.empty()) res.errors.push_back("manifest declares no layers");

  if (saw_input && m.input_uint8 && m.preproc == PreprocKind::None && m.scheme != Scheme::Fp32)
    res.errors.push_back("uint8 input requires preprocessing for integer schemes");
  if (saw_input && !m.input_uint8 && m.preproc != PreprocKind::None)
    res.errors.push_back("int8 input is already quantized; use 'preproc none'");

  // chain shapes
  if (saw_input) {
    Shape cur{m.in_h, m.in_w, m.in_c};
    bool spatial = true;
    for (const LayerDesc& l : m.layers) {
      if (l.kind == "conv") {
        if (!spatial) {
          res.errors.push_back(l.name + ": conv requires spatial input");
          break;
        }
        int64_t oh = (cur[0] + 2 * l.pad - l.kernel) / l.stride + 1;
        int64_t ow = (cur[1] + 2 * l.pad - l.kernel) / l.stride + 1;
        if (oh < 1 || ow < 1) {
          res.errors.push_back(l.name + ": kernel larger than padded input " + shape_str(cur));
          break;
        }
        cur = {oh, ow, l.out_channels};
      } else if (l.kind == "maxpool") {
        if (!spatial) {
          res.errors.push_back(l.name + ": maxpool requires spatial input");
          break;
        }
        if (l.window > cur[0] || l.window > cur[1]) {
          res.errors.push_back(l.name + ": window larger than input " + shape_str(cur));
          break;
        }
        cur = {(cur[0] - l.window) / l.stride + 1, (cur[1] - l.window) / l.stride + 1, cur[2]};
      } else if (l.kind == "fc") {
        cur = Shape{l.out_features};
        spatial = false;
      }
      // relu: shape unchanged
      m.layer_shapes.push_back(cur);
    }
  }

  if (res.errors.empty()) res.manifest = std::move(m);
  return res;
}

ManifestParseResult parse_manifest_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) {
    ManifestParseResult res;
    res.errors.push_back("cannot open manifest file " + path);
    return res;
  }
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_manifest(buf.str());
}

} // namespace kanji
