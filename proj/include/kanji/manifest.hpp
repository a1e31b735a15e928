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
// Model manifest: the network description authored against the deployment
// operator library. Line-oriented text:
//
//   # comment
//   version 1
//   name cifar10_cnn
//   input 32 32 3 uint8          (H W C, uint8 | int8)
//   scheme kanji                 (kanji | asym | fp32)
//   preproc batch_norm_like      (batch_norm_like | mean_image |
//                                 per_image_standardization | none)
//   layer conv out_channels=32 kernel=5 stride=1 pad=2 relu=true
//   layer maxpool window=2 stride=2
//   layer fc out_features=10
//   layer relu
//
// Format policies default to auto; an explicit frac_bits pins a tensor:
//   layer conv ... out_format=5 wt_format=7 bias_format=7
//
// Unknown layer kinds fail at parse time ("operator unavailable"); the
// manifest can only name operators the deployment library implements.
//

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kanji/dataset.hpp"
#include "kanji/tensor.hpp"

namespace kanji {

enum class Scheme { Kanji, Asym, Fp32 };

const char* scheme_name(Scheme s);

struct LayerDesc {
  std::string kind; // conv | maxpool | relu | fc
  std::string name; // auto-assigned: conv1, pool1, ...
  int out_channels = 0;
  int kernel = 0;
  int stride = 1;
  int pad = 0;
  int window = 0;
  int out_features = 0;
  bool relu = false; // fused post-activation on conv/fc
  std::optional<int> out_frac, wt_frac, bias_frac; // explicit formats
};

struct ModelManifest {
  int version = 1;
  std::string name = "model";
  int64_t in_h = 0, in_w = 0, in_c = 0;
  bool input_uint8 = true; // false: int8 codes, frac_bits 7
  Scheme scheme = Scheme::Kanji;
  PreprocKind preproc = PreprocKind::None;
  std::vector<LayerDesc> layers;

  // derived during validation: output sample shape of each layer
  std::vector<Shape> layer_shapes;
  Shape output_shape() const { return layer_shapes.empty() ? Shape{} : layer_shapes.back(); }
};

struct ManifestParseResult {
  std::optional<ModelManifest> manifest; // set only when errors is empty
  std::vector<std::string> errors;       // all problems, not just the first
};

ManifestParseResult parse_manifest(const std::string& text);
ManifestParseResult parse_manifest_file(const std::string& path);

} // namespace kanji
