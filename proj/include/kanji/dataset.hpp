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
// Dataset loading, preprocessing statistics and the baseline
// (input-dependent) preprocessing operators used by the comparison
// experiments.
//

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kanji/engine.hpp"
#include "kanji/tensor.hpp"

namespace kanji {

enum class PreprocKind { BatchNormLike, MeanImage, PerImageStd, None };

const char* preproc_kind_name(PreprocKind k);

struct ImageDataset {
  Tensor<uint8_t> images; // [N, H, W, C]
  std::vector<int32_t> labels;
  std::string split;
  int n_classes = 10;

  int64_t size() const { return images.shape.empty() ? 0 : images.shape[0]; }
  Shape sample_shape() const {
    return images.shape.empty() ? Shape{} : Shape(images.shape.begin() + 1, images.shape.end());
  }
};

/// CIFAR-10 binary layout: 3073-byte records, 1 label byte followed by
/// 1024 red + 1024 green + 1024 blue bytes (row-major 32x32). Returns
/// images in HWC order. Truncated files raise DataError with the offset.
ImageDataset load_cifar10(const std::string& path);

/// Concatenates data_batch_1..5.bin (split "train") or reads
/// test_batch.bin (split "test") from a standard CIFAR-10 directory.
ImageDataset load_cifar10_dir(const std::string& dir, const std::string& split);

/// Writes the same 3073-byte record format (fixtures and round trips).
void save_cifar10(const ImageDataset& ds, const std::string& path);

ImageDataset subset(const ImageDataset& ds, int64_t n);

struct PreprocStats {
  std::vector<double> channel_mean;
  std::vector<double> channel_std; // population
  Tensor<double> mean_image;       // [H, W, C]
};

struct DerivedPreproc {
  PreprocStats stats;
  PreprocParams params; // integer mu, power-of-2 sigma
  bool sigma_floored = false; // set when std < 1 forced sigma_shift to 0
};

/// Exact real statistics plus the integer/power-of-2 deployment form:
/// mu = round(channel mean), sigma_shift = round(log2(mean channel std)),
/// floored at 0.
DerivedPreproc compute_preproc_stats(const ImageDataset& train);

/// (x - mean(x)) / max(std(x), 1/sqrt(numel)) per image; input-dependent.
Tensor<double> per_image_standardization(const Tensor<double>& image);

/// x - mean_image; input-independent, stores a full H*W*C real tensor.
Tensor<double> mean_image_subtract(const Tensor<double>& image, const PreprocStats& stats);

/// Stored-parameter bytes of each preprocessing choice, the basis of the
/// memory-overhead ranking. BatchNormLike counts per-channel integer means
/// plus per-channel shift words; MeanImage counts a float32 mean image.
size_t preproc_param_bytes(PreprocKind kind, int64_t height, int64_t width, int64_t channels);

struct SynthSpec {
  int64_t n = 0;
  int64_t height = 32, width = 32, channels = 3;
  int classes = 10;
  uint64_t class_seed = 42; // class prototypes; share it across splits
  int blobs_per_class = 3;
  double sep = 1.0;    // prototype amplitude
  double noise = 0.5;  // pixel noise in units of 64 gray levels
  int jitter = 2;      // per-image blob translation, pixels
};

/// Reproducible Gaussian-blob classification images. The class structure
/// comes from spec.class_seed, the sampled images from seed, so train and
/// test splits with different seeds share the same task.
ImageDataset synth_dataset(const SynthSpec& spec, uint64_t seed);

} // namespace kanji
