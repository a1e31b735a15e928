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

#include "kanji/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "kanji/quant.hpp"
#include "kanji/rng.hpp"

namespace kanji {

namespace {
constexpr int64_t kCifarDim = 32;
constexpr int64_t kCifarChannels = 3;
constexpr int64_t kCifarRecord = 1 + kCifarDim * kCifarDim * kCifarChannels;
} // namespace

const char* preproc_kind_name(PreprocKind k) {
  switch (k) {
    case PreprocKind::BatchNormLike: return "batch_norm_like";
    case PreprocKind::MeanImage: return "mean_image";
    case PreprocKind::PerImageStd: return "per_image_standardization";
    case PreprocKind::None: return "none";
  }
  return "?";
}

ImageDataset load_cifar10(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  ImageDataset ds;
  if (bytes.empty()) {
    std::fprintf(stderr, "warning: %s is empty, loading 0 records\n", path.c_str());
    ds.images = Tensor<uint8_t>(Shape{0, kCifarDim, kCifarDim, kCifarChannels});
    return ds;
  }
  if (bytes.size() % kCifarRecord != 0)
    throw DataError("truncated record in " + path + " at byte offset " +
                    std::to_string((bytes.size() / kCifarRecord) * kCifarRecord));

  const int64_t n = static_cast<int64_t>(bytes.size() / kCifarRecord);
  ds.images = Tensor<uint8_t>(Shape{n, kCifarDim, kCifarDim, kCifarChannels});
  ds.labels.resize(static_cast<size_t>(n));
  for (int64_t r = 0; r < n; ++r) {
    const uint8_t* rec = bytes.data() + r * kCifarRecord;
    if (rec[0] > 9)
      throw DataError("label byte " + std::to_string(rec[0]) + " out of range at record " +
                      std::to_string(r) + " (byte offset " + std::to_string(r * kCifarRecord) + ")");
    ds.labels[static_cast<size_t>(r)] = rec[0];
    // planar RGB -> HWC
    for (int64_t y = 0; y < kCifarDim; ++y)
      for (int64_t x = 0; x < kCifarDim; ++x)
        for (int64_t c = 0; c < kCifarChannels; ++c)
          ds.images[((r * kCifarDim + y) * kCifarDim + x) * kCifarChannels + c] =
              rec[1 + c * kCifarDim * kCifarDim + y * kCifarDim + x];
  }
  return ds;
}

ImageDataset load_cifar10_dir(const std::string& dir, const std::string& split) {
  namespace fs = std::filesystem;
  std::vector<std::string> files;
  if (split == "train") {
    for (int i = 1; i <= 5; ++i) files.push_back(dir + "/data_batch_" + std::to_string(i) + ".bin");
  } else if (split == "test") {
    files.push_back(dir + "/test_batch.bin");
  } else {
    throw InvalidInputError("unknown split '" + split + "'");
  }

  ImageDataset out;
  out.split = split;
  std::vector<ImageDataset> parts;
  int64_t total = 0;
  for (const std::string& f : files) {
    if (!fs::exists(f)) throw DataError("missing CIFAR-10 file " + f);
    parts.push_back(load_cifar10(f));
    total += parts.back().size();
  }
  out.images = Tensor<uint8_t>(Shape{total, kCifarDim, kCifarDim, kCifarChannels});
  const int64_t bytes_per = kCifarDim * kCifarDim * kCifarChannels;
  int64_t off = 0;
  for (ImageDataset& p : parts) {
    std::copy(p.images.data.begin(), p.images.data.end(), out.images.data.begin() + off * bytes_per);
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
    off += p.size();
  }
  return out;
}

void save_cifar10(const ImageDataset& ds, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  const int64_t n = ds.size();
  std::vector<uint8_t> rec(static_cast<size_t>(kCifarRecord));
  for (int64_t r = 0; r < n; ++r) {
    rec[0] = static_cast<uint8_t>(ds.labels[static_cast<size_t>(r)]);
    for (int64_t y = 0; y < kCifarDim; ++y)
      for (int64_t x = 0; x < kCifarDim; ++x)
        for (int64_t c = 0; c < kCifarChannels; ++c)
          rec[static_cast<size_t>(1 + c * kCifarDim * kCifarDim + y * kCifarDim + x)] =
              ds.images[((r * kCifarDim + y) * kCifarDim + x) * kCifarChannels + c];
    f.write(reinterpret_cast<const char*>(rec.data()), static_cast<std::streamsize>(rec.size()));
  }
}

ImageDataset subset(const ImageDataset& ds, int64_t n) {
  if (n <= 0 || n >= ds.size()) return ds;
  ImageDataset out;
  out.split = ds.split;
  out.n_classes = ds.n_classes;
  Shape s = ds.images.shape;
  s[0] = n;
  const int64_t per = numel(ds.sample_shape());
  out.images = Tensor<uint8_t>(s);
  std::copy(ds.images.data.begin(), ds.images.data.begin() + n * per, out.images.data.begin());
  out.labels.assign(ds.labels.begin(), ds.labels.begin() + n);
  return out;
}

DerivedPreproc compute_preproc_stats(const ImageDataset& train) {
  if (train.size() == 0) throw InvalidInputError("compute_preproc_stats: empty dataset");
  const Shape sample = train.sample_shape();
  const int64_t n = train.size();
  const int64_t per = numel(sample);
  const int64_t c = sample.back();

  DerivedPreproc out;
  out.stats.channel_mean.assign(static_cast<size_t>(c), 0.0);
  out.stats.channel_std.assign(static_cast<size_t>(c), 0.0);
  out.stats.mean_image = Tensor<double>(sample);

  std::vector<double> sum(static_cast<size_t>(c), 0.0), sumsq(static_cast<size_t>(c), 0.0);
  for (int64_t i = 0; i < train.images.size(); ++i) {
    double v = train.images[i];
    size_t ch = static_cast<size_t>(i % c);
    sum[ch] += v;
    sumsq[ch] += v * v;
    out.stats.mean_image[i % per] += v;
  }
  const double count = static_cast<double>(n) * (static_cast<double>(per) / c);
  for (int64_t ch = 0; ch < c; ++ch) {
    double mean = sum[static_cast<size_t>(ch)] / count;
    double var = sumsq[static_cast<size_t>(ch)] / count - mean * mean;
    out.stats.channel_mean[static_cast<size_t>(ch)] = mean;
    out.stats.channel_std[static_cast<size_t>(ch)] = std::sqrt(std::max(var, 0.0));
  }
  for (int64_t i = 0; i < per; ++i) out.stats.mean_image[i] /= static_cast<double>(n);

  out.params.mu.resize(static_cast<size_t>(c));
  double std_avg = 0.0;
  for (int64_t ch = 0; ch < c; ++ch) {
    out.params.mu[static_cast<size_t>(ch)] = static_cast<int>(std::clamp<int64_t>(
        round_half_up(out.stats.channel_mean[static_cast<size_t>(ch)]), 0, 255));
    std_avg += out.stats.channel_std[static_cast<size_t>(ch)];
  }
  std_avg /= static_cast<double>(c);
  if (std_avg < 1.0) {
    out.params.sigma_shift = 0; // sigma < 1 would amplify pixel deltas beyond int8
    out.sigma_floored = true;
  } else {
    out.params.sigma_shift = static_cast<int>(round_half_up(std::log2(std_avg)));
  }
  return out;
}

Tensor<double> per_image_standardization(const Tensor<double>& image) {
  const int64_t n = image.size();
  if (n == 0) throw InvalidInputError("per_image_standardization: empty image");
  double mean = 0.0;
  for (double v : image.data) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : image.data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  double denom = std::max(std::sqrt(var), 1.0 / std::sqrt(static_cast<double>(n)));
  Tensor<double> out(image.shape);
  for (int64_t i = 0; i < n; ++i) out[i] = (image[i] - mean) / denom;
  return out;
}

Tensor<double> mean_image_subtract(const Tensor<double>& image, const PreprocStats& stats) {
  if (image.shape != stats.mean_image.shape)
    throw InvalidInputError("mean_image_subtract: shape mismatch, image " + shape_str(image.shape) +
                            " vs mean " + shape_str(stats.mean_image.shape));
  Tensor<double> out(image.shape);
  for (int64_t i = 0; i < image.size(); ++i) out[i] = image[i] - stats.mean_image[i];
  return out;
}

size_t preproc_param_bytes(PreprocKind kind, int64_t height, int64_t width, int64_t channels) {
  switch (kind) {
    case PreprocKind::BatchNormLike:
      // per-channel integer mean + per-channel shift word, CMSIS header style
      return static_cast<size_t>(channels) * sizeof(int32_t) * 2;
    case PreprocKind::MeanImage:
      return static_cast<size_t>(height * width * channels) * sizeof(float);
    case PreprocKind::PerImageStd:
    case PreprocKind::None:
      return 0;
  }
  return 0;
}

ImageDataset synth_dataset(const SynthSpec& spec, uint64_t seed) {
  ImageDataset ds;
  ds.n_classes = spec.classes;
  ds.images = Tensor<uint8_t>(Shape{spec.n, spec.height, spec.width, spec.channels});
  ds.labels.resize(static_cast<size_t>(spec.n));
  if (spec.n == 0) return ds;

  struct Blob {
    double cy, cx, r;
    std::vector<double> amp;
  };
  Rng class_rng(spec.class_seed);
  std::vector<std::vector<Blob>> protos(static_cast<size_t>(spec.classes));
  for (int k = 0; k < spec.classes; ++k) {
    for (int b = 0; b < spec.blobs_per_class; ++b) {
      Blob bl;
      bl.cy = class_rng.next_double() * static_cast<double>(spec.height);
      bl.cx = class_rng.next_double() * static_cast<double>(spec.width);
      bl.r = 3.0 + class_rng.next_double() * 5.0;
      bl.amp.resize(static_cast<size_t>(spec.channels));
      for (int64_t c = 0; c < spec.channels; ++c)
        bl.amp[static_cast<size_t>(c)] = 2.0 * class_rng.next_double() - 1.0;
      protos[static_cast<size_t>(k)].push_back(bl);
    }
  }

  Rng rng(seed);
  const int64_t per = spec.height * spec.width * spec.channels;
  for (int64_t i = 0; i < spec.n; ++i) {
    int label = static_cast<int>(i % spec.classes);
    ds.labels[static_cast<size_t>(i)] = label;
    double dy = spec.jitter ? static_cast<double>(rng.next_int(-spec.jitter, spec.jitter)) : 0.0;
    double dx = spec.jitter ? static_cast<double>(rng.next_int(-spec.jitter, spec.jitter)) : 0.0;
    uint8_t* img = ds.images.data.data() + i * per;
    for (int64_t y = 0; y < spec.height; ++y)
      for (int64_t x = 0; x < spec.width; ++x)
        for (int64_t c = 0; c < spec.channels; ++c) {
          double v = 0.0;
          for (const Blob& bl : protos[static_cast<size_t>(label)]) {
            double ddy = static_cast<double>(y) - (bl.cy + dy);
            double ddx = static_cast<double>(x) - (bl.cx + dx);
            v += bl.amp[static_cast<size_t>(c)] * std::exp(-(ddy * ddy + ddx * ddx) / (2.0 * bl.r * bl.r));
          }
          double px = 128.0 + spec.sep * 64.0 * v + spec.noise * 64.0 * rng.next_normal();
          img[(y * spec.width + x) * spec.channels + c] =
              static_cast<uint8_t>(std::clamp(px, 0.0, 255.0));
        }
  }
  return ds;
}

} // namespace kanji
