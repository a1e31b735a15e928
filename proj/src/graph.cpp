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

#include "kanji/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace kanji {

const char* op_kind_name(OpKind k) {
  switch (k) {
    case OpKind::Constant: return "constant";
    case OpKind::Parameter: return "parameter";
    case OpKind::Preprocess: return "preprocess";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::FullyConnected: return "fully_connected";
    case OpKind::Relu: return "relu";
    case OpKind::MaxPool: return "maxpool";
    case OpKind::FakeQuant: return "fake_quant";
    case OpKind::Add: return "add";
    case OpKind::SoftmaxXent: return "softmax_xent";
  }
  return "?";
}

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidInputError(msg);
}

void check_no_nan(const Node& n) {
  for (double v : n.value.data)
    if (std::isnan(v)) throw NumericError("NaN in node '" + n.name + "'");
}

struct ConvDims {
  int64_t h, w, c, oh, ow, positions, k;
};

ConvDims conv_dims(const Shape& sample, const ConvNodeAttrs& a) {
  ConvDims d;
  d.h = sample[0];
  d.w = sample[1];
  d.c = sample[2];
  d.oh = (d.h + 2 * a.padding - a.kernel_h) / a.stride + 1;
  d.ow = (d.w + 2 * a.padding - a.kernel_w) / a.stride + 1;
  d.positions = d.oh * d.ow;
  d.k = static_cast<int64_t>(a.kernel_h) * a.kernel_w * d.c;
  return d;
}

// col[position][ (ky*kw + kx)*c + ci ]; zero padding contributes 0.0,
// which is exact integer 0 under symmetric formats.
void im2col(const double* x, const ConvDims& d, const ConvNodeAttrs& a, double* col) {
  std::fill(col, col + d.positions * d.k, 0.0);
  for (int64_t oy = 0; oy < d.oh; ++oy)
    for (int64_t ox = 0; ox < d.ow; ++ox) {
      double* crow = col + (oy * d.ow + ox) * d.k;
      for (int64_t ky = 0; ky < a.kernel_h; ++ky) {
        int64_t iy = oy * a.stride - a.padding + ky;
        if (iy < 0 || iy >= d.h) continue;
        for (int64_t kx = 0; kx < a.kernel_w; ++kx) {
          int64_t ix = ox * a.stride - a.padding + kx;
          if (ix < 0 || ix >= d.w) continue;
          const double* src = x + (iy * d.w + ix) * d.c;
          double* dst = crow + (ky * a.kernel_w + kx) * d.c;
          for (int64_t ci = 0; ci < d.c; ++ci) dst[ci] = src[ci];
        }
      }
    }
}

void col2im_accumulate(const double* col, const ConvDims& d, const ConvNodeAttrs& a, double* gx) {
  for (int64_t oy = 0; oy < d.oh; ++oy)
    for (int64_t ox = 0; ox < d.ow; ++ox) {
      const double* crow = col + (oy * d.ow + ox) * d.k;
      for (int64_t ky = 0; ky < a.kernel_h; ++ky) {
        int64_t iy = oy * a.stride - a.padding + ky;
        if (iy < 0 || iy >= d.h) continue;
        for (int64_t kx = 0; kx < a.kernel_w; ++kx) {
          int64_t ix = ox * a.stride - a.padding + kx;
          if (ix < 0 || ix >= d.w) continue;
          double* dst = gx + (iy * d.w + ix) * d.c;
          const double* src = crow + (ky * a.kernel_w + kx) * d.c;
          for (int64_t ci = 0; ci < d.c; ++ci) dst[ci] += src[ci];
        }
      }
    }
}

// OIHW -> O,(KH,KW,I) so the contraction axis is contiguous on both sides.
std::vector<double> pack_weights(const Tensor<double>& w, const ConvNodeAttrs& a) {
  std::vector<double> p(static_cast<size_t>(w.size()));
  const int64_t kh = a.kernel_h, kw = a.kernel_w, ic = a.in_channels, oc = a.out_channels;
  for (int64_t o = 0; o < oc; ++o)
    for (int64_t ci = 0; ci < ic; ++ci)
      for (int64_t ky = 0; ky < kh; ++ky)
        for (int64_t kx = 0; kx < kw; ++kx)
          p[static_cast<size_t>(((o * kh + ky) * kw + kx) * ic + ci)] =
              w.data[static_cast<size_t>(((o * ic + ci) * kh + ky) * kw + kx)];
  return p;
}

void unpack_weight_grads(const std::vector<double>& gp, const ConvNodeAttrs& a, Tensor<double>& gw) {
  const int64_t kh = a.kernel_h, kw = a.kernel_w, ic = a.in_channels, oc = a.out_channels;
  for (int64_t o = 0; o < oc; ++o)
    for (int64_t ci = 0; ci < ic; ++ci)
      for (int64_t ky = 0; ky < kh; ++ky)
        for (int64_t kx = 0; kx < kw; ++kx)
          gw.data[static_cast<size_t>(((o * ic + ci) * kh + ky) * kw + kx)] +=
              gp[static_cast<size_t>(((o * kh + ky) * kw + kx) * ic + ci)];
}

inline double dot(const double* a, const double* b, int64_t n) {
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline void axpy(double alpha, const double* x, double* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

} // namespace

int TrainableGraph::add_node(Node n) {
  for (int in : n.inputs)
    if (in < 0 || in >= static_cast<int>(nodes.size()))
      throw InvalidInputError("node '" + n.name + "' references unknown input " + std::to_string(in));
  for (int in : n.inputs)
    if (nodes[static_cast<size_t>(in)].requires_grad) n.requires_grad = true;
  nodes.push_back(std::move(n));
  return static_cast<int>(nodes.size()) - 1;
}

int TrainableGraph::add_constant(const std::string& name, Shape sample_shape, bool batched) {
  Node n;
  n.kind = OpKind::Constant;
  n.name = name;
  n.batched = batched;
  n.value = Tensor<double>();
  n.value.shape = std::move(sample_shape); // bound later; shape records the sample dims
  return add_node(std::move(n));
}

int TrainableGraph::add_parameter(const std::string& name, Tensor<double> init) {
  Node n;
  n.kind = OpKind::Parameter;
  n.name = name;
  n.batched = false;
  n.requires_grad = true;
  n.value = std::move(init);
  int id = add_node(std::move(n));
  params.push_back(id);
  return id;
}

int TrainableGraph::add_preprocess(int x, PreprocNodeAttrs attrs, const std::string& name) {
  Node n;
  n.kind = OpKind::Preprocess;
  n.name = name;
  n.inputs = {x};
  n.preproc = std::move(attrs);
  return add_node(std::move(n));
}

int TrainableGraph::add_conv2d(int x, int w, int b, ConvNodeAttrs attrs, const std::string& name) {
  Node n;
  n.kind = OpKind::Conv2d;
  n.name = name;
  n.inputs = {x, w, b};
  n.conv = attrs;
  return add_node(std::move(n));
}

int TrainableGraph::add_fully_connected(int x, int w, int b, const std::string& name) {
  Node n;
  n.kind = OpKind::FullyConnected;
  n.name = name;
  n.inputs = {x, w, b};
  return add_node(std::move(n));
}

int TrainableGraph::add_relu(int x, const std::string& name) {
  Node n;
  n.kind = OpKind::Relu;
  n.name = name;
  n.inputs = {x};
  return add_node(std::move(n));
}

int TrainableGraph::add_maxpool(int x, int window, int stride, const std::string& name) {
  Node n;
  n.kind = OpKind::MaxPool;
  n.name = name;
  n.inputs = {x};
  n.pool = {window, stride};
  return add_node(std::move(n));
}

int TrainableGraph::add_fake_quant(int x, FakeQuantAttrs attrs, const std::string& name) {
  Node n;
  n.kind = OpKind::FakeQuant;
  n.name = name;
  n.inputs = {x};
  n.fq = std::move(attrs);
  return add_node(std::move(n));
}

int TrainableGraph::add_add(int a, int b, const std::string& name) {
  Node n;
  n.kind = OpKind::Add;
  n.name = name;
  n.inputs = {a, b};
  return add_node(std::move(n));
}

int TrainableGraph::add_softmax_xent(int logits, int labels, const std::string& name) {
  Node n;
  n.kind = OpKind::SoftmaxXent;
  n.name = name;
  n.inputs = {logits, labels};
  return add_node(std::move(n));
}

int TrainableGraph::find(const std::string& name) const {
  for (size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].name == name) return static_cast<int>(i);
  return -1;
}

void TrainableGraph::resolve_fq_format(Node& n, const Tensor<double>& x, TrainMode mode) {
  if (mode != TrainMode::QatTrain) return;
  switch (n.fq.source) {
    case RangeSource::Fixed:
      return;
    case RangeSource::ParamMaxAbs: {
      QFormat f = choose_qformat(max_abs(x), 8);
      if (n.fq.clamp_to_accumulator) {
        const Node& xin = nodes[static_cast<size_t>(n.fq.conv_input_node)];
        const Node& wfq = nodes[static_cast<size_t>(n.fq.weight_fq_node)];
        int bound = xin.out_format.frac_bits + wfq.fq.format.frac_bits;
        if (bound < kMinFracBits)
          throw FormatError("accumulator format below representable range at '" + n.name + "'");
        f.frac_bits = std::min(f.frac_bits, bound);
      }
      n.fq.format = f;
      return;
    }
    case RangeSource::ActivationEma: {
      n.fq.tracker = update_range(n.fq.tracker, x);
      QFormat f = choose_qformat(n.fq.tracker.max_abs_ema, 8);
      if (n.fq.clamp_to_accumulator) {
        const Node& acc = nodes[static_cast<size_t>(n.inputs[0])];
        int bound = acc.out_format.frac_bits;
        if (bound < kMinFracBits)
          throw FormatError("accumulator format below representable range at '" + n.name + "'");
        f.frac_bits = std::min(f.frac_bits, bound);
      }
      n.fq.format = f;
      return;
    }
  }
}

void TrainableGraph::eval_node(int id, TrainMode mode) {
  Node& n = nodes[static_cast<size_t>(id)];
  switch (n.kind) {
    case OpKind::Constant:
    case OpKind::Parameter:
      return;

    case OpKind::Preprocess: {
      const Node& xin = nodes[static_cast<size_t>(n.inputs[0])];
      const Tensor<double>& x = xin.value;
      n.value = Tensor<double>(x.shape);
      switch (n.preproc.mode) {
        case PreprocMode::BatchNormLike: {
          const int64_t c = x.shape.back();
          require(static_cast<int64_t>(n.preproc.mu.size()) == c,
                  "preprocess: mu length != channel count");
          const double scale = std::ldexp(1.0, -n.preproc.sigma_shift);
          for (int64_t i = 0; i < x.size(); ++i) {
            double d = x[i] - n.preproc.mu[static_cast<size_t>(i % c)];
            d = std::clamp(d, -128.0, 127.0); // sat8, same as the engine
            n.value[i] = d * scale;
          }
          n.out_format = QFormat{8, n.preproc.sigma_shift};
          break;
        }
        case PreprocMode::MeanImage: {
          const int64_t per = n.preproc.mean_image.size();
          require(per > 0 && x.size() % per == 0, "preprocess: mean image shape mismatch");
          for (int64_t i = 0; i < x.size(); ++i)
            n.value[i] = x[i] - n.preproc.mean_image[i % per];
          n.out_format = QFormat{0, 0};
          break;
        }
        case PreprocMode::PerImageStd: {
          // per sample: (x - mean) / max(std, 1/sqrt(n)), population std
          int64_t per = numel(Shape(x.shape.begin() + 1, x.shape.end()));
          int64_t count = x.shape.empty() ? 0 : x.shape[0];
          for (int64_t s = 0; s < count; ++s) {
            const double* src = x.data.data() + s * per;
            double* dst = n.value.data.data() + s * per;
            double mean = 0.0;
            for (int64_t i = 0; i < per; ++i) mean += src[i];
            mean /= static_cast<double>(per);
            double var = 0.0;
            for (int64_t i = 0; i < per; ++i) var += (src[i] - mean) * (src[i] - mean);
            var /= static_cast<double>(per);
            double denom = std::max(std::sqrt(var), 1.0 / std::sqrt(static_cast<double>(per)));
            for (int64_t i = 0; i < per; ++i) dst[i] = (src[i] - mean) / denom;
          }
          n.out_format = QFormat{0, 0};
          break;
        }
        case PreprocMode::Identity:
          n.value = x;
          n.out_format = xin.out_format;
          break;
      }
      break;
    }

    case OpKind::Conv2d: {
      const Node& xin = nodes[static_cast<size_t>(n.inputs[0])];
      const Node& win = nodes[static_cast<size_t>(n.inputs[1])];
      const Node& bin = nodes[static_cast<size_t>(n.inputs[2])];
      const Tensor<double>& x = xin.value;
      require(x.rank() == 4, "conv2d: input must be [N,H,W,C]");
      const ConvNodeAttrs& a = n.conv;
      require(x.shape[3] == a.in_channels, "conv2d: channel mismatch at '" + n.name + "'");
      require(win.value.shape == Shape({a.out_channels, a.in_channels, a.kernel_h, a.kernel_w}),
              "conv2d: weight shape mismatch at '" + n.name + "'");
      require(bin.value.shape == Shape({a.out_channels}), "conv2d: bias shape mismatch");

      ConvDims d = conv_dims({x.shape[1], x.shape[2], x.shape[3]}, a);
      const int64_t batch = x.shape[0];
      n.value = Tensor<double>(Shape{batch, d.oh, d.ow, a.out_channels});

      std::vector<double> wpack = pack_weights(win.value, a);
      std::vector<double> col(static_cast<size_t>(d.positions * d.k));
      const double* bias = bin.value.data.data();

      for (int64_t s = 0; s < batch; ++s) {
        im2col(x.data.data() + s * d.h * d.w * d.c, d, a, col.data());
        double* out = n.value.data.data() + s * d.positions * a.out_channels;
        for (int64_t p = 0; p < d.positions; ++p) {
          const double* crow = col.data() + p * d.k;
          double* orow = out + p * a.out_channels;
          for (int64_t o = 0; o < a.out_channels; ++o)
            orow[o] = dot(crow, wpack.data() + o * d.k, d.k) + bias[o];
        }
      }

      if (mode != TrainMode::Fp32 && xin.out_format.bits == 8 && win.out_format.bits == 8)
        n.out_format = QFormat{32, xin.out_format.frac_bits + win.out_format.frac_bits};
      else
        n.out_format = QFormat{0, 0};
      break;
    }

    case OpKind::FullyConnected: {
      const Node& xin = nodes[static_cast<size_t>(n.inputs[0])];
      const Node& win = nodes[static_cast<size_t>(n.inputs[1])];
      const Node& bin = nodes[static_cast<size_t>(n.inputs[2])];
      const Tensor<double>& x = xin.value;
      require(win.value.rank() == 2, "fully_connected: weights must be [out,in]");
      const int64_t out_f = win.value.shape[0];
      const int64_t in_f = win.value.shape[1];
      const int64_t batch = x.shape.empty() ? 0 : x.shape[0];
      require(x.size() == batch * in_f, "fully_connected: input length mismatch at '" + n.name + "'");
      require(bin.value.shape == Shape({out_f}), "fully_connected: bias shape mismatch");

      n.value = Tensor<double>(Shape{batch, out_f});
      for (int64_t s = 0; s < batch; ++s) {
        const double* xrow = x.data.data() + s * in_f;
        double* orow = n.value.data.data() + s * out_f;
        for (int64_t o = 0; o < out_f; ++o)
          orow[o] = dot(xrow, win.value.data.data() + o * in_f, in_f) + bin.value[o];
      }

      if (mode != TrainMode::Fp32 && xin.out_format.bits == 8 && win.out_format.bits == 8)
        n.out_format = QFormat{32, xin.out_format.frac_bits + win.out_format.frac_bits};
      else
        n.out_format = QFormat{0, 0};
      break;
    }

    case OpKind::Relu: {
      const Node& xin = nodes[static_cast<size_t>(n.inputs[0])];
      n.value = Tensor<double>(xin.value.shape);
      for (int64_t i = 0; i < xin.value.size(); ++i) n.value[i] = std::max(xin.value[i], 0.0);
      n.out_format = xin.out_format;
      break;
    }

    case OpKind::MaxPool: {
      const Node& xin = nodes[static_cast<size_t>(n.inputs[0])];
      const Tensor<double>& x = xin.value;
      require(x.rank() == 4, "maxpool: input must be [N,H,W,C]");
      const int64_t batch = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3];
      const int win = n.pool.window, st = n.pool.stride;
      require(win >= 1 && st >= 1, "maxpool: window/stride must be positive");
      require(win <= h && win <= w, "maxpool: window larger than input");
      const int64_t oh = (h - win) / st + 1, ow = (w - win) / st + 1;

      n.value = Tensor<double>(Shape{batch, oh, ow, c});
      n.argmax.assign(static_cast<size_t>(n.value.size()), 0);
      for (int64_t s = 0; s < batch; ++s)
        for (int64_t oy = 0; oy < oh; ++oy)
          for (int64_t ox = 0; ox < ow; ++ox)
            for (int64_t ci = 0; ci < c; ++ci) {
              double best = -std::numeric_limits<double>::infinity();
              int64_t best_idx = -1;
              for (int ky = 0; ky < win; ++ky)
                for (int kx = 0; kx < win; ++kx) {
                  int64_t iy = oy * st + ky, ix = ox * st + kx;
                  int64_t idx = ((s * h + iy) * w + ix) * c + ci;
                  if (x[idx] > best) {
                    best = x[idx];
                    best_idx = idx;
                  }
                }
              int64_t oidx = ((s * oh + oy) * ow + ox) * c + ci;
              n.value[oidx] = best;
              n.argmax[static_cast<size_t>(oidx)] = best_idx;
            }
      n.out_format = xin.out_format;
      break;
    }

    case OpKind::FakeQuant: {
      Node& xin = nodes[static_cast<size_t>(n.inputs[0])];
      if (mode == TrainMode::Fp32) {
        n.value = xin.value;
        n.out_format = QFormat{0, 0};
      } else {
        resolve_fq_format(n, xin.value, mode);
        n.value = fake_quant(xin.value, n.fq.format);
        n.out_format = n.fq.format;
      }
      break;
    }

    case OpKind::Add: {
      const Node& ain = nodes[static_cast<size_t>(n.inputs[0])];
      const Node& bin = nodes[static_cast<size_t>(n.inputs[1])];
      require(ain.value.shape == bin.value.shape, "add: shape mismatch");
      n.value = Tensor<double>(ain.value.shape);
      for (int64_t i = 0; i < n.value.size(); ++i) n.value[i] = ain.value[i] + bin.value[i];
      n.out_format = (ain.out_format == bin.out_format) ? ain.out_format : QFormat{0, 0};
      break;
    }

    case OpKind::SoftmaxXent: {
      const Node& lin = nodes[static_cast<size_t>(n.inputs[0])];
      const Node& yin = nodes[static_cast<size_t>(n.inputs[1])];
      const Tensor<double>& logits = lin.value;
      require(logits.rank() == 2, "softmax_xent: logits must be [N,classes]");
      const int64_t batch = logits.shape[0], classes = logits.shape[1];
      require(yin.value.size() == batch, "softmax_xent: label count != batch");

      n.aux = Tensor<double>(logits.shape); // probabilities
      double total = 0.0;
      for (int64_t s = 0; s < batch; ++s) {
        const double* row = logits.data.data() + s * classes;
        int32_t label = static_cast<int32_t>(yin.value[s]);
        require(label >= 0 && label < classes, "softmax_xent: label out of range");
        double m = row[0];
        for (int64_t c2 = 1; c2 < classes; ++c2) m = std::max(m, row[c2]);
        double z = 0.0;
        for (int64_t c2 = 0; c2 < classes; ++c2) z += std::exp(row[c2] - m);
        for (int64_t c2 = 0; c2 < classes; ++c2)
          n.aux[s * classes + c2] = std::exp(row[c2] - m) / z;
        total += -(row[label] - m) + std::log(z);
      }
      n.value = Tensor<double>(Shape{1});
      n.value[0] = total / static_cast<double>(batch);
      break;
    }
  }
  if (mode != TrainMode::QatEval) check_no_nan(n);
}

void TrainableGraph::run(TrainMode mode) {
  if (mode == TrainMode::QatEval && !frozen)
    throw StateError("qat-eval requires frozen range trackers (call freeze_ranges)");
  if (mode == TrainMode::QatTrain && frozen)
    throw StateError("qat-train on a frozen graph (call unfreeze_ranges)");

  bool labels_bound = label_node >= 0 && !nodes[static_cast<size_t>(label_node)].value.data.empty();
  for (size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].kind == OpKind::SoftmaxXent && !labels_bound) continue;
    eval_node(static_cast<int>(i), mode);
  }
  forward_done_ = true;
  last_mode_ = mode;
}

const Tensor<double>& TrainableGraph::forward(const Tensor<double>& input, TrainMode mode) {
  require(input_node >= 0, "graph has no input node");
  // labels are per-call state; an unlabeled forward skips the loss node
  if (label_node >= 0) nodes[static_cast<size_t>(label_node)].value = Tensor<double>();
  nodes[static_cast<size_t>(input_node)].value = input;
  run(mode);
  require(output_node >= 0, "graph has no output node");
  return nodes[static_cast<size_t>(output_node)].value;
}

double TrainableGraph::forward_loss(const Tensor<double>& input,
                                    const std::vector<int32_t>& labels, TrainMode mode) {
  require(input_node >= 0, "graph has no input node");
  require(loss_node >= 0, "graph has no loss node");
  nodes[static_cast<size_t>(input_node)].value = input;
  set_labels(labels);
  run(mode);
  return nodes[static_cast<size_t>(loss_node)].value[0];
}

void TrainableGraph::set_labels(const std::vector<int32_t>& labels) {
  require(label_node >= 0, "graph has no label node");
  Node& y = nodes[static_cast<size_t>(label_node)];
  y.value = Tensor<double>(Shape{static_cast<int64_t>(labels.size())});
  for (size_t i = 0; i < labels.size(); ++i) y.value[static_cast<int64_t>(i)] = labels[i];
}

void TrainableGraph::zero_grad() {
  for (Node& n : nodes) {
    if (n.requires_grad && !n.value.data.empty())
      n.grad = Tensor<double>(n.value.shape);
    else
      n.grad = Tensor<double>();
  }
}

void TrainableGraph::backprop_node(int id) {
  Node& n = nodes[static_cast<size_t>(id)];
  if (n.grad.data.empty()) return;

  auto grad_of = [&](int in) -> Tensor<double>* {
    Node& m = nodes[static_cast<size_t>(in)];
    if (!m.requires_grad) return nullptr;
    if (m.grad.data.empty()) m.grad = Tensor<double>(m.value.shape);
    return &m.grad;
  };

  switch (n.kind) {
    case OpKind::Constant:
    case OpKind::Parameter:
      return;

    case OpKind::Preprocess: {
      Tensor<double>* gx = grad_of(n.inputs[0]);
      if (!gx) return;
      const Node& xin = nodes[static_cast<size_t>(n.inputs[0])];
      switch (n.preproc.mode) {
        case PreprocMode::BatchNormLike: {
          const int64_t c = xin.value.shape.back();
          const double scale = std::ldexp(1.0, -n.preproc.sigma_shift);
          for (int64_t i = 0; i < n.grad.size(); ++i) {
            double d = xin.value[i] - n.preproc.mu[static_cast<size_t>(i % c)];
            (*gx)[i] += (d > -128.0 && d < 127.0) ? n.grad[i] * scale : 0.0;
          }
          break;
        }
        case PreprocMode::MeanImage:
        case PreprocMode::Identity:
          for (int64_t i = 0; i < n.grad.size(); ++i) (*gx)[i] += n.grad[i];
          break;
        case PreprocMode::PerImageStd:
          throw StateError("per_image_standardization has no backward path");
      }
      return;
    }

    case OpKind::Conv2d: {
      const Node& xin = nodes[static_cast<size_t>(n.inputs[0])];
      const Node& win = nodes[static_cast<size_t>(n.inputs[1])];
      const Tensor<double>& x = xin.value;
      const ConvNodeAttrs& a = n.conv;
      ConvDims d = conv_dims({x.shape[1], x.shape[2], x.shape[3]}, a);
      const int64_t batch = x.shape[0];

      Tensor<double>* gx = grad_of(n.inputs[0]);
      Tensor<double>* gw = grad_of(n.inputs[1]);
      Tensor<double>* gb = grad_of(n.inputs[2]);

      std::vector<double> wpack = pack_weights(win.value, a);
      std::vector<double> gwpack(wpack.size(), 0.0);
      std::vector<double> col(static_cast<size_t>(d.positions * d.k));
      std::vector<double> gcol(static_cast<size_t>(d.positions * d.k));

      for (int64_t s = 0; s < batch; ++s) {
        const double* g = n.grad.data.data() + s * d.positions * a.out_channels;
        im2col(x.data.data() + s * d.h * d.w * d.c, d, a, col.data());
        if (gx) std::fill(gcol.begin(), gcol.end(), 0.0);
        for (int64_t p = 0; p < d.positions; ++p) {
          const double* grow = g + p * a.out_channels;
          const double* crow = col.data() + p * d.k;
          double* gcrow = gcol.data() + p * d.k;
          for (int64_t o = 0; o < a.out_channels; ++o) {
            double go = grow[o];
            if (go == 0.0) continue;
            if (gx) axpy(go, wpack.data() + o * d.k, gcrow, d.k);
            if (gw) axpy(go, crow, gwpack.data() + o * d.k, d.k);
            if (gb) (*gb)[o] += go;
          }
        }
        if (gx) col2im_accumulate(gcol.data(), d, a, gx->data.data() + s * d.h * d.w * d.c);
      }
      if (gw) unpack_weight_grads(gwpack, a, *gw);
      return;
    }

    case OpKind::FullyConnected: {
      const Node& xin = nodes[static_cast<size_t>(n.inputs[0])];
      const Node& win = nodes[static_cast<size_t>(n.inputs[1])];
      const int64_t out_f = win.value.shape[0];
      const int64_t in_f = win.value.shape[1];
      const int64_t batch = xin.value.shape[0];

      Tensor<double>* gx = grad_of(n.inputs[0]);
      Tensor<double>* gw = grad_of(n.inputs[1]);
      Tensor<double>* gb = grad_of(n.inputs[2]);

      for (int64_t s = 0; s < batch; ++s) {
        const double* grow = n.grad.data.data() + s * out_f;
        const double* xrow = xin.value.data.data() + s * in_f;
        for (int64_t o = 0; o < out_f; ++o) {
          double go = grow[o];
          if (go == 0.0) continue;
          if (gx) axpy(go, win.value.data.data() + o * in_f, gx->data.data() + s * in_f, in_f);
          if (gw) axpy(go, xrow, gw->data.data() + o * in_f, in_f);
          if (gb) (*gb)[o] += go;
        }
      }
      return;
    }

    case OpKind::Relu: {
      Tensor<double>* gx = grad_of(n.inputs[0]);
      if (!gx) return;
      const Node& xin = nodes[static_cast<size_t>(n.inputs[0])];
      for (int64_t i = 0; i < n.grad.size(); ++i)
        if (xin.value[i] > 0.0) (*gx)[i] += n.grad[i];
      return;
    }

    case OpKind::MaxPool: {
      Tensor<double>* gx = grad_of(n.inputs[0]);
      if (!gx) return;
      for (int64_t i = 0; i < n.grad.size(); ++i)
        (*gx)[n.argmax[static_cast<size_t>(i)]] += n.grad[i];
      return;
    }

    case OpKind::FakeQuant: {
      Tensor<double>* gx = grad_of(n.inputs[0]);
      if (!gx) return;
      const Node& xin = nodes[static_cast<size_t>(n.inputs[0])];
      if (n.out_format.bits == 0) {
        // fp32 pass: identity
        for (int64_t i = 0; i < n.grad.size(); ++i) (*gx)[i] += n.grad[i];
      } else {
        const double lo = n.fq.format.min_fp();
        const double hi = n.fq.format.max_fp();
        for (int64_t i = 0; i < n.grad.size(); ++i)
          if (xin.value[i] >= lo && xin.value[i] <= hi) (*gx)[i] += n.grad[i];
      }
      return;
    }

    case OpKind::Add: {
      Tensor<double>* ga = grad_of(n.inputs[0]);
      Tensor<double>* gb = grad_of(n.inputs[1]);
      for (int64_t i = 0; i < n.grad.size(); ++i) {
        if (ga) (*ga)[i] += n.grad[i];
        if (gb) (*gb)[i] += n.grad[i];
      }
      return;
    }

    case OpKind::SoftmaxXent: {
      Tensor<double>* gl = grad_of(n.inputs[0]);
      if (!gl) return;
      const Node& yin = nodes[static_cast<size_t>(n.inputs[1])];
      const int64_t batch = n.aux.shape[0], classes = n.aux.shape[1];
      const double g = n.grad[0] / static_cast<double>(batch);
      for (int64_t s = 0; s < batch; ++s) {
        int32_t label = static_cast<int32_t>(yin.value[s]);
        for (int64_t c2 = 0; c2 < classes; ++c2) {
          double p = n.aux[s * classes + c2];
          (*gl)[s * classes + c2] += g * (p - (c2 == label ? 1.0 : 0.0));
        }
      }
      return;
    }
  }
}

void TrainableGraph::backward() {
  if (!forward_done_) throw StateError("backward called before forward");
  if (last_mode_ == TrainMode::QatEval)
    throw StateError("backward requires a forward in a training mode (fp32 or qat-train)");
  require(loss_node >= 0, "graph has no loss node");

  zero_grad();
  Node& loss = nodes[static_cast<size_t>(loss_node)];
  loss.grad = Tensor<double>(loss.value.shape);
  loss.grad[0] = 1.0;
  for (int id = static_cast<int>(nodes.size()) - 1; id >= 0; --id) {
    if (!nodes[static_cast<size_t>(id)].requires_grad) continue;
    backprop_node(id);
  }
}

std::map<std::string, Tensor<double>> TrainableGraph::gradients() const {
  std::map<std::string, Tensor<double>> out;
  for (int p : params) {
    const Node& n = nodes[static_cast<size_t>(p)];
    out[n.name] = n.grad.data.empty() ? Tensor<double>(n.value.shape) : n.grad;
  }
  return out;
}

void TrainableGraph::freeze_ranges() {
  // Format re-resolution sweep. Deriving every format from the current
  // parameter values and tracker states (rather than locking the formats
  // of the last forward) keeps the frozen graph consistent with a plan
  // rebuilt from collected ranges: both start from the same numbers and
  // apply the same rules.
  for (size_t i = 0; i < nodes.size(); ++i) {
    Node& n = nodes[i];
    switch (n.kind) {
      case OpKind::Constant:
      case OpKind::Parameter:
      case OpKind::SoftmaxXent:
        break;
      case OpKind::Preprocess:
        if (n.preproc.mode == PreprocMode::BatchNormLike)
          n.out_format = QFormat{8, n.preproc.sigma_shift};
        else if (n.preproc.mode == PreprocMode::Identity)
          n.out_format = nodes[static_cast<size_t>(n.inputs[0])].out_format;
        else
          n.out_format = QFormat{0, 0};
        break;
      case OpKind::FakeQuant: {
        switch (n.fq.source) {
          case RangeSource::Fixed:
            break;
          case RangeSource::ParamMaxAbs: {
            QFormat f = choose_qformat(max_abs(nodes[static_cast<size_t>(n.inputs[0])].value), 8);
            if (n.fq.clamp_to_accumulator) {
              int bound = nodes[static_cast<size_t>(n.fq.conv_input_node)].out_format.frac_bits +
                          nodes[static_cast<size_t>(n.fq.weight_fq_node)].fq.format.frac_bits;
              if (bound < kMinFracBits)
                throw FormatError("accumulator format below representable range at '" + n.name + "'");
              f.frac_bits = std::min(f.frac_bits, bound);
            }
            n.fq.format = f;
            break;
          }
          case RangeSource::ActivationEma: {
            QFormat f = choose_qformat(n.fq.tracker.max_abs_ema, 8);
            if (n.fq.clamp_to_accumulator) {
              int bound = nodes[static_cast<size_t>(n.inputs[0])].out_format.frac_bits;
              if (bound < kMinFracBits)
                throw FormatError("accumulator format below representable range at '" + n.name + "'");
              f.frac_bits = std::min(f.frac_bits, bound);
            }
            n.fq.format = f;
            break;
          }
        }
        n.out_format = n.fq.format;
        break;
      }
      case OpKind::Conv2d:
      case OpKind::FullyConnected: {
        const Node& xin = nodes[static_cast<size_t>(n.inputs[0])];
        const Node& win = nodes[static_cast<size_t>(n.inputs[1])];
        if (xin.out_format.bits == 8 && win.out_format.bits == 8)
          n.out_format = QFormat{32, xin.out_format.frac_bits + win.out_format.frac_bits};
        else
          n.out_format = QFormat{0, 0};
        break;
      }
      case OpKind::Relu:
      case OpKind::MaxPool:
        n.out_format = nodes[static_cast<size_t>(n.inputs[0])].out_format;
        break;
      case OpKind::Add: {
        const Node& a = nodes[static_cast<size_t>(n.inputs[0])];
        const Node& b = nodes[static_cast<size_t>(n.inputs[1])];
        n.out_format = (a.out_format == b.out_format) ? a.out_format : QFormat{0, 0};
        break;
      }
    }
  }
  frozen = true;
}

void TrainableGraph::unfreeze_ranges() {
  frozen = false;
}

} // namespace kanji
