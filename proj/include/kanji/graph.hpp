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
// Reverse-mode autodiff over a small fixed operator set. The eval-mode
// forward of a quantized graph is bit-exact to the int8 engine: values are
// kept in double precision, where every intermediate of a gated plan is an
// exact dyadic rational.
//

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "kanji/quant.hpp"
#include "kanji/tensor.hpp"

namespace kanji {

enum class TrainMode { Fp32, QatTrain, QatEval };

enum class OpKind {
  Constant,
  Parameter,
  Preprocess,
  Conv2d,
  FullyConnected,
  Relu,
  MaxPool,
  FakeQuant,
  Add,
  SoftmaxXent,
};

const char* op_kind_name(OpKind k);

/// How a fake-quant node decides its format in qat-train mode.
enum class RangeSource {
  ParamMaxAbs,   // weights/bias: current tensor max-abs, no EMA
  ActivationEma, // activations: EMA tracker
  Fixed,         // format pinned at build time (explicit manifest format)
};

enum class PreprocMode { BatchNormLike, MeanImage, PerImageStd, Identity };

struct ConvNodeAttrs {
  int in_channels = 0, out_channels = 0;
  int kernel_h = 0, kernel_w = 0;
  int stride = 1, padding = 0;
};

struct PoolNodeAttrs {
  int window = 0, stride = 0;
};

struct PreprocNodeAttrs {
  PreprocMode mode = PreprocMode::Identity;
  std::vector<int> mu;  // BatchNormLike
  int sigma_shift = 0;  // BatchNormLike
  Tensor<double> mean_image; // MeanImage
};

struct FakeQuantAttrs {
  RangeSource source = RangeSource::ActivationEma;
  RangeTracker tracker;
  QFormat format{8, 7};
  // Bias and activation formats are clamped so the derived shifts stay
  // non-negative: frac <= frac_in + frac_wt of the surrounding op.
  bool clamp_to_accumulator = false;
  int conv_input_node = -1; // producer of the op input (bias fq only)
  int weight_fq_node = -1;  // the sibling weight fake-quant (bias fq only)
  std::string plan_tensor;  // name of the plan tensor this node feeds
};

struct Node {
  OpKind kind = OpKind::Constant;
  std::string name;
  std::vector<int> inputs;
  bool batched = true; // false for parameters and non-batched constants
  bool requires_grad = false;

  Tensor<double> value;
  Tensor<double> grad;

  // set in qat modes; bits == 0 means "no fixed-point format"
  QFormat out_format{0, 0};

  ConvNodeAttrs conv;
  PoolNodeAttrs pool;
  PreprocNodeAttrs preproc;
  FakeQuantAttrs fq;

  // scratch for backward
  std::vector<int64_t> argmax; // maxpool winners (flat input indices)
  Tensor<double> aux;          // softmax probabilities
};

/// Acyclic by construction: a node may only reference already-added nodes,
/// so the node vector is a topological order.
class TrainableGraph {
public:
  std::vector<Node> nodes;
  std::vector<int> params; // Parameter node ids, in creation order
  int input_node = -1;
  int label_node = -1;
  int output_node = -1;
  int loss_node = -1;
  bool frozen = false;

  int add_constant(const std::string& name, Shape sample_shape, bool batched = true);
  int add_parameter(const std::string& name, Tensor<double> init);
  int add_preprocess(int x, PreprocNodeAttrs attrs, const std::string& name = "preprocess");
  int add_conv2d(int x, int w, int b, ConvNodeAttrs attrs, const std::string& name);
  int add_fully_connected(int x, int w, int b, const std::string& name);
  int add_relu(int x, const std::string& name = "relu");
  int add_maxpool(int x, int window, int stride, const std::string& name = "maxpool");
  int add_fake_quant(int x, FakeQuantAttrs attrs, const std::string& name);
  int add_add(int a, int b, const std::string& name = "add");
  int add_softmax_xent(int logits, int labels, const std::string& name = "loss");

  Node& node(int id) { return nodes.at(static_cast<size_t>(id)); }
  const Node& node(int id) const { return nodes.at(static_cast<size_t>(id)); }
  int find(const std::string& name) const; // -1 when absent

  /// Binds the input constant and evaluates every node. Returns the output
  /// node's value. Labels must have been bound for graphs with a loss node
  /// to evaluate it (otherwise the loss node is skipped).
  const Tensor<double>& forward(const Tensor<double>& input, TrainMode mode);

  /// forward() plus the scalar loss.
  double forward_loss(const Tensor<double>& input, const std::vector<int32_t>& labels,
                      TrainMode mode);

  /// Reverse-mode pass from the loss node. Requires a prior forward in a
  /// training-capable mode.
  void backward();

  /// Gradients keyed by parameter name.
  std::map<std::string, Tensor<double>> gradients() const;

  void set_labels(const std::vector<int32_t>& labels);

  /// Locks every tracker and format; qat-eval requires a frozen graph.
  void freeze_ranges();
  void unfreeze_ranges();

  /// Evaluates already-bound constants without touching input/labels
  /// (building block for tests and custom drivers).
  void run(TrainMode mode);

  void zero_grad();

private:
  int add_node(Node n);
  void eval_node(int id, TrainMode mode);
  void backprop_node(int id);
  void resolve_fq_format(Node& n, const Tensor<double>& x, TrainMode mode);

  bool forward_done_ = false;
  TrainMode last_mode_ = TrainMode::Fp32;
};

} // namespace kanji
