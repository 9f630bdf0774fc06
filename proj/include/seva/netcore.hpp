// Copyright 2026 The SEVA Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Minimal dense-network kernel: explicit forward/backward over fully
// connected layers, softmax cross-entropy, weighted loss interpolation,
// plain SGD and a central-difference gradient checker.
//
// Batches are row-major matrices with one example (frame) per row. A layer
// computes act(X * W^T + 1 b^T) with W stored out x in.

#pragma once

#include "seva/common.hpp"

#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace seva {

enum class Activation : std::uint32_t { kLinear = 0, kRelu = 1, kSigmoid = 2 };

struct Layer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation activation = Activation::kLinear;

  std::size_t in_dim() const { return static_cast<std::size_t>(weight.cols()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(weight.rows()); }
};

struct LayerGrad {
  Matrix weight;
  Vector bias;
};

/// Ordered stack of dense layers with shape-identical gradient buffers.
class NetParams {
 public:
  NetParams() = default;
  /// Throws DimensionError if consecutive layers do not chain.
  explicit NetParams(std::vector<Layer> layers);

  /// Uniform Glorot init on [-sqrt(6/(in+out)), +sqrt(6/(in+out))], zero biases.
  /// `dims` has one more entry than `activations`.
  static NetParams glorot(std::span<const std::size_t> dims, std::span<const Activation> activations, Rng& rng);

  std::size_t num_layers() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }
  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t num_params() const;

  const Layer& layer(std::size_t k) const { return layers_.at(k); }
  Layer& layer(std::size_t k) { return layers_.at(k); }
  const LayerGrad& grad(std::size_t k) const { return grads_.at(k); }
  LayerGrad& grad(std::size_t k) { return grads_.at(k); }
  const std::vector<Layer>& layers() const { return layers_; }

  void zero_grad();

  /// Visits every scalar parameter together with its gradient slot, in a
  /// fixed order (layer, weight row-major, then bias).
  void for_each_param(const std::function<void(double& param, double& grad)>& fn);

 private:
  std::vector<Layer> layers_;
  std::vector<LayerGrad> grads_;
};

/// Activations of a forward pass. outputs[0] is the input, outputs[k + 1]
/// the post-activation output of layer k.
struct ForwardCache {
  std::vector<Matrix> outputs;
  const Matrix& output() const { return outputs.back(); }
};

Matrix apply_activation(Activation act, Matrix z);

/// One layer forward. Throws DimensionError naming `layer_index`.
Matrix apply_layer(const Layer& layer, const Matrix& input, std::size_t layer_index = 0);

/// One layer backward given its input, output and dL/d(output). Accumulates
/// into `grad` when non-null and returns dL/d(input).
Matrix backprop_layer(const Layer& layer, const Matrix& input, const Matrix& output, const Matrix& grad_output,
                      LayerGrad* grad);

/// Forward over layers [first, last). last == npos means all remaining.
ForwardCache forward(const NetParams& params, const Matrix& input, std::size_t first = 0,
                     std::size_t last = static_cast<std::size_t>(-1));
Vector forward(const NetParams& params, const Vector& input);

/// Backward over the layers covered by `cache` (starting at `first`);
/// accumulates parameter gradients and returns dL/d(input).
Matrix backward(NetParams& params, const ForwardCache& cache, const Matrix& grad_output, std::size_t first = 0);

Vector softmax(const Vector& logits);
Matrix softmax_rows(const Matrix& logits);
Matrix log_softmax_rows(const Matrix& logits);

struct CeResult {
  double loss = 0.0;
  Vector grad;  // dL/dlogits
};

/// -sum target * log softmax(logits); gradient softmax(logits) - target.
CeResult softmax_ce(const Vector& logits, std::size_t target);
CeResult softmax_ce(const Vector& logits, const Vector& target);

struct BatchCeResult {
  double loss = 0.0;  // mean over rows
  Matrix grad;        // already divided by the row count
};

BatchCeResult softmax_ce_mean(const Matrix& logits, std::span<const int> targets);
BatchCeResult softmax_ce_mean(const Matrix& logits, const Matrix& soft_targets);

using LossWeights = std::map<std::string, double>;

struct LossValue {
  double scalar = 0.0;
  std::map<std::string, double> per_head;
  LossWeights weights;
};

/// scalar = sum_i w_i * L_i. A nonzero weight without a component is an
/// error; a zero weight may lack one.
LossValue interpolate_losses(const LossWeights& weights, const std::map<std::string, double>& components);

struct TrainConfig {
  double learning_rate = 0.05;
  std::size_t epochs = 10;
  std::size_t batch_size = 256;
  std::uint64_t seed = 1;
  LossWeights loss_weights;

  void validate() const;
};

void sgd_step(std::span<double> params, std::span<const double> grads, double lr);
/// Applies p -= lr * g over every layer of `params` using its own buffers.
void sgd_step(NetParams& params, double lr);

struct GradCheckOptions {
  std::size_t max_coords = 100;
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor: components smaller than this are compared on an
  // absolute scale of tolerance * abs_floor.
  double abs_floor = 1e-4;
  std::uint64_t seed = 7;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t worst_coord = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = false;
};

/// Compares `analytic[i]` against central differences of `loss` obtained by
/// perturbing *coords[i] in place. Evaluates a random subsample of at most
/// max_coords coordinates. Restores every coordinate afterwards.
GradCheckReport check_gradients(const std::function<double()>& loss, std::span<double* const> coords,
                                std::span<const double> analytic, const GradCheckOptions& options = {});

/// Checkpoint: "SEVA", version, layer count, then per layer out, in,
/// activation and little-endian f64 weights (row-major) and biases.
void write_net(std::ostream& os, const NetParams& params);
NetParams read_net(std::istream& is);

/// Rows of `m` as contiguous blocks of size `batch_size` over a permutation.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t batch_size);

/// Gathers rows `rows` from `m`.
Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows);

bool all_finite(const Matrix& m);

}  // namespace seva
