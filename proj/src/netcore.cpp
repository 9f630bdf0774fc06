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

#include "seva/netcore.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>

namespace seva {

namespace {
constexpr std::uint32_t kNetVersion = 1;
}

NetParams::NetParams(std::vector<Layer> layers) : layers_(std::move(layers)) {
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const Layer& l = layers_[k];
    if (static_cast<std::size_t>(l.bias.size()) != l.out_dim()) {
      throw DimensionError("layer " + std::to_string(k) + ": bias size " + std::to_string(l.bias.size()) +
                           " != output dim " + std::to_string(l.out_dim()));
    }
    if (k > 0 && layers_[k - 1].out_dim() != l.in_dim()) {
      throw DimensionError("layer " + std::to_string(k) + ": input dim " + std::to_string(l.in_dim()) +
                           " does not chain with previous output dim " + std::to_string(layers_[k - 1].out_dim()));
    }
  }
  grads_.reserve(layers_.size());
  for (const Layer& l : layers_) {
    grads_.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
  }
}

NetParams NetParams::glorot(std::span<const std::size_t> dims, std::span<const Activation> activations, Rng& rng) {
  if (dims.size() != activations.size() + 1) throw DimensionError("glorot: need one more dim than activations");
  std::vector<Layer> layers;
  for (std::size_t k = 0; k < activations.size(); ++k) {
    const auto in = static_cast<Eigen::Index>(dims[k]);
    const auto out = static_cast<Eigen::Index>(dims[k + 1]);
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    Layer l{Matrix(out, in), Vector::Zero(out), activations[k]};
    for (Eigen::Index r = 0; r < out; ++r) {
      for (Eigen::Index c = 0; c < in; ++c) l.weight(r, c) = (2.0 * uniform01(rng) - 1.0) * bound;
    }
    layers.push_back(std::move(l));
  }
  return NetParams(std::move(layers));
}

std::size_t NetParams::input_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim(); }
std::size_t NetParams::output_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim(); }

std::size_t NetParams::num_params() const {
  std::size_t n = 0;
  for (const Layer& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

void NetParams::zero_grad() {
  for (LayerGrad& g : grads_) {
    g.weight.setZero();
    g.bias.setZero();
  }
}

void NetParams::for_each_param(const std::function<void(double&, double&)>& fn) {
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    Layer& l = layers_[k];
    LayerGrad& g = grads_[k];
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) fn(l.weight.data()[i], g.weight.data()[i]);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) fn(l.bias[i], g.bias[i]);
  }
}

Matrix apply_activation(Activation act, Matrix z) {
  switch (act) {
    case Activation::kLinear: break;
    case Activation::kRelu: z = z.cwiseMax(0.0); break;
    case Activation::kSigmoid: z = z.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); }); break;
  }
  return z;
}

Matrix apply_layer(const Layer& layer, const Matrix& input, std::size_t layer_index) {
  if (static_cast<std::size_t>(input.cols()) != layer.in_dim()) {
    throw DimensionError("layer " + std::to_string(layer_index) + ": expected input dim " +
                         std::to_string(layer.in_dim()) + ", got " + std::to_string(input.cols()));
  }
  Matrix z = input * layer.weight.transpose();
  z.rowwise() += layer.bias.transpose();
  return apply_activation(layer.activation, std::move(z));
}

Matrix backprop_layer(const Layer& layer, const Matrix& input, const Matrix& output, const Matrix& grad_output,
                      LayerGrad* grad) {
  Matrix dz;
  switch (layer.activation) {
    case Activation::kLinear: dz = grad_output; break;
    case Activation::kRelu: dz = grad_output.cwiseProduct((output.array() > 0.0).cast<double>().matrix()); break;
    case Activation::kSigmoid:
      dz = grad_output.cwiseProduct(output.cwiseProduct((1.0 - output.array()).matrix()));
      break;
  }
  if (grad != nullptr) {
    grad->weight.noalias() += dz.transpose() * input;
    grad->bias.noalias() += dz.colwise().sum().transpose();
  }
  return dz * layer.weight;
}

ForwardCache forward(const NetParams& params, const Matrix& input, std::size_t first, std::size_t last) {
  last = std::min(last, params.num_layers());
  ForwardCache cache;
  cache.outputs.reserve(last - first + 1);
  cache.outputs.push_back(input);
  for (std::size_t k = first; k < last; ++k) {
    cache.outputs.push_back(apply_layer(params.layer(k), cache.outputs.back(), k));
  }
  return cache;
}

Vector forward(const NetParams& params, const Vector& input) {
  const Matrix row = input.transpose();
  return forward(params, row).output().row(0).transpose();
}

Matrix backward(NetParams& params, const ForwardCache& cache, const Matrix& grad_output, std::size_t first) {
  Matrix g = grad_output;
  const std::size_t n = cache.outputs.size() - 1;
  for (std::size_t i = n; i-- > 0;) {
    const std::size_t k = first + i;
    g = backprop_layer(params.layer(k), cache.outputs[i], cache.outputs[i + 1], g, &params.grad(k));
  }
  return g;
}

Vector softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  Vector e = (logits.array() - m).exp().matrix();
  return e / e.sum();
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    const double lse = m + std::log((logits.row(r).array() - m).exp().sum());
    out.row(r) = logits.row(r).array() - lse;
  }
  return out;
}

namespace {

void require_finite(const Matrix& logits) {
  if (!all_finite(logits)) throw NumericError("non-finite logits");
}

}  // namespace

CeResult softmax_ce(const Vector& logits, std::size_t target) {
  if (target >= static_cast<std::size_t>(logits.size())) throw DimensionError("softmax_ce: target index out of range");
  Vector t = Vector::Zero(logits.size());
  t[static_cast<Eigen::Index>(target)] = 1.0;
  return softmax_ce(logits, t);
}

CeResult softmax_ce(const Vector& logits, const Vector& target) {
  if (logits.size() != target.size()) throw DimensionError("softmax_ce: target size mismatch");
  if (!logits.allFinite()) throw NumericError("non-finite logits");
  if (std::abs(target.sum() - 1.0) > 1e-9) throw DataError("softmax_ce: target does not sum to 1");
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  CeResult r;
  r.loss = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (target[i] != 0.0) r.loss -= target[i] * (logits[i] - lse);
  }
  r.grad = softmax(logits) - target;
  return r;
}

BatchCeResult softmax_ce_mean(const Matrix& logits, std::span<const int> targets) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size()) throw DimensionError("softmax_ce_mean: row count");
  require_finite(logits);
  const Matrix logp = log_softmax_rows(logits);
  const double inv = 1.0 / static_cast<double>(logits.rows());
  BatchCeResult r;
  r.grad = logp.array().exp().matrix();
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    const int y = targets[static_cast<std::size_t>(t)];
    if (y < 0 || y >= logits.cols()) throw DimensionError("softmax_ce_mean: target index out of range");
    r.loss -= logp(t, y);
    r.grad(t, y) -= 1.0;
  }
  r.loss *= inv;
  r.grad *= inv;
  return r;
}

BatchCeResult softmax_ce_mean(const Matrix& logits, const Matrix& soft_targets) {
  if (logits.rows() != soft_targets.rows() || logits.cols() != soft_targets.cols()) {
    throw DimensionError("softmax_ce_mean: soft target shape");
  }
  require_finite(logits);
  const Matrix logp = log_softmax_rows(logits);
  const double inv = 1.0 / static_cast<double>(logits.rows());
  BatchCeResult r;
  r.loss = -(soft_targets.array() * logp.array()).sum() * inv;
  r.grad = (logp.array().exp().matrix() - soft_targets) * inv;
  return r;
}

LossValue interpolate_losses(const LossWeights& weights, const std::map<std::string, double>& components) {
  LossValue v;
  v.per_head = components;
  v.weights = weights;
  for (const auto& [name, w] : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw DataError("loss weight for '" + name + "' must be finite and >= 0");
    auto it = components.find(name);
    if (it == components.end()) {
      if (w != 0.0) throw DataError("loss head '" + name + "' has nonzero weight but no component");
      continue;
    }
    if (w != 0.0) v.scalar += w * it->second;
  }
  return v;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw DataError("learning_rate must be > 0");
  if (batch_size == 0) throw DataError("batch_size must be positive");
  double total = 0.0;
  for (const auto& [name, w] : loss_weights) {
    if (w < 0.0) throw DataError("loss weight '" + name + "' is negative");
    total += w;
  }
  if (!loss_weights.empty() && !(total > 0.0)) throw DataError("loss weights must sum to > 0");
}

void sgd_step(std::span<double> params, std::span<const double> grads, double lr) {
  if (params.size() != grads.size()) throw DimensionError("sgd_step: parameter/gradient size mismatch");
  if (!(lr > 0.0)) throw DataError("sgd_step: learning rate must be > 0");
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
}

void sgd_step(NetParams& params, double lr) {
  if (!(lr > 0.0)) throw DataError("sgd_step: learning rate must be > 0");
  for (std::size_t k = 0; k < params.num_layers(); ++k) {
    params.layer(k).weight.noalias() -= lr * params.grad(k).weight;
    params.layer(k).bias.noalias() -= lr * params.grad(k).bias;
  }
}

GradCheckReport check_gradients(const std::function<double()>& loss, std::span<double* const> coords,
                                std::span<const double> analytic, const GradCheckOptions& options) {
  if (coords.size() != analytic.size()) throw DimensionError("check_gradients: coords/analytic size mismatch");
  std::vector<std::size_t> picks;
  if (coords.size() <= options.max_coords) {
    picks.resize(coords.size());
    for (std::size_t i = 0; i < picks.size(); ++i) picks[i] = i;
  } else {
    Rng rng(options.seed);
    auto perm = shuffled_indices(coords.size(), rng);
    picks.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(options.max_coords));
    std::sort(picks.begin(), picks.end());
  }
  GradCheckReport report;
  for (std::size_t i : picks) {
    double* p = coords[i];
    const double saved = *p;
    *p = saved + options.step;
    const double up = loss();
    *p = saved - options.step;
    const double down = loss();
    *p = saved;
    const double numeric = (up - down) / (2.0 * options.step);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
    double rel = std::abs(a - numeric) / denom;
    if (std::isnan(rel)) rel = std::numeric_limits<double>::infinity();
    if (report.coords_checked == 0 || rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_coord = i;
      report.worst_analytic = a;
      report.worst_numeric = numeric;
    }
    ++report.coords_checked;
  }
  report.passed = report.coords_checked > 0 && report.max_rel_error < options.tolerance;
  return report;
}

void write_net(std::ostream& os, const NetParams& params) {
  binio::write_magic(os, "SEVA");
  binio::write_u32(os, kNetVersion);
  binio::write_u32(os, static_cast<std::uint32_t>(params.num_layers()));
  for (const Layer& l : params.layers()) {
    binio::write_u32(os, static_cast<std::uint32_t>(l.out_dim()));
    binio::write_u32(os, static_cast<std::uint32_t>(l.in_dim()));
    binio::write_u32(os, static_cast<std::uint32_t>(l.activation));
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) binio::write_f64(os, l.weight.data()[i]);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) binio::write_f64(os, l.bias[i]);
  }
}

NetParams read_net(std::istream& is) {
  binio::expect_magic(is, "SEVA");
  const std::uint32_t version = binio::read_u32(is);
  if (version != kNetVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t n = binio::read_u32(is);
  std::vector<Layer> layers;
  layers.reserve(n);
  for (std::uint32_t k = 0; k < n; ++k) {
    const auto out = static_cast<Eigen::Index>(binio::read_u32(is));
    const auto in = static_cast<Eigen::Index>(binio::read_u32(is));
    const std::uint32_t act = binio::read_u32(is);
    if (act > 2) throw DataError("checkpoint: unknown activation code " + std::to_string(act));
    Layer l{Matrix(out, in), Vector(out), static_cast<Activation>(act)};
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = binio::read_f64(is);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = binio::read_f64(is);
    layers.push_back(std::move(l));
  }
  return NetParams(std::move(layers));
}

std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t batch_size) {
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const std::size_t end = std::min(order.size(), i + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace seva
