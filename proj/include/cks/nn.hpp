#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "cks/linalg.hpp"
#include "cks/rng.hpp"

namespace cks {

enum class Activation { Relu, Tanh, Identity };
enum class ModelRole { Encoder, Generator, Classifier };

struct Layer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation act = Activation::Identity;
};

struct ModelParams {
  std::vector<Layer> layers;
  ModelRole role = ModelRole::Encoder;

  Eigen::Index input_dim() const { return layers.front().weight.cols(); }
  Eigen::Index output_dim() const { return layers.back().weight.rows(); }
};

struct LayerGrads {
  Matrix weight;
  Vector bias;
};

// Everything backward needs: the batch input plus each layer's pre- and
// post-activation values.
struct ForwardTrace {
  Matrix input;
  std::vector<Matrix> pre;
  std::vector<Matrix> post;

  const Matrix& output() const { return post.back(); }
};

inline Matrix apply_activation(Activation a, const Matrix& x) {
  switch (a) {
    case Activation::Relu: return x.cwiseMax(0.0);
    case Activation::Tanh: return x.array().tanh().matrix();
    case Activation::Identity: return x;
  }
  throw std::logic_error("bad activation");
}

inline Matrix activation_grad(Activation a, const Matrix& pre, const Matrix& post) {
  switch (a) {
    case Activation::Relu:
      return (pre.array() > 0.0).cast<double>().matrix();
    case Activation::Tanh:
      return (1.0 - post.array().square()).matrix();
    case Activation::Identity:
      return Matrix::Ones(pre.rows(), pre.cols());
  }
  throw std::logic_error("bad activation");
}

// Rows of `batch` are samples.
inline ForwardTrace forward(const ModelParams& params, const Matrix& batch) {
  if (batch.cols() != params.input_dim())
    throw std::invalid_argument("dimension mismatch");
  if (!batch.allFinite()) throw std::invalid_argument("non-finite input");
  ForwardTrace t;
  t.input = batch;
  Matrix x = batch;
  for (const Layer& l : params.layers) {
    Matrix pre = (x * l.weight.transpose()).rowwise() + l.bias.transpose();
    Matrix post = apply_activation(l.act, pre);
    t.pre.push_back(pre);
    t.post.push_back(post);
    x = post;
  }
  return t;
}

struct BackwardResult {
  std::vector<LayerGrads> grads;
  Matrix input_grad;
};

inline BackwardResult backward(const ModelParams& params, const ForwardTrace& trace,
                               const Matrix& output_grad) {
  const std::size_t nl = params.layers.size();
  if (trace.pre.size() != nl || output_grad.rows() != trace.output().rows() ||
      output_grad.cols() != trace.output().cols())
    throw std::invalid_argument("shape mismatch with trace");
  BackwardResult r;
  r.grads.resize(nl);
  Matrix delta = output_grad;
  for (std::size_t li = nl; li-- > 0;) {
    const Layer& l = params.layers[li];
    delta = delta.cwiseProduct(activation_grad(l.act, trace.pre[li], trace.post[li]));
    const Matrix& in = li == 0 ? trace.input : trace.post[li - 1];
    r.grads[li].weight = delta.transpose() * in;
    r.grads[li].bias = delta.colwise().sum();
    delta = delta * l.weight;
  }
  r.input_grad = delta;
  return r;
}

inline void sgd_step(ModelParams& params, const std::vector<LayerGrads>& grads,
                     double lr) {
  if (grads.size() != params.layers.size())
    throw std::invalid_argument("shape mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].weight.allFinite() || !grads[i].bias.allFinite())
      throw std::runtime_error("diverged");
    params.layers[i].weight -= lr * grads[i].weight;
    params.layers[i].bias -= lr * grads[i].bias;
  }
}

struct CeResult {
  double loss = 0.0;
  Matrix logit_grads;
};

// Mean cross-entropy with log-sum-exp stabilization.
inline CeResult softmax_ce(const Matrix& logits, const std::vector<int>& labels) {
  const Eigen::Index n = logits.rows(), c = logits.cols();
  if (static_cast<Eigen::Index>(labels.size()) != n)
    throw std::invalid_argument("shape mismatch");
  CeResult r;
  r.logit_grads.resize(n, c);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= c)
      throw std::invalid_argument("label out of range");
    double m = logits.row(i).maxCoeff();
    Eigen::ArrayXd shifted = logits.row(i).array() - m;
    Eigen::ArrayXd ex = shifted.exp();
    double z = ex.sum();
    total += std::log(z) - shifted(labels[i]);
    r.logit_grads.row(i) = (ex / z).matrix().transpose();
    r.logit_grads(i, labels[i]) -= 1.0;
  }
  r.loss = total / static_cast<double>(n);
  r.logit_grads /= static_cast<double>(n);
  return r;
}

// Glorot-uniform weights, zero biases.
inline ModelParams make_mlp(const std::vector<Eigen::Index>& dims,
                            const std::vector<Activation>& acts, ModelRole role,
                            Rng& rng) {
  if (dims.size() < 2 || acts.size() != dims.size() - 1)
    throw std::invalid_argument("bad architecture");
  ModelParams p;
  p.role = role;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    double limit = std::sqrt(6.0 / static_cast<double>(dims[i] + dims[i + 1]));
    std::uniform_real_distribution<double> u(-limit, limit);
    Layer l;
    l.weight.resize(dims[i + 1], dims[i]);
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = u(rng);
    l.bias = Vector::Zero(dims[i + 1]);
    l.act = acts[i];
    p.layers.push_back(std::move(l));
  }
  return p;
}

inline bool params_equal(const ModelParams& a, const ModelParams& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    if (a.layers[i].act != b.layers[i].act) return false;
    if (a.layers[i].weight != b.layers[i].weight) return false;
    if (a.layers[i].bias != b.layers[i].bias) return false;
  }
  return true;
}

}  // namespace cks
