#include "semlink/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "semlink/errors.hpp"

namespace semlink {

void zero_grads(std::span<ParamBlock* const> params) {
  for (ParamBlock* p : params) p->zero_grad();
}

Tensor2 dense_forward(const Tensor2& x, const ParamBlock& w, const ParamBlock& b) {
  if (x.cols() != w.value.rows() || b.value.rows() != 1 || b.value.cols() != w.value.cols()) {
    throw DimensionError("dense_forward: x " + std::to_string(x.rows()) + "x" +
                         std::to_string(x.cols()) + ", W " + std::to_string(w.value.rows()) + "x" +
                         std::to_string(w.value.cols()) + ", b " + std::to_string(b.value.rows()) +
                         "x" + std::to_string(b.value.cols()));
  }
  Tensor2 y = matmul(x, w.value);
  const auto bias = b.value.row(0);
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto yr = y.row(r);
    for (std::size_t c = 0; c < yr.size(); ++c) yr[c] += bias[c];
  }
  return y;
}

Tensor2 dense_backward(const Tensor2& x, ParamBlock& w, ParamBlock& b, const Tensor2& grad_y) {
  if (grad_y.rows() != x.rows() || grad_y.cols() != w.value.cols()) {
    throw DimensionError("dense_backward: gradient shape mismatch");
  }
  if (w.trainable) matmul_tn_accumulate(x, grad_y, w.grad);
  if (b.trainable) {
    auto gb = b.grad.row(0);
    for (std::size_t r = 0; r < grad_y.rows(); ++r) {
      auto g = grad_y.row(r);
      for (std::size_t c = 0; c < g.size(); ++c) gb[c] += g[c];
    }
  }
  return matmul_nt(grad_y, w.value);
}

Tensor2 relu_forward(const Tensor2& x) {
  Tensor2 y = x;
  for (double& v : y.values()) v = v < 0.0 ? 0.0 : v;
  return y;
}

Tensor2 relu_backward(const Tensor2& y, const Tensor2& grad_y) {
  if (!y.same_shape(grad_y)) throw DimensionError("relu_backward: shape mismatch");
  Tensor2 g = grad_y;
  auto yv = y.values();
  auto gv = g.values();
  for (std::size_t i = 0; i < gv.size(); ++i)
    if (!(yv[i] > 0.0)) gv[i] = 0.0;
  return g;
}

void row_softmax_inplace(std::span<double> row) {
  if (row.empty()) return;
  const double mx = *std::max_element(row.begin(), row.end());
  double sum = 0.0;
  for (double& v : row) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : row) v /= sum;
}

Tensor2 row_softmax(const Tensor2& x) {
  Tensor2 y = x;
  for (std::size_t r = 0; r < y.rows(); ++r) row_softmax_inplace(y.row(r));
  return y;
}

Tensor2 row_softmax_backward(const Tensor2& y, const Tensor2& grad_y) {
  if (!y.same_shape(grad_y)) throw DimensionError("row_softmax_backward: shape mismatch");
  Tensor2 g(y.rows(), y.cols());
  for (std::size_t r = 0; r < y.rows(); ++r) {
    const auto yr = y.row(r);
    const auto gr = grad_y.row(r);
    const double inner = dot(yr, gr);
    auto out = g.row(r);
    for (std::size_t c = 0; c < yr.size(); ++c) out[c] = yr[c] * (gr[c] - inner);
  }
  return g;
}

CrossEntropy cross_entropy_loss(const Tensor2& logits, std::span<const int> labels) {
  if (labels.size() != logits.rows()) {
    throw DimensionError("cross_entropy_loss: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(logits.rows()) + " rows");
  }
  const std::size_t classes = logits.cols();
  CrossEntropy out;
  out.grad_logits = row_softmax(logits);
  const double inv_batch = logits.rows() ? 1.0 / static_cast<double>(logits.rows()) : 0.0;
  double total = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const int label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw ArgumentError("cross_entropy_loss: label " + std::to_string(label) + " outside [0, " +
                          std::to_string(classes) + ")");
    }
    const auto z = logits.row(r);
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - mx);
    total += (mx + std::log(sum)) - z[static_cast<std::size_t>(label)];

    auto g = out.grad_logits.row(r);
    g[static_cast<std::size_t>(label)] -= 1.0;
    for (double& v : g) v *= inv_batch;
  }
  out.loss = total * inv_batch;
  return out;
}

Mlp::Mlp(const std::string& name, std::vector<std::size_t> sizes, Rng& rng)
    : sizes_(std::move(sizes)) {
  if (sizes_.size() < 2) throw ArgumentError("Mlp: need at least input and output sizes");
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    const std::size_t fan_in = sizes_[l];
    const std::size_t fan_out = sizes_[l + 1];
    std::normal_distribution<double> init(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    Tensor2 w(fan_in, fan_out);
    for (double& v : w.values()) v = init(rng);
    weights_.emplace_back(name + ".w" + std::to_string(l), std::move(w));
    biases_.emplace_back(name + ".b" + std::to_string(l), Tensor2(1, fan_out));
  }
}

Tensor2 Mlp::forward(const Tensor2& x, MlpTape& tape) const {
  tape.inputs.clear();
  tape.inputs.reserve(weights_.size());
  Tensor2 h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    tape.inputs.push_back(h);
    h = dense_forward(h, weights_[l], biases_[l]);
    if (l + 1 < weights_.size()) h = relu_forward(h);
  }
  tape.recorded = true;
  return h;
}

Tensor2 Mlp::infer(const Tensor2& x) const {
  Tensor2 h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    h = dense_forward(h, weights_[l], biases_[l]);
    if (l + 1 < weights_.size()) h = relu_forward(h);
  }
  return h;
}

Tensor2 Mlp::backward(MlpTape& tape, const Tensor2& grad_out, bool input_grad) {
  if (!tape.recorded || tape.inputs.size() != weights_.size()) {
    throw StateError("Mlp::backward: no forward pass recorded");
  }
  Tensor2 g = grad_out;
  for (std::size_t l = weights_.size(); l-- > 0;) {
    if (l == 0 && !input_grad) {
      ParamBlock& w = weights_[0];
      ParamBlock& b = biases_[0];
      if (w.trainable) matmul_tn_accumulate(tape.inputs[0], g, w.grad);
      if (b.trainable) {
        auto gb = b.grad.row(0);
        for (std::size_t r = 0; r < g.rows(); ++r) axpy(1.0, g.row(r), gb);
      }
      g = Tensor2();
      break;
    }
    g = dense_backward(tape.inputs[l], weights_[l], biases_[l], g);
    // tape.inputs[l] is the post-ReLU output of layer l-1.
    if (l > 0) g = relu_backward(tape.inputs[l], g);
  }
  tape.recorded = false;
  tape.inputs.clear();
  return g;
}

Tensor2 Mlp::backward_input(const MlpTape& tape, const Tensor2& grad_out) const {
  if (!tape.recorded || tape.inputs.size() != weights_.size()) {
    throw StateError("Mlp::backward_input: no forward pass recorded");
  }
  Tensor2 g = grad_out;
  for (std::size_t l = weights_.size(); l-- > 0;) {
    g = matmul_nt(g, weights_[l].value);
    if (l > 0) g = relu_backward(tape.inputs[l], g);
  }
  return g;
}

std::vector<ParamBlock*> Mlp::params() {
  std::vector<ParamBlock*> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(&weights_[l]);
    out.push_back(&biases_[l]);
  }
  return out;
}

std::vector<const ParamBlock*> Mlp::params() const {
  std::vector<const ParamBlock*> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(&weights_[l]);
    out.push_back(&biases_[l]);
  }
  return out;
}

void Mlp::set_trainable(bool trainable) {
  for (auto* p : params()) p->trainable = trainable;
}

}  // namespace semlink
