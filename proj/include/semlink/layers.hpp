#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "semlink/rng.hpp"
#include "semlink/tensor.hpp"

namespace semlink {

struct ParamBlock {
  std::string name;
  Tensor2 value;
  Tensor2 grad;
  bool trainable = true;

  ParamBlock() = default;
  ParamBlock(std::string n, Tensor2 v, bool train = true)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()), trainable(train) {}

  void zero_grad() { grad.fill(0.0); }
};

void zero_grads(std::span<ParamBlock* const> params);

// y = x·W + b, b broadcast over rows.
Tensor2 dense_forward(const Tensor2& x, const ParamBlock& w, const ParamBlock& b);
// Accumulates dW, db into trainable blocks and returns dL/dx.
Tensor2 dense_backward(const Tensor2& x, ParamBlock& w, ParamBlock& b, const Tensor2& grad_y);

Tensor2 relu_forward(const Tensor2& x);
// grad through ReLU given its output.
Tensor2 relu_backward(const Tensor2& y, const Tensor2& grad_y);

// Row-wise softmax with max subtraction.
Tensor2 row_softmax(const Tensor2& x);
void row_softmax_inplace(std::span<double> row);
Tensor2 row_softmax_backward(const Tensor2& y, const Tensor2& grad_y);

struct CrossEntropy {
  double loss = 0.0;
  Tensor2 grad_logits;  // d(mean loss)/d logits
};

// Mean negative log-softmax of the true class over the batch.
CrossEntropy cross_entropy_loss(const Tensor2& logits, std::span<const int> labels);

// Activations recorded by Mlp::forward for a later backward pass.
struct MlpTape {
  std::vector<Tensor2> inputs;  // input of each layer
  bool recorded = false;
};

// Fully connected stack with ReLU between layers and a linear output.
class Mlp {
 public:
  Mlp() = default;
  // He-normal weights, zero biases.
  Mlp(const std::string& name, std::vector<std::size_t> sizes, Rng& rng);

  Tensor2 forward(const Tensor2& x, MlpTape& tape) const;
  Tensor2 infer(const Tensor2& x) const;
  // Accumulates into trainable blocks; frozen blocks only pass gradients
  // through. Returns dL/dx, or an empty tensor when input_grad is false.
  Tensor2 backward(MlpTape& tape, const Tensor2& grad_out, bool input_grad = true);

  // dL/dx only; parameter gradients are left untouched.
  Tensor2 backward_input(const MlpTape& tape, const Tensor2& grad_out) const;

  std::size_t in_dim() const { return sizes_.front(); }
  std::size_t out_dim() const { return sizes_.back(); }
  std::size_t num_layers() const { return weights_.size(); }
  const std::vector<std::size_t>& sizes() const { return sizes_; }

  ParamBlock& weight(std::size_t layer) { return weights_.at(layer); }
  ParamBlock& bias(std::size_t layer) { return biases_.at(layer); }
  const ParamBlock& weight(std::size_t layer) const { return weights_.at(layer); }
  const ParamBlock& bias(std::size_t layer) const { return biases_.at(layer); }

  std::vector<ParamBlock*> params();
  std::vector<const ParamBlock*> params() const;
  void set_trainable(bool trainable);

 private:
  std::vector<std::size_t> sizes_;
  std::vector<ParamBlock> weights_;
  std::vector<ParamBlock> biases_;
};

}  // namespace semlink
