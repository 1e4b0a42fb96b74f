#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "semlink/layers.hpp"

namespace semlink {

struct RAdamConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Rectified Adam (Liu et al., 2019). While the approximated SMA length is at
// most 4 the variance rectification is undefined and the update is plain
// bias-corrected momentum.
class RAdam {
 public:
  RAdam(std::span<ParamBlock* const> params, RAdamConfig cfg);

  // Applies one update to every trainable block and increments step().
  // Frozen blocks keep their value bit-for-bit.
  void step();

  std::uint64_t step_count() const { return step_; }
  const RAdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  // Rectification factor r_t for a given step, or 0 while it is undefined.
  static double rectification(std::uint64_t t, double beta2);

 private:
  std::vector<ParamBlock*> params_;
  std::vector<Tensor2> m_;
  std::vector<Tensor2> v_;
  RAdamConfig cfg_;
  std::uint64_t step_ = 0;
};

}  // namespace semlink
