#include "semlink/radam.hpp"

#include <cmath>

namespace semlink {

RAdam::RAdam(std::span<ParamBlock* const> params, RAdamConfig cfg)
    : params_(params.begin(), params.end()), cfg_(cfg) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const ParamBlock* p : params_) {
    m_.emplace_back(p->value.rows(), p->value.cols());
    v_.emplace_back(p->value.rows(), p->value.cols());
  }
}

double RAdam::rectification(std::uint64_t t, double beta2) {
  const double rho_inf = 2.0 / (1.0 - beta2) - 1.0;
  const double b2t = std::pow(beta2, static_cast<double>(t));
  const double rho_t = rho_inf - 2.0 * static_cast<double>(t) * b2t / (1.0 - b2t);
  if (rho_t <= 4.0) return 0.0;
  return std::sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf /
                   ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
}

void RAdam::step() {
  ++step_;
  const double t = static_cast<double>(step_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
  const double r = rectification(step_, cfg_.beta2);

  for (std::size_t k = 0; k < params_.size(); ++k) {
    ParamBlock& p = *params_[k];
    if (!p.trainable) continue;
    auto w = p.value.values();
    auto g = p.grad.values();
    auto m = m_[k].values();
    auto v = v_[k].values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      if (r > 0.0) {
        const double v_hat = std::sqrt(v[i] / bc2);
        w[i] -= cfg_.lr * r * m_hat / (v_hat + cfg_.eps);
      } else {
        w[i] -= cfg_.lr * m_hat;
      }
    }
  }
}

}  // namespace semlink
