#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "rrra/numkernel/tape.hpp"

namespace rrra::num {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::uint64_t warmup_steps = 0;
};

template <typename Scalar>
struct AdamWState {
  AdamWConfig config;
  std::uint64_t step = 0;
  std::vector<Matrix<Scalar>> first_moment;
  std::vector<Matrix<Scalar>> second_moment;

  /// Learning rate applied by the next update: linear ramp from 0 over
  /// warmup_steps, constant afterwards.
  double effective_lr() const {
    if (config.warmup_steps == 0 || step >= config.warmup_steps) return config.lr;
    return config.lr * static_cast<double>(step) / static_cast<double>(config.warmup_steps);
  }
};

template <typename Scalar>
AdamWState<Scalar> make_adamw_state(const AdamWConfig& config,
                                    std::span<Parameter<Scalar>* const> params) {
  AdamWState<Scalar> s;
  s.config = config;
  for (const auto* p : params) {
    s.first_moment.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
    s.second_moment.push_back(Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()));
  }
  return s;
}

/// One AdamW update from the gradients stored in each parameter. Bias
/// correction uses the post-increment step count; weight decay is decoupled
/// (p -= lr·wd·p) and scaled by the same warmup ramp.
template <typename Scalar>
void adamw_step(AdamWState<Scalar>& state, std::span<Parameter<Scalar>* const> params) {
  if (params.size() != state.first_moment.size()) {
    throw DimensionMismatch("adamw_step: " + std::to_string(params.size()) +
                            " parameters but state tracks " +
                            std::to_string(state.first_moment.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = *params[i];
    const auto& m = state.first_moment[i];
    if (p.value.rows() != m.rows() || p.value.cols() != m.cols() || p.grad.rows() != m.rows() ||
        p.grad.cols() != m.cols()) {
      throw DimensionMismatch("adamw_step: parameter '" + p.name + "' is " +
                              shape_string(p.value.rows(), p.value.cols()) + ", moments are " +
                              shape_string(m.rows(), m.cols()));
    }
  }

  const AdamWConfig& c = state.config;
  const double lr = state.effective_lr();
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (Eigen::Index k = 0; k < p.value.size(); ++k) {
      const double g = static_cast<double>(p.grad.data()[k]);
      const double mk = c.beta1 * static_cast<double>(m.data()[k]) + (1.0 - c.beta1) * g;
      const double vk = c.beta2 * static_cast<double>(v.data()[k]) + (1.0 - c.beta2) * g * g;
      m.data()[k] = static_cast<Scalar>(mk);
      v.data()[k] = static_cast<Scalar>(vk);
      const double m_hat = mk / bc1;
      const double v_hat = vk / bc2;
      double w = static_cast<double>(p.value.data()[k]);
      w -= lr * (m_hat / (std::sqrt(v_hat) + c.eps) + c.weight_decay * w);
      p.value.data()[k] = static_cast<Scalar>(w);
    }
  }
}

}  // namespace rrra::num
