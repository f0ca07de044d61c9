#pragma once

// Central finite-difference oracle for the tape. Meant for Scalar = double;
// at f32 the perturbation is lost in rounding.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>

#include "rrra/numkernel/tape.hpp"

namespace rrra::num {

struct GradCheckResult {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t entries = 0;
  std::string worst;  // "param[index]" of the largest relative error
};

/// |analytic - numeric| / max(|analytic|, |numeric|, floor).
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// `loss` builds a fresh tape and returns a scalar node. Every entry of every
/// parameter is perturbed by ±eps; the analytic gradient comes from one
/// backward pass on an unperturbed tape.
template <typename Scalar, typename LossFn>
GradCheckResult check_gradients(std::span<Parameter<Scalar>* const> params, LossFn&& loss,
                                double eps = 1e-4, double floor = 1e-6) {
  for (auto* p : params) p->zero_grad();
  {
    Tape<Scalar> tape;
    const Var root = loss(tape);
    tape.backward(root);
  }
  auto eval = [&] {
    Tape<Scalar> tape;
    return static_cast<double>(tape.scalar_value(loss(tape)));
  };
  GradCheckResult r;
  for (auto* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const Scalar saved = p->value.data()[i];
      p->value.data()[i] = static_cast<Scalar>(static_cast<double>(saved) + eps);
      const double up = eval();
      p->value.data()[i] = static_cast<Scalar>(static_cast<double>(saved) - eps);
      const double down = eval();
      p->value.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = static_cast<double>(p->grad.data()[i]);
      const double rel = relative_error(analytic, numeric, floor);
      r.max_abs_err = std::max(r.max_abs_err, std::abs(analytic - numeric));
      if (rel > r.max_rel_err || r.worst.empty()) {
        if (rel >= r.max_rel_err) r.worst = p->name + "[" + std::to_string(i) + "]";
        r.max_rel_err = std::max(r.max_rel_err, rel);
      }
      ++r.entries;
    }
  }
  return r;
}

}  // namespace rrra::num
