#pragma once

// Central finite differences against the tape's analytic gradients.
//
// Two probe kinds per parameter:
//  * elementwise: perturb single entries (sampled, or all of them); the error
//    is relative to max(|analytic|, |numeric|, max_j |grad_j|), the last term
//    being the largest gradient entry of that parameter, so entries whose
//    true derivative is ~0 are judged on the parameter's gradient scale;
//  * directional: perturb the whole array along a random unit direction v and
//    compare (L(p + h v) - L(p - h v)) with <grad, p+ - p->.
// Perturbations are measured after rounding to T, so the finite difference is
// always divided by the step that was actually applied. A probe whose perturbed
// evaluations change any relu on/off state (see ops::ActivationFingerprint)
// straddles a kink; it is skipped and replaced by another candidate. A
// parameter with no valid probe fails.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "anovit/autograd.hpp"

namespace anovit {

struct GradCheckOptions {
  double eps = 1e-3;
  double tolerance = 1e-3;
  std::size_t samples_per_parameter = 8;  // 0 probes every entry
  std::size_t directions = 0;
  // Denominator floor of the relative error, for gradients that are exactly 0.
  double abs_floor = 1e-12;
  std::uint64_t seed = 0;
};

struct ParameterCheck {
  std::string name;
  bool trainable = true;
  std::size_t probes = 0;
  std::size_t skipped = 0;  // probes whose +/- evaluations changed the relu pattern
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<ParameterCheck> parameters;
  double tolerance = 0.0;

  bool passed() const;
  double max_rel_err() const;
};

template <typename T>
struct GradCheckProblem {
  // Builds the scalar loss; called with a tape active for the analytic pass.
  std::function<Var<T>()> loss;
  // Optional higher-precision evaluation used for the finite differences.
  std::function<double()> loss_value;
};

template <typename T>
GradCheckReport grad_check(const GradCheckProblem<T>& problem, ParameterStore<T>& params,
                           const GradCheckOptions& options);

extern template GradCheckReport grad_check<float>(const GradCheckProblem<float>&, ParameterStore<float>&,
                                                  const GradCheckOptions&);
extern template GradCheckReport grad_check<double>(const GradCheckProblem<double>&, ParameterStore<double>&,
                                                   const GradCheckOptions&);

}  // namespace anovit
