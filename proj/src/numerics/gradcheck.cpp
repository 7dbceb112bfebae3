#include "anovit/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "anovit/init.hpp"
#include "anovit/ops.hpp"

namespace anovit {

bool GradCheckReport::passed() const {
  return std::all_of(parameters.begin(), parameters.end(), [](const auto& p) { return p.passed; });
}

double GradCheckReport::max_rel_err() const {
  double m = 0.0;
  for (const auto& p : parameters) m = std::max(m, p.max_rel_err);
  return m;
}

namespace {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

}  // namespace

template <typename T>
GradCheckReport grad_check(const GradCheckProblem<T>& problem, ParameterStore<T>& params,
                           const GradCheckOptions& options) {
  params.zero_grad();
  {
    Tape<T> tape;
    Var<T> loss = problem.loss();
    if (!loss.value().all_finite()) {
      const std::string where = tape.first_non_finite();
      throw NumericError("grad_check: non-finite loss" + (where.empty() ? "" : " (first at " + where + ")"));
    }
    tape.backward(loss);
  }

  struct Eval {
    double value;
    std::uint64_t pattern;
  };
  auto evaluate = [&]() -> Eval {
    NoGradGuard<T> guard;
    ops::ActivationFingerprint fingerprint;
    const double v = problem.loss_value ? problem.loss_value() : static_cast<double>(problem.loss().value()[0]);
    if (!std::isfinite(v)) throw NumericError("grad_check: non-finite loss under perturbation");
    return {v, fingerprint.value()};
  };
  const std::uint64_t base_pattern = evaluate().pattern;

  Rng rng(options.seed);
  GradCheckReport report;
  report.tolerance = options.tolerance;

  for (auto& p : params) {
    ParameterCheck check;
    check.name = p.name;
    check.trainable = p.trainable;
    auto values = p.value.data();
    const auto grads = p.grad.data();

    if (!p.trainable) {
      // Frozen parameters must not receive gradient.
      const bool zero = std::all_of(grads.begin(), grads.end(), [](T g) { return g == T{0}; });
      check.passed = zero;
      check.max_abs_err = zero ? 0.0 : 1.0;
      report.parameters.push_back(check);
      continue;
    }

    double group_scale = 0.0;
    for (T g : grads) group_scale = std::max(group_scale, std::abs(double(g)));

    // Candidate entries in random order; kink-crossing probes are replaced by
    // the next candidate.
    std::vector<std::size_t> candidates(values.size());
    std::iota(candidates.begin(), candidates.end(), std::size_t{0});
    std::size_t wanted = candidates.size();
    if (options.samples_per_parameter != 0 && options.samples_per_parameter < candidates.size()) {
      std::shuffle(candidates.begin(), candidates.end(), rng);
      wanted = options.samples_per_parameter;
    }
    for (std::size_t c = 0; c < candidates.size() && check.probes < wanted; ++c) {
      const std::size_t idx = candidates[c];
      const T original = values[idx];
      values[idx] = static_cast<T>(double(original) + options.eps);
      const double step_up = double(values[idx]) - double(original);
      const Eval up = evaluate();
      values[idx] = static_cast<T>(double(original) - options.eps);
      const double step_down = double(original) - double(values[idx]);
      const Eval down = evaluate();
      values[idx] = original;
      if (up.pattern != base_pattern || down.pattern != base_pattern) {
        ++check.skipped;
        continue;
      }
      const double numeric = (up.value - down.value) / (step_up + step_down);
      const double analytic = grads[idx];
      check.max_abs_err = std::max(check.max_abs_err, std::abs(analytic - numeric));
      check.max_rel_err =
          std::max(check.max_rel_err, relative_error(analytic, numeric, std::max(group_scale, options.abs_floor)));
      ++check.probes;
    }

    std::normal_distribution<double> normal(0.0, 1.0);
    const std::vector<T> saved(values.begin(), values.end());
    std::size_t done = 0;
    for (std::size_t attempt = 0; done < options.directions && attempt < 4 * options.directions; ++attempt) {
      std::vector<double> dir(values.size());
      double norm = 0.0;
      for (auto& v : dir) {
        v = normal(rng);
        norm += v * v;
      }
      norm = std::sqrt(norm);
      std::vector<double> plus(values.size());
      for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<T>(double(saved[i]) + options.eps * dir[i] / norm);
      const Eval up = evaluate();
      for (std::size_t i = 0; i < values.size(); ++i) plus[i] = double(values[i]);
      for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<T>(double(saved[i]) - options.eps * dir[i] / norm);
      const Eval down = evaluate();
      double analytic = 0.0;
      for (std::size_t i = 0; i < values.size(); ++i) analytic += double(grads[i]) * (plus[i] - double(values[i]));
      std::copy(saved.begin(), saved.end(), values.begin());
      if (up.pattern != base_pattern || down.pattern != base_pattern) {
        ++check.skipped;
        continue;
      }
      const double numeric = up.value - down.value;
      check.max_abs_err = std::max(check.max_abs_err, std::abs(analytic - numeric));
      check.max_rel_err = std::max(check.max_rel_err, relative_error(analytic, numeric, options.abs_floor));
      ++check.probes;
      ++done;
    }

    check.passed = check.probes > 0 && check.max_rel_err < options.tolerance;
    report.parameters.push_back(check);
  }
  return report;
}

template GradCheckReport grad_check<float>(const GradCheckProblem<float>&, ParameterStore<float>&,
                                           const GradCheckOptions&);
template GradCheckReport grad_check<double>(const GradCheckProblem<double>&, ParameterStore<double>&,
                                            const GradCheckOptions&);

}  // namespace anovit
