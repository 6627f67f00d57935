#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace gstrs {

using ScalarFn = std::function<double(std::span<const double>)>;
/// Identifies the smooth piece a point lies on (hinge signs, mined ids).
using PatternFn = std::function<std::vector<long>(std::span<const double>)>;

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-5;
  /// Relative error is |a - n| / max(|a|, |n|, floor).
  double floor = 1e-3;
  std::size_t keep_worst = 5;
};

struct CoordinateError {
  std::size_t coordinate = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<CoordinateError> worst;  // descending error
  std::size_t checked = 0;
  /// Coordinates whose +-step probe changed the pattern; excluded from the max.
  std::vector<std::size_t> unstable;
  bool passed = true;
};

/// Central differences (f(x+h) - f(x-h)) / 2h against `analytic`, coordinate
/// by coordinate.
GradCheckReport grad_check(const ScalarFn& f, std::span<const double> point,
                           std::span<const double> analytic, const GradCheckOptions& options = {},
                           const PatternFn& pattern = {});

struct SuiteEntry {
  std::string name;
  std::size_t instances = 0;
  std::size_t coordinates = 0;
  std::size_t unstable = 0;
  double max_rel_error = 0.0;
  bool passed = true;
};

struct GradientSuiteReport {
  std::vector<SuiteEntry> entries;
  double seconds = 0.0;
  bool passed() const;
};

/// Random instances (dims 4-16, 3-8 positives, 2-6 negatives, 2-4 groups)
/// for every loss and the embedding backward pass. `inject_fault` scales
/// every analytic gradient by 1.01.
GradientSuiteReport run_gradient_suite(std::uint64_t seed, std::size_t trials,
                                       bool inject_fault = false,
                                       const GradCheckOptions& options = {});

}  // namespace gstrs
