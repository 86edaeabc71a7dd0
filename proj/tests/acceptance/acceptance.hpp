#pragma once

// Checks shared between the float32 and float64 halves of the acceptance
// binary. Nothing here depends on the precision of the library.

#include <string>

namespace acceptance {

struct Outcome {
  bool pass = false;
  std::string detail;
};

/// Analytic log-determinant of every layer against a central-difference
/// Jacobian on 3x2x2 inputs, 50 random parameterizations each.
Outcome logdet_exactness();
/// NLL gradient of a one-block proposed model against central differences
/// for every parameter, on one 3x4x4 patch.
Outcome gradient_correctness();

}  // namespace acceptance
