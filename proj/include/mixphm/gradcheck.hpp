// Copyright 2026 The mixphm Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "mixphm/parameter.hpp"

namespace mixphm {

// The project-wide verification oracle: compares tape gradients against
// central finite differences.
//
// `eval(true)` must run the forward pass and a backward pass, accumulating
// gradients into `params`, and return the scalar loss. `eval(false)` must
// return the loss without touching gradients. The function has to be
// deterministic: two value-only calls must agree bitwise, otherwise an
// OracleError is thrown. Returns the max over parameter entries of
// |analytic - numeric| / max(1, |numeric|).
double grad_check(const std::vector<ParamPtr>& params,
                  const std::function<double(bool with_grad)>& eval,
                  double step = 1e-5);

}  // namespace mixphm
