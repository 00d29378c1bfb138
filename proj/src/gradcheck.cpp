// Copyright 2026 The mixphm Authors
// SPDX-License-Identifier: Apache-2.0
#include "mixphm/gradcheck.hpp"

#include <cmath>
#include <cstring>

#include "mixphm/errors.hpp"

namespace mixphm {

double grad_check(const std::vector<ParamPtr>& params,
                  const std::function<double(bool)>& eval,
                  double step) {
  if (!(step >= 1e-7 && step <= 1e-4)) {
    throw ContractError("grad_check: step must lie in [1e-7, 1e-4]");
  }

  const double probe_a = eval(false);
  const double probe_b = eval(false);
  if (std::memcmp(&probe_a, &probe_b, sizeof(double)) != 0) {
    throw OracleError("grad_check: target function is not deterministic");
  }

  zero_gradients(params);
  (void)eval(true);

  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p->gradient);

  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = *params[pi];
    if (!p.trainable) continue;
    for (std::size_t i = 0; i < p.value.data.size(); ++i) {
      const double saved = p.value.data[i];
      p.value.data[i] = saved + step;
      const double up = eval(false);
      p.value.data[i] = saved - step;
      const double down = eval(false);
      p.value.data[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double err =
          std::abs(analytic[pi].data[i] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace mixphm
