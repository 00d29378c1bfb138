// Copyright 2026 The mixphm Authors
// SPDX-License-Identifier: Apache-2.0
#include "mixphm/optim.hpp"

#include <cmath>

#include "mixphm/errors.hpp"

namespace mixphm {

void AdamW::step(const std::vector<ParamPtr>& params) {
  bool any = false;
  for (const auto& p : params) {
    if (p->trainable && p->grad_accumulated) {
      any = true;
      break;
    }
  }
  if (!any) {
    throw ContractError("AdamW::step: no gradients accumulated; call backward first");
  }

  for (const auto& p : params) {
    if (!p->trainable || !p->grad_accumulated) continue;
    Slot& slot = state_[p.get()];
    if (slot.t == 0) {
      slot.m = Matrix::zeros(p->value.rows, p->value.cols);
      slot.v = Matrix::zeros(p->value.rows, p->value.cols);
    }
    slot.t += 1;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(slot.t));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(slot.t));
    for (std::size_t i = 0; i < p->value.data.size(); ++i) {
      const double g = p->gradient.data[i];
      slot.m.data[i] = config_.beta1 * slot.m.data[i] + (1.0 - config_.beta1) * g;
      slot.v.data[i] = config_.beta2 * slot.v.data[i] + (1.0 - config_.beta2) * g * g;
      const double mhat = slot.m.data[i] / bc1;
      const double vhat = slot.v.data[i] / bc2;
      p->value.data[i] -= config_.lr * (mhat / (std::sqrt(vhat) + config_.epsilon) +
                                        config_.weight_decay * p->value.data[i]);
    }
  }
}

}  // namespace mixphm
