// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "veggie/tensor.hpp"

namespace veggie {

/// DDPM forward-process schedule. Timesteps are 1-based: betas[t-1] = beta_t,
/// alphas_cumprod[t-1] = prod_{s<=t}(1 - beta_s).
struct NoiseSchedule {
    std::vector<double> betas;
    std::vector<double> alphas_cumprod;
    int T_max = 0;

    /// Linear beta ramp (the DDPM default).
    static NoiseSchedule linear(int T_max = 1000, double beta_start = 1e-4,
                                double beta_end = 0.02);

    double beta(int t) const;       // throws TimestepError outside [1, T_max]
    double alpha_bar(int t) const;  // ditto

    /// z_t = sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps.
    Tensor add_noise(const Tensor& z0, int t, const Tensor& eps) const;
};

}  // namespace veggie
