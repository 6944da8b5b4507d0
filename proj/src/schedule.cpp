// SPDX-License-Identifier: Apache-2.0
#include "veggie/schedule.hpp"

#include <cmath>
#include <string>

#include "veggie/errors.hpp"

namespace veggie {

NoiseSchedule NoiseSchedule::linear(int T_max, double beta_start, double beta_end) {
    if (T_max < 1) throw ConfigError("schedule needs T_max >= 1");
    NoiseSchedule s;
    s.T_max = T_max;
    s.betas.resize(static_cast<size_t>(T_max));
    s.alphas_cumprod.resize(static_cast<size_t>(T_max));
    double abar = 1.0;
    for (int t = 1; t <= T_max; ++t) {
        const double b = (T_max == 1)
                             ? beta_start
                             : beta_start + (beta_end - beta_start) * (t - 1) / (T_max - 1);
        s.betas[static_cast<size_t>(t - 1)] = b;
        abar *= 1.0 - b;
        s.alphas_cumprod[static_cast<size_t>(t - 1)] = abar;
    }
    return s;
}

double NoiseSchedule::beta(int t) const {
    if (t < 1 || t > T_max) throw TimestepError("t=" + std::to_string(t));
    return betas[static_cast<size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t < 1 || t > T_max) throw TimestepError("t=" + std::to_string(t));
    return alphas_cumprod[static_cast<size_t>(t - 1)];
}

Tensor NoiseSchedule::add_noise(const Tensor& z0, int t, const Tensor& eps) const {
    if (!eps.same_shape(z0)) throw ShapeError("eps must match z0");
    const double abar = alpha_bar(t);
    const double a = std::sqrt(abar), b = std::sqrt(1.0 - abar);
    Tensor out(z0.shape());
    for (std::int64_t i = 0; i < z0.numel(); ++i) out[i] = a * z0[i] + b * eps[i];
    return out;
}

}  // namespace veggie
