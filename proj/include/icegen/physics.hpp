#pragma once

#include "icegen/power_curve.hpp"

#include <span>

namespace icegen {

/// Weights of the composite objective; all physics terms work in power
/// normalized by the rated capacity.
struct LossWeights {
    double lambda_cap = 1.0;
    double lambda_ramp = 0.5;
    double lambda_tv = 0.1;
    double delta = 0.05;  // Huber threshold
    double alpha = 1.0;   // safety margin on the baseline curve during training

    void validate() const;
};

// The *_norm forms take normalized power and, when `grad` is non-empty, write
// dLoss/dp into it (same length as p). Hinge kinks use the zero subgradient.

/// (1/L) sum_t [p_t - cap_t]_+
double cap_loss_norm(std::span<const double> p, std::span<const double> cap, std::span<double> grad = {});
/// (1/L) sum over consecutive pairs of (d - up)_+^2 + (-d - down)_+^2, d = p_t - p_{t-1}.
double ramp_loss_norm(std::span<const double> p, double up, double down, std::span<double> grad = {});
/// (1/L) sum over consecutive pairs of huber_delta(p_t - p_{t-1}).
double tv_loss(std::span<const double> p, double delta, std::span<double> grad = {});

double huber(double z, double delta);
double huber_derivative(double z, double delta);

/// Cap hinge on a kW series against min(rated, alpha * P_norm(v)).
double cap_loss(std::span<const double> power_kw, std::span<const double> wind_ms, const PhysicsEnvelope& env);
/// Ramp hinge on a kW series against the envelope's R_up / R_down.
double ramp_loss(std::span<const double> power_kw, const PhysicsEnvelope& env);

double total_loss(double ce, double cap, double ramp, double tv, const LossWeights& w);

/// Shared feasibility predicates; decoding and the violation metric use the
/// same floating-point expressions so "feasible by construction" holds exactly.
inline bool exceeds_cap(double p, double cap) { return p > cap; }
inline bool breaks_ramp(double prev, double cur, double up, double down) {
    return cur - prev > up || prev - cur > down;
}

}  // namespace icegen
