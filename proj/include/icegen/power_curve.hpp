#pragma once

#include "icegen/series.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace icegen {

/// Four-parameter logistic baseline P(v) = a + (b - a) / (1 + exp(-(v - v0) / s)).
struct PowerCurve {
    double low_kw = 0.0;       // a
    double high_kw = 0.0;      // b
    double midpoint_ms = 0.0;  // v0
    double scale_ms = 1.0;     // s
    double rated_kw = 0.0;     // evaluation is clipped to [0, rated]
    double rmse_kw = 0.0;
    bool converged = true;
    std::size_t iterations = 0;

    /// Unclipped logistic value.
    double raw(double wind_ms) const;
};

/// Rated cap, baseline curve and ramp limits shared by training losses and decoding.
struct PhysicsEnvelope {
    double rated_kw = 0.0;
    PowerCurve curve;
    double alpha = 1.0;          // safety margin on the baseline, in (0, 1]
    double ramp_up_kw = 0.0;     // per step
    double ramp_down_kw = 0.0;   // per step
    double relaxed_ramp_kw = 0.0;

    void validate() const;
};

struct FitOptions {
    std::size_t max_iterations = 200;
    double tolerance = 1e-14;  // relative change in the objective
    /// When set, receives the objective at the start and after every accepted step.
    std::vector<double>* cost_trace = nullptr;
};

/// Damped Gauss-Newton (Levenberg-Marquardt) least squares fit of the
/// logistic curve to (wind, power) pairs of a non-icing frame.
PowerCurve fit_power_curve(const SeriesFrame& non_icing, const FitOptions& options = {});
PowerCurve fit_power_curve(std::span<const double> wind_ms, std::span<const double> power_kw, double rated_kw,
                           const FitOptions& options = {});

/// Sum of squared residuals of `curve` (unclipped) on the data.
double curve_sse(const PowerCurve& curve, std::span<const double> wind_ms, std::span<const double> power_kw);

/// Logistic value clipped to [0, rated].
double eval_curve(const PowerCurve& curve, double wind_ms);

struct RampLimits {
    double up_kw = 0.0;
    double down_kw = 0.0;
};

/// Nearest-rank quantile of the positive increments and of the decrement
/// magnitudes over contiguous row pairs. Both are floored at 1e-6 * rated.
RampLimits estimate_ramp_limits(const SeriesFrame& frame, double quantile = 0.99);
RampLimits estimate_ramp_limits(std::span<const double> power_kw, double rated_kw, double quantile = 0.99);

PhysicsEnvelope make_envelope(const PowerCurve& curve, const RampLimits& ramps, double alpha = 1.0,
                              double relaxed_factor = 1.5);

/// Cap used by losses, pruning and violation checks: min(rated, alpha * P_norm(v)).
double cap_kw(const PhysicsEnvelope& env, double alpha, double wind_ms);
inline double cap_kw(const PhysicsEnvelope& env, double wind_ms) { return cap_kw(env, env.alpha, wind_ms); }

}  // namespace icegen
