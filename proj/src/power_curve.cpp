#include "icegen/power_curve.hpp"

#include "icegen/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace icegen {

namespace {

double logistic(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

using Vec4 = Eigen::Vector4d;

PowerCurve with_params(const PowerCurve& base, const Vec4& p) {
    PowerCurve c = base;
    c.low_kw = p[0];
    c.high_kw = p[1];
    c.midpoint_ms = p[2];
    c.scale_ms = p[3];
    return c;
}

}  // namespace

double PowerCurve::raw(double wind_ms) const {
    return low_kw + (high_kw - low_kw) * logistic((wind_ms - midpoint_ms) / scale_ms);
}

void PhysicsEnvelope::validate() const {
    if (!(rated_kw > 0.0)) throw ValidationError("envelope: rated power must be positive");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ValidationError("envelope: alpha must lie in (0, 1]");
    if (!(ramp_up_kw > 0.0 && ramp_down_kw > 0.0)) throw ValidationError("envelope: ramp limits must be positive");
    if (!(relaxed_ramp_kw >= std::max(ramp_up_kw, ramp_down_kw)))
        throw ValidationError("envelope: relaxed tolerance below the ramp limits");
    if (!(curve.scale_ms > 0.0) || !(curve.high_kw > curve.low_kw))
        throw ValidationError("envelope: curve parameters invalid");
}

double curve_sse(const PowerCurve& curve, std::span<const double> wind_ms, std::span<const double> power_kw) {
    double sse = 0.0;
    for (std::size_t i = 0; i < wind_ms.size(); ++i) {
        const double r = curve.raw(wind_ms[i]) - power_kw[i];
        sse += r * r;
    }
    return sse;
}

PowerCurve fit_power_curve(std::span<const double> wind, std::span<const double> power, double rated_kw,
                           const FitOptions& options) {
    if (wind.size() != power.size()) throw ShapeError("wind and power lengths differ");
    if (wind.size() < 50) throw InsufficientDataError("power-curve fit needs at least 50 rows");
    const auto [wmin, wmax] = std::minmax_element(wind.begin(), wind.end());
    if (*wmax - *wmin < 1e-9) throw FitError("all wind speeds identical");

    PowerCurve base;
    base.rated_kw = rated_kw;

    // Data-driven start: tail percentiles for the plateaus, first crossing of their mean for v0.
    std::vector<double> pw(power.begin(), power.end());
    const double a0 = percentile(pw, 0.05);
    const double b0 = percentile(pw, 0.95);
    if (!(b0 > a0)) throw FitError("power has no spread between its 5th and 95th percentiles");
    std::vector<std::size_t> order(wind.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return wind[i] < wind[j]; });
    const double mid = 0.5 * (a0 + b0);
    double v00 = wind[order.back()];
    for (std::size_t i : order) {
        if (power[i] >= mid) {
            v00 = wind[i];
            break;
        }
    }

    Vec4 p(a0, b0, v00, 1.0);
    const std::size_t n = wind.size();
    Eigen::MatrixXd J(n, 4);
    Eigen::VectorXd r(n);

    auto evaluate = [&](const Vec4& q, bool jacobian) {
        double sse = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double z = (wind[i] - q[2]) / q[3];
            const double sg = logistic(z);
            const double val = q[0] + (q[1] - q[0]) * sg;
            r[static_cast<Eigen::Index>(i)] = val - power[i];
            sse += r[static_cast<Eigen::Index>(i)] * r[static_cast<Eigen::Index>(i)];
            if (jacobian) {
                const double dsg = sg * (1.0 - sg);
                const auto row = static_cast<Eigen::Index>(i);
                J(row, 0) = 1.0 - sg;
                J(row, 1) = sg;
                J(row, 2) = -(q[1] - q[0]) * dsg / q[3];
                J(row, 3) = -(q[1] - q[0]) * dsg * z / q[3];
            }
        }
        return sse;
    };

    // Levenberg-Marquardt from `p`; with `pin_low` the low plateau stays fixed.
    auto solve = [&](Vec4& p, bool pin_low, std::size_t& iter) {
        double cost = evaluate(p, true);
        if (options.cost_trace) options.cost_trace->push_back(cost);
        double lambda = 1e-3;
        bool converged = false;
        for (iter = 0; iter < options.max_iterations; ++iter) {
            Eigen::Matrix4d JtJ = J.transpose() * J;
            Vec4 g = J.transpose() * r;
            if (pin_low) {
                JtJ.row(0).setZero();
                JtJ.col(0).setZero();
                JtJ(0, 0) = 1.0;
                g[0] = 0.0;
            }
            if (g.cwiseAbs().maxCoeff() <= 1e-14 * std::max(1.0, cost)) {
                converged = true;
                break;
            }
            bool accepted = false;
            while (lambda < 1e16) {
                Eigen::Matrix4d A = JtJ;
                for (int k = 0; k < 4; ++k) A(k, k) += lambda * std::max(JtJ(k, k), 1e-12);
                const Vec4 step = A.ldlt().solve(-g);
                const Vec4 trial = p + step;
                if (!(trial[3] > 0.0) || !trial.allFinite()) {
                    lambda *= 10.0;
                    continue;
                }
                const double trial_cost = evaluate(trial, false);
                if (trial_cost <= cost) {
                    const double rel = (cost - trial_cost) / std::max(cost, 1e-300);
                    const double step_rel = (step.cwiseAbs().array() / (p.cwiseAbs().array() + 1e-8)).maxCoeff();
                    p = trial;
                    cost = evaluate(p, true);
                    if (options.cost_trace) options.cost_trace->push_back(cost);
                    lambda = std::max(lambda / 10.0, 1e-12);
                    accepted = true;
                    if (rel < options.tolerance && step_rel < 1e-10) converged = true;
                    break;
                }
                lambda *= 10.0;
            }
            if (!accepted) {
                // No descent direction left at any damping: stationary to working precision.
                converged = true;
                break;
            }
            if (converged) break;
        }
        return converged;
    };

    std::size_t iter = 0;
    bool converged = solve(p, false, iter);
    if (p[0] < 0.0) {
        // The low plateau must be non-negative: refit on the boundary.
        p[0] = 0.0;
        std::size_t more = 0;
        if (options.cost_trace) options.cost_trace->clear();
        converged = solve(p, true, more);
        iter += more;
    }

    if (!(p[1] > p[0])) throw FitError("fitted curve is not increasing");
    PowerCurve c = with_params(base, p);
    c.converged = converged;
    c.iterations = iter;
    c.rmse_kw = std::sqrt(curve_sse(c, wind, power) / static_cast<double>(n));
    return c;
}

PowerCurve fit_power_curve(const SeriesFrame& frame, const FitOptions& options) {
    return fit_power_curve(frame[Channel::WindSpeed], frame[Channel::Power], frame.rated_power_kw, options);
}

double eval_curve(const PowerCurve& curve, double wind_ms) {
    return std::clamp(curve.raw(wind_ms), 0.0, curve.rated_kw);
}

namespace {

double nearest_rank(std::vector<double>& v, double q) {
    std::sort(v.begin(), v.end());
    auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
    rank = std::clamp<std::size_t>(rank, 1, v.size());
    return v[rank - 1];
}

RampLimits ramp_quantiles(std::vector<double>& ups, std::vector<double>& downs, double rated, double q) {
    const double floor_kw = 1e-6 * rated;
    RampLimits out{floor_kw, floor_kw};
    if (!ups.empty()) out.up_kw = std::max(floor_kw, nearest_rank(ups, q));
    if (!downs.empty()) out.down_kw = std::max(floor_kw, nearest_rank(downs, q));
    return out;
}

void check_quantile(double q) {
    if (!(q > 0.5 && q < 1.0)) throw ValidationError("ramp quantile must lie in (0.5, 1)");
}

}  // namespace

RampLimits estimate_ramp_limits(const SeriesFrame& frame, double quantile) {
    check_quantile(quantile);
    const auto& p = frame[Channel::Power];
    std::vector<double> ups, downs;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i + 1 < frame.size(); ++i) {
        if (!frame.contiguous(i)) continue;
        ++pairs;
        const double d = p[i + 1] - p[i];
        if (d > 0.0) ups.push_back(d);
        else if (d < 0.0) downs.push_back(-d);
    }
    if (pairs < 100) throw InsufficientDataError("ramp estimation needs at least 100 consecutive pairs");
    return ramp_quantiles(ups, downs, frame.rated_power_kw, quantile);
}

RampLimits estimate_ramp_limits(std::span<const double> power, double rated_kw, double quantile) {
    check_quantile(quantile);
    if (power.size() < 101) throw InsufficientDataError("ramp estimation needs at least 100 consecutive pairs");
    std::vector<double> ups, downs;
    for (std::size_t i = 0; i + 1 < power.size(); ++i) {
        const double d = power[i + 1] - power[i];
        if (d > 0.0) ups.push_back(d);
        else if (d < 0.0) downs.push_back(-d);
    }
    return ramp_quantiles(ups, downs, rated_kw, quantile);
}

PhysicsEnvelope make_envelope(const PowerCurve& curve, const RampLimits& ramps, double alpha, double relaxed_factor) {
    if (!(relaxed_factor >= 1.0)) throw ValidationError("relaxed ramp factor must be >= 1");
    PhysicsEnvelope env;
    env.rated_kw = curve.rated_kw;
    env.curve = curve;
    env.alpha = alpha;
    env.ramp_up_kw = ramps.up_kw;
    env.ramp_down_kw = ramps.down_kw;
    env.relaxed_ramp_kw = relaxed_factor * std::max(ramps.up_kw, ramps.down_kw);
    env.validate();
    return env;
}

double cap_kw(const PhysicsEnvelope& env, double alpha, double wind_ms) {
    return std::min(env.rated_kw, alpha * eval_curve(env.curve, wind_ms));
}

}  // namespace icegen
