#include "icegen/physics.hpp"

#include "icegen/error.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace icegen {

void LossWeights::validate() const {
    if (!(lambda_cap >= 0.0) || !(lambda_ramp >= 0.0) || !(lambda_tv >= 0.0))
        throw ValidationError("loss weights must be non-negative");
    if (!(delta > 0.0)) throw ValidationError("Huber threshold must be positive");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ValidationError("alpha must lie in (0, 1]");
}

double cap_loss_norm(std::span<const double> p, std::span<const double> cap, std::span<double> grad) {
    if (p.size() != cap.size()) throw ShapeError("cap loss: series lengths differ");
    if (p.empty()) throw ShapeError("cap loss: empty series");
    const double inv = 1.0 / static_cast<double>(p.size());
    double sum = 0.0;
    for (std::size_t t = 0; t < p.size(); ++t) {
        const double excess = p[t] - cap[t];
        if (excess > 0.0) sum += excess;
        if (!grad.empty()) grad[t] = excess > 0.0 ? inv : 0.0;
    }
    return sum * inv;
}

double ramp_loss_norm(std::span<const double> p, double up, double down, std::span<double> grad) {
    if (p.size() < 2) throw ShapeError("ramp loss: need at least 2 steps");
    const double inv = 1.0 / static_cast<double>(p.size());
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
    double sum = 0.0;
    for (std::size_t t = 1; t < p.size(); ++t) {
        const double d = p[t] - p[t - 1];
        const double over_up = d - up;
        const double over_down = -d - down;
        double g = 0.0;  // d(term)/d(d)
        if (over_up > 0.0) {
            sum += over_up * over_up;
            g += 2.0 * over_up;
        }
        if (over_down > 0.0) {
            sum += over_down * over_down;
            g -= 2.0 * over_down;
        }
        if (!grad.empty()) {
            grad[t] += g * inv;
            grad[t - 1] -= g * inv;
        }
    }
    return sum * inv;
}

double huber(double z, double delta) {
    const double a = std::abs(z);
    return a <= delta ? 0.5 * z * z : delta * (a - 0.5 * delta);
}

double huber_derivative(double z, double delta) {
    return std::abs(z) <= delta ? z : (z > 0.0 ? delta : -delta);
}

double tv_loss(std::span<const double> p, double delta, std::span<double> grad) {
    if (p.size() < 2) throw ShapeError("tv loss: need at least 2 steps");
    if (!(delta > 0.0)) throw ValidationError("Huber threshold must be positive");
    const double inv = 1.0 / static_cast<double>(p.size());
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
    double sum = 0.0;
    for (std::size_t t = 1; t < p.size(); ++t) {
        const double z = p[t] - p[t - 1];
        sum += huber(z, delta);
        if (!grad.empty()) {
            const double g = huber_derivative(z, delta) * inv;
            grad[t] += g;
            grad[t - 1] -= g;
        }
    }
    return sum * inv;
}

double cap_loss(std::span<const double> power_kw, std::span<const double> wind_ms, const PhysicsEnvelope& env) {
    if (power_kw.size() != wind_ms.size()) throw ShapeError("cap loss: power and wind lengths differ");
    std::vector<double> p(power_kw.size()), cap(power_kw.size());
    for (std::size_t t = 0; t < p.size(); ++t) {
        p[t] = power_kw[t] / env.rated_kw;
        cap[t] = cap_kw(env, wind_ms[t]) / env.rated_kw;
    }
    return cap_loss_norm(p, cap);
}

double ramp_loss(std::span<const double> power_kw, const PhysicsEnvelope& env) {
    std::vector<double> p(power_kw.size());
    for (std::size_t t = 0; t < p.size(); ++t) p[t] = power_kw[t] / env.rated_kw;
    return ramp_loss_norm(p, env.ramp_up_kw / env.rated_kw, env.ramp_down_kw / env.rated_kw);
}

double total_loss(double ce, double cap, double ramp, double tv, const LossWeights& w) {
    return ce + w.lambda_cap * cap + w.lambda_ramp * ramp + w.lambda_tv * tv;
}

}  // namespace icegen
