#include "icegen/metrics.hpp"

#include "icegen/error.hpp"
#include "icegen/physics.hpp"

#include <algorithm>
#include <cmath>

namespace icegen {

double crps_ensemble(std::span<const double> x, double y) {
    if (x.empty()) throw ShapeError("CRPS needs at least one sample");
    const auto n = static_cast<double>(x.size());
    double a = 0.0;
    for (double v : x) a += std::abs(v - y);
    // Pairwise term from sorted order: sum_{i<j} (x_j - x_i).
    std::vector<double> s(x.begin(), x.end());
    std::sort(s.begin(), s.end());
    double pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) pairs += (2.0 * static_cast<double>(i) - n + 1.0) * s[i];
    return a / n - pairs / (n * n);
}

double crps_trajectory(const ScenarioSet& set, std::span<const double> truth) {
    if (truth.size() != set.horizon) throw ShapeError("truth length differs from the horizon");
    if (!(set.rated_kw > 0.0)) throw ValidationError("scenario set has no rated power");
    std::vector<double> column(set.scenarios);
    double sum = 0.0;
    for (std::size_t h = 0; h < set.horizon; ++h) {
        for (std::size_t m = 0; m < set.scenarios; ++m) column[m] = set.at(m, h) / set.rated_kw;
        sum += crps_ensemble(column, truth[h] / set.rated_kw);
    }
    return sum / static_cast<double>(set.horizon);
}

namespace {

std::vector<double> histogram(std::span<const double> v, std::size_t bins, double eps) {
    std::vector<double> h(bins, 0.0);
    for (double x : v) {
        const double c = std::clamp(x, 0.0, 1.0);
        auto b = static_cast<std::size_t>(c * static_cast<double>(bins));
        h[std::min(b, bins - 1)] += 1.0;
    }
    double total = 0.0;
    for (double& x : h) {
        x = x / static_cast<double>(v.size()) + eps;
        total += x;
    }
    for (double& x : h) x /= total;
    return h;
}

}  // namespace

double kld_histogram(std::span<const double> gen, std::span<const double> ref, std::size_t bins, double eps) {
    if (gen.empty() || ref.empty()) throw ShapeError("KLD needs non-empty samples");
    if (bins < 2) throw ValidationError("KLD needs at least two bins");
    const auto p = histogram(ref, bins, eps);
    const auto q = histogram(gen, bins, eps);
    double d = 0.0;
    for (std::size_t i = 0; i < bins; ++i) d += p[i] * std::log(p[i] / q[i]);
    return d;
}

ViolationCount& ViolationCount::operator+=(const ViolationCount& o) {
    checks += o.checks;
    failures += o.failures;
    cap_failures += o.cap_failures;
    ramp_failures += o.ramp_failures;
    return *this;
}

ViolationCount count_violations(const ScenarioSet& set, const PhysicsEnvelope& env, LimitKind kind, double alpha,
                                double relaxed) {
    if (set.wind_ms.size() != set.horizon) throw ShapeError("scenario set lacks horizon wind speeds");
    const double up = kind == LimitKind::Strict ? env.ramp_up_kw : relaxed;
    const double down = kind == LimitKind::Strict ? env.ramp_down_kw : relaxed;
    std::vector<double> caps(set.horizon);
    for (std::size_t h = 0; h < set.horizon; ++h) caps[h] = cap_kw(env, alpha, set.wind_ms[h]);
    ViolationCount c;
    for (std::size_t m = 0; m < set.scenarios; ++m) {
        for (std::size_t h = 0; h < set.horizon; ++h) {
            ++c.checks;
            if (exceeds_cap(set.at(m, h), caps[h])) {
                ++c.failures;
                ++c.cap_failures;
            }
            if (h == 0) continue;
            ++c.checks;
            if (breaks_ramp(set.at(m, h - 1), set.at(m, h), up, down)) {
                ++c.failures;
                ++c.ramp_failures;
            }
        }
    }
    return c;
}

ViolationCount count_violations(const ScenarioSet& set, const PhysicsEnvelope& env, LimitKind kind) {
    return count_violations(set, env, kind, env.alpha, env.relaxed_ramp_kw);
}

double violation_rate(const ScenarioSet& set, const PhysicsEnvelope& env, LimitKind kind) {
    return count_violations(set, env, kind).percent();
}

double diversity_score(const ScenarioSet& set) {
    if (set.scenarios < 2 || set.horizon == 0) throw ShapeError("diversity needs at least two scenarios");
    double sum = 0.0;
    for (std::size_t h = 0; h < set.horizon; ++h) {
        double mean = 0.0;
        for (std::size_t m = 0; m < set.scenarios; ++m) mean += set.at(m, h);
        mean /= static_cast<double>(set.scenarios);
        double var = 0.0;
        for (std::size_t m = 0; m < set.scenarios; ++m) var += (set.at(m, h) - mean) * (set.at(m, h) - mean);
        sum += std::sqrt(var / static_cast<double>(set.scenarios));
    }
    return sum / static_cast<double>(set.horizon) / set.rated_kw;
}

double projection_rate(const ScenarioSet& set) {
    if (set.projected.empty()) return 0.0;
    const auto n = std::count(set.projected.begin(), set.projected.end(), std::uint8_t{1});
    return 100.0 * static_cast<double>(n) / static_cast<double>(set.projected.size());
}

EvalReport evaluate(std::span<const ScenarioSet> sets, std::span<const std::vector<double>> truths,
                    const PhysicsEnvelope& env, std::size_t kld_bins) {
    if (sets.empty()) throw ShapeError("nothing to evaluate");
    if (sets.size() != truths.size()) throw ShapeError("one realized trajectory is needed per scenario set");
    EvalReport r;
    r.windows = sets.size();
    r.scenarios = sets.front().scenarios;
    r.horizon = sets.front().horizon;
    std::vector<double> gen, ref;
    std::size_t projected = 0, steps = 0;
    for (std::size_t w = 0; w < sets.size(); ++w) {
        const ScenarioSet& s = sets[w];
        r.crps += crps_trajectory(s, truths[w]);
        r.diversity += diversity_score(s);
        for (double v : s.power_kw) gen.push_back(v / s.rated_kw);
        for (double v : truths[w]) ref.push_back(v / s.rated_kw);
        r.strict += count_violations(s, env, LimitKind::Strict);
        r.relaxed += count_violations(s, env, LimitKind::Relaxed);
        projected += static_cast<std::size_t>(std::count(s.projected.begin(), s.projected.end(), std::uint8_t{1}));
        steps += s.projected.size();
        r.warnings += static_cast<std::size_t>(std::count(s.warnings.begin(), s.warnings.end(), std::uint8_t{1}));
    }
    r.crps /= static_cast<double>(sets.size());
    r.diversity /= static_cast<double>(sets.size());
    r.kld = kld_histogram(gen, ref, kld_bins);
    r.vr_strict = r.strict.percent();
    r.vr_relaxed = r.relaxed.percent();
    r.projection = steps == 0 ? 0.0 : 100.0 * static_cast<double>(projected) / static_cast<double>(steps);
    return r;
}

}  // namespace icegen
