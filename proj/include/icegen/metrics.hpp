#pragma once

#include "icegen/power_curve.hpp"
#include "icegen/sampler.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace icegen {

/// Ensemble CRPS: mean|X - y| - 0.5 * mean|X - X'| over all sample pairs.
double crps_ensemble(std::span<const double> samples, double observed);

/// Mean per-step CRPS of a scenario set against the realized trajectory, in
/// units of rated power.
double crps_trajectory(const ScenarioSet& set, std::span<const double> truth_kw);

/// KL(reference || generated) between fixed-bin histograms on [0, 1] with
/// epsilon smoothing. Inputs are normalized power values; out-of-range values
/// land in the edge bins.
double kld_histogram(std::span<const double> generated, std::span<const double> reference, std::size_t bins = 50,
                     double epsilon = 1e-6);

enum class LimitKind { Strict, Relaxed };

struct ViolationCount {
    std::size_t checks = 0;
    std::size_t failures = 0;
    std::size_t cap_failures = 0;
    std::size_t ramp_failures = 0;
    double percent() const { return checks == 0 ? 0.0 : 100.0 * static_cast<double>(failures) / static_cast<double>(checks); }
    ViolationCount& operator+=(const ViolationCount& o);
};

/// Cap checked at every step, ramp at every consecutive pair within the
/// horizon. Strict uses the directional ramp limits, relaxed the symmetric
/// tolerance. `alpha` defaults to the envelope's.
ViolationCount count_violations(const ScenarioSet& set, const PhysicsEnvelope& env, LimitKind kind);
ViolationCount count_violations(const ScenarioSet& set, const PhysicsEnvelope& env, LimitKind kind, double alpha,
                                double relaxed_ramp_kw);
double violation_rate(const ScenarioSet& set, const PhysicsEnvelope& env, LimitKind kind);

/// Mean over steps of the across-scenario population standard deviation,
/// normalized by rated power.
double diversity_score(const ScenarioSet& set);

/// Percent of decoding steps where projection-back replaced the sample.
double projection_rate(const ScenarioSet& set);

struct EvalReport {
    std::size_t windows = 0;
    std::size_t scenarios = 0;
    std::size_t horizon = 0;
    double crps = 0.0;
    double kld = 0.0;
    double vr_strict = 0.0;
    double vr_relaxed = 0.0;
    double diversity = 0.0;
    double projection = 0.0;
    std::size_t warnings = 0;
    ViolationCount strict;
    ViolationCount relaxed;
};

/// Aggregates over decode windows: CRPS and diversity are averaged per
/// window, KLD pools all generated and realized values, violation and
/// projection rates pool their counts.
EvalReport evaluate(std::span<const ScenarioSet> sets, std::span<const std::vector<double>> truths_kw,
                    const PhysicsEnvelope& env, std::size_t kld_bins = 50);

}  // namespace icegen
